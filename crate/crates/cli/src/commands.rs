//! Command implementations.

use arw_core::couplings::{
    crucial_coupling_check, outer_decomposition_check, smp_probe, CouplingVerdict, DecompositionVerdict, StopRule,
};
use arw_core::densities::{
    estimate_aggregate, estimate_inner, estimate_outer, run_chain, OuterRule, WindowSchedule, ENV_STREAM,
};
use arw_core::engine::{trap_constant, trap_stabilize};
use arw_core::idla::{
    martingale, run_killed_idla, run_percolated_idla, run_point_idla, sample_killed_idla, sample_percolated_idla,
    sample_point_idla, trace_csv, ClusterTrace,
};
use arw_core::stats::{chi_square, mean, std_err};
use arw_core::trials::run_trials;
use arw_core::{
    default_step_cap, derive_trial_seed, stabilize, Configuration, FiringPolicy, InstructionSource, Interval, LawTable,
    PercolationEnv, Region, Site, SleepRate, StabilizationResult, Status,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::output::{Outcome, Table};
use crate::{CliError, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    AbelianCheck,
    LeastActionCheck,
    SmpCheck,
    Spread,
    Inner,
    Outer,
    Chain,
    IdlaShape,
    IdlaFill,
    PercolatedIdla,
    Couple,
    Decompose,
    TrapOdometer,
}

impl Experiment {
    pub const ALL: [Experiment; 13] = [
        Experiment::AbelianCheck,
        Experiment::LeastActionCheck,
        Experiment::SmpCheck,
        Experiment::Spread,
        Experiment::Inner,
        Experiment::Outer,
        Experiment::Chain,
        Experiment::IdlaShape,
        Experiment::IdlaFill,
        Experiment::PercolatedIdla,
        Experiment::Couple,
        Experiment::Decompose,
        Experiment::TrapOdometer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AbelianCheck => "abelian-check",
            Experiment::LeastActionCheck => "least-action-check",
            Experiment::SmpCheck => "smp-check",
            Experiment::Spread => "spread",
            Experiment::Inner => "inner",
            Experiment::Outer => "outer",
            Experiment::Chain => "chain",
            Experiment::IdlaShape => "idla-shape",
            Experiment::IdlaFill => "idla-fill",
            Experiment::PercolatedIdla => "percolated-idla",
            Experiment::Couple => "couple",
            Experiment::Decompose => "decompose",
            Experiment::TrapOdometer => "trap-odometer",
        }
    }

    pub fn from_name(name: &str) -> Option<Experiment> {
        Experiment::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// CSV schemas, shown in `--help`.
pub mod help {
    pub const ABELIAN: &str = "\
Keys: instances (200), max_particles (20), radius (10), lambdas (0.5,1,2), cap, seed.
Each instance draws a rate, a region (whole line, or a killed interval inside
[-radius, radius]) and up to max_particles particles, then stabilizes twice
under two random firing orders.
trials.csv: trial,seed,lambda,region,particles,odometer_total,steps_a,steps_b,verdict
  verdict: match | mismatch | capped; mismatch exits 2.
summary.csv: instances,matches,mismatches,capped";

    pub const LEAST_ACTION: &str = "\
Keys: n (200), lambda (1), trials (100), c_lambda (1.75/ln(1+lambda)), cap, seed.
trials.csv: trial,seed,legal_total,trap_total,spacing,grid_total,pointwise,verdict
  verdict: ok | violated | capped; violated exits 2.
summary.csv: trials,ok,violated,capped,mean_legal_total,mean_trap_total";

    pub const SMP: &str = "\
Keys: rule (stabilize | nothing | adversarial), n (20), lambda (1), trials (10000),
probes (0), m (1), cap, seed.
trials.csv: trial,seed,probe,j,instruction   (instruction: s | L | R)
summary.csv: rule,lambda,trials,sleep,left,right,chi2,df,p_value,pass   (pass: p > 0.01)";

    pub const SPREAD: &str = "\
Keys: n (1000), lambda (1), trials (100), cap, seed, dump (false).
trials.csv: trial,seed,size,left,right,total,interval_ok,capped
  size = #A_n, the number of fired sites; [left, right] spans them.
  A fired set that is not an interval around 0 exits 2.
summary.csv: n,trials,flagged,mean_size,sd_size,zeta_agg_hat,sigma,mean_left,mean_right,max_extent,interval_failures
--dump writes dumps/trial_<k>_config.tsv and dumps/trial_<k>_odometer.tsv.";

    pub const INNER: &str = "\
Keys: interval (256), lambda (1), trials (10000), q (0.001), cap, seed.
trials.csv: trial,seed,survivors,density,steps,capped
summary.csv: interval_size,trials,flagged,mean_density,std_err,quantile_level,zeta_in_hat,sigma";

    pub const OUTER: &str = "\
Keys: lambda (1), grid (0.05,0.10,...,0.95), trials (1000), l0 (64), l_max (1024),
tail_fraction (0.05), exponent_threshold (3), max_nonconvergence (0.01), cap, seed.
trials.csv: zeta,trial,seed,env_seed,converged,w0,final_window
  w0 is empty when the window schedule did not converge. A grid point stops
  early once its non-converged count already exceeds max_nonconvergence * trials.
points.csv: zeta,trials,converged,nonconvergence,mean_w0,third_moment,tail_exponent,accepted
summary.csv: lambda,grid_points,zeta_out_hat,sigma,downward_violations";

    pub const CHAIN: &str = "\
Keys: interval (64), lambda (1), v (0, the centre), burn_in (10 #I), steps (100000), trials (1), cap, seed.
The interval is centred: #I sites starting at -(#I-1)/2.
trials.csv: trial,seed,v,density,first_half,second_half,half_gap
summary.csv: interval_size,v,trials,mean_density,std_err,max_half_gap";

    pub const IDLA_SHAPE: &str = "\
Keys: n (10000), trials (200), method (exit-law | replay), lambda (1, replay only),
shape_exponent (0.6), trace (false), seed.
trials.csv: trial,seed,a_n,b_n,m_n,within   (A_n = [-a_n, b_n]; within: |b_n - n/2| <= n^e)
summary.csv: n,trials,within_fraction,mean_m,se_m
--trace writes traces/trial_<k>.csv with columns k,a_k,b_k,M_k.";

    pub const IDLA_FILL: &str = "\
Keys: n (10000), epsilon (0.1), trials (200), method (exit-law | replay), lambda (1, replay only), seed.
I = [-r, r] with r = floor(n (1 - epsilon) / 2).
trials.csv: trial,seed,filled,kills,lo,hi   ([lo, hi] is the occupied interval)
summary.csv: n,radius,trials,fill_fraction";

    pub const PERCOLATED: &str = "\
Keys: n (10000), zeta (0.5), epsilon (0.1), trials (200), method (exit-law | replay), lambda (1, replay only), seed.
trials.csv: trial,seed,env_seed,settled_count,fired_lo,fired_hi,settled_lo,settled_hi,inner_ok,outer_ok
  inner_ok: B_{floor(n(1-eps)/(2 zeta))} lies in the fired set;
  outer_ok: the fired set lies in B_{ceil(n(1+eps)/(2 zeta))}.
  A settled count other than n exits 2.
summary.csv: n,zeta,trials,inner_radius,outer_radius,inner_fraction,outer_fraction,both_fraction,exact_count_fraction";

    pub const COUPLE: &str = "\
Keys: n (100), radius (n/4), lambda (1), trials (200), cap, seed.
trials.csv: seed,verdict,l,r,detail
  verdict: exact-match | event-failed | mismatch | capped; detail lists mismatched sites.
  Any mismatch exits 2.
summary.csv: n,radius,trials,exact_match,event_failed,mismatch,capped";

    pub const DECOMPOSE: &str = "\
Keys: n (500), zeta (0.25), lambda (1), trials (100), window (10000), max_window (8 window),
epsilon (0.1), cap, seed.
trials.csv: trial,seed,env_seed,verdict,window,v_lo,v_hi,support_ok,detail
  verdict: dominated | window-too-small | violated | capped; violated exits 2.
  support_ok: the fired set of v_n lies in B_{ceil(n(1+eps)/(2 zeta))}.
summary.csv: n,zeta,trials,dominated,window_too_small,violated,capped,support_fraction";

    pub const TRAP: &str = "\
Keys: n (100), lambda (1), trials (100), c_lambda (1.75/ln(1+lambda)), cap, seed.
trials.csv: trial,seed,total,spacing,grid_total,exceeds_n4,capped
summary.csv: n,trials,capped,mean_total,max_total,exceed_fraction";
}

struct Resolver {
    p: Params,
    used: Vec<&'static str>,
}

macro_rules! getters {
    ($($f:ident : $t:ty),* $(,)?) => {
        impl Resolver {
            $(
                fn $f(&mut self, default: $t) -> $t {
                    self.used.push(stringify!($f));
                    self.p.$f.get_or_insert(default).clone()
                }
            )*
        }
    };
}

getters!(
    seed: u64, trials: u64, n: u32, lambda: SleepRate, lambdas: Vec<f64>, interval: u64, radius: u64, q: f64,
    zeta: f64, epsilon: f64, grid: Vec<f64>, l0: u64, l_max: u64, tail_fraction: f64, exponent_threshold: f64,
    max_nonconvergence: f64, window: u64, max_window: u64, v: i64, burn_in: u64, steps: u64, probes: Vec<i64>,
    m: u64, rule: String, method: String, c_lambda: f64, instances: u64, max_particles: u32,
    shape_exponent: f64, cap: u64, trace: bool, dump: bool,
);

impl Resolver {
    fn config(&self) -> Map<String, Value> {
        let mut m = self.p.to_json_map();
        m.retain(|k, _| self.used.contains(&k.as_str()) || k == "workers");
        m
    }

    fn unused(&self) -> Vec<String> {
        self.p
            .set_keys()
            .into_iter()
            .filter(|k| !self.used.contains(&k.as_str()) && !matches!(k.as_str(), "workers" | "out"))
            .collect()
    }

    fn finite_lambda(&mut self) -> Result<SleepRate, CliError> {
        let l = self.lambda(SleepRate::new(1.0)?);
        if l.is_infinite() {
            return Err(bad("this command needs a finite lambda"));
        }
        Ok(l)
    }

    fn sampler(&mut self) -> Result<Method, CliError> {
        match self.method("exit-law".into()).as_str() {
            "exit-law" => Ok(Method::ExitLaw),
            "replay" => Ok(Method::Replay),
            m => Err(bad(format!("unknown method {m:?}; expected exit-law or replay"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    ExitLaw,
    Replay,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: u64) -> Result<u64, CliError> {
    if v == 0 {
        return Err(bad(format!("{name} must be positive")));
    }
    Ok(v)
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

struct Parts {
    summary: Table,
    trials: Table,
    extra: Vec<(String, String)>,
    violations: u64,
}

impl Parts {
    fn new(summary: Table, trials: Table, violations: u64) -> Self {
        Parts { summary, trials, extra: Vec::new(), violations }
    }
}

/// Run `experiment` with `params` on `workers` threads. Files are not
/// written.
pub fn run(experiment: Experiment, params: Params, workers: usize) -> Result<Outcome, CliError> {
    let mut r = Resolver { p: params, used: vec!["seed"] };
    r.seed(1);
    let parts = match experiment {
        Experiment::AbelianCheck => abelian(&mut r, workers),
        Experiment::LeastActionCheck => least_action(&mut r, workers),
        Experiment::SmpCheck => smp(&mut r, workers),
        Experiment::Spread => spread(&mut r, workers),
        Experiment::Inner => inner(&mut r, workers),
        Experiment::Outer => outer(&mut r, workers),
        Experiment::Chain => chain(&mut r, workers),
        Experiment::IdlaShape => idla_shape(&mut r, workers),
        Experiment::IdlaFill => idla_fill(&mut r, workers),
        Experiment::PercolatedIdla => percolated(&mut r, workers),
        Experiment::Couple => couple(&mut r, workers),
        Experiment::Decompose => decompose(&mut r, workers),
        Experiment::TrapOdometer => trap(&mut r, workers),
    }?;
    for k in r.unused() {
        eprintln!("warning: {} ignores key {k:?}", experiment.name());
    }
    Ok(Outcome {
        experiment,
        config: r.config(),
        summary: parts.summary,
        trials: parts.trials,
        extra: parts.extra,
        violations: parts.violations,
    })
}

fn conserved(initial: u64, r: &StabilizationResult) -> bool {
    r.final_config.total() + r.kills == initial
}

fn abelian(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let count = r.instances(200);
    let max_p = r.max_particles(20);
    let radius = r.radius(10) as Site;
    let rates: Vec<SleepRate> = r.lambdas(vec![0.5, 1.0, 2.0]).into_iter().map(SleepRate::new).collect::<Result<_, _>>()?;
    if rates.is_empty() || max_p == 0 {
        return Err(bad("need at least one rate and max_particles >= 1"));
    }
    let cap = r.cap(default_step_cap(max_p as u64));
    let rows = run_trials(count, seed, workers, |k, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let rate = rates[rng.random_range(0..rates.len())];
        let region = if rng.random_bool(0.5) {
            let lo = rng.random_range(-radius..=0);
            let hi = rng.random_range(0..=radius);
            Region::Killed(Interval { lo, hi })
        } else {
            Region::WholeLine
        };
        let span = match region {
            Region::Killed(i) => i,
            Region::WholeLine => Interval::ball(radius as u64),
        };
        let particles = rng.random_range(1..=max_p);
        let mut c = Configuration::empty();
        for _ in 0..particles {
            c.add_active(rng.random_range(span.lo..=span.hi), 1);
        }
        let (pa, pb) = (FiringPolicy::Random(rng.random()), FiringPolicy::Random(rng.random()));
        let src = InstructionSource::new(s, rate);
        let a = stabilize(&c, &src, region, pa, cap);
        let b = stabilize(&c, &src, region, pb, cap);
        let verdict = if !a.is_stable() || !b.is_stable() {
            "capped"
        } else if a.odometer == b.odometer
            && a.final_config == b.final_config
            && conserved(particles as u64, &a)
            && conserved(particles as u64, &b)
        {
            "match"
        } else {
            "mismatch"
        };
        let region = match region {
            Region::WholeLine => "Z".to_string(),
            Region::Killed(i) => format!("[{};{}]", i.lo, i.hi),
        };
        vec![
            k.to_string(),
            s.to_string(),
            fmt_f(rate.lambda()),
            region,
            particles.to_string(),
            a.odometer.total().to_string(),
            a.steps.to_string(),
            b.steps.to_string(),
            verdict.to_string(),
        ]
    });
    let mut trials = Table::new(&[
        "trial",
        "seed",
        "lambda",
        "region",
        "particles",
        "odometer_total",
        "steps_a",
        "steps_b",
        "verdict",
    ]);
    let tally = |v: &str| rows.iter().filter(|r| r[8] == v).count() as u64;
    let (matches, mismatches, capped) = (tally("match"), tally("mismatch"), tally("capped"));
    rows.into_iter().for_each(|row| trials.push(row));
    let mut summary = Table::new(&["instances", "matches", "mismatches", "capped"]);
    summary.push(vec![count.to_string(), matches.to_string(), mismatches.to_string(), capped.to_string()]);
    Ok(Parts::new(summary, trials, mismatches))
}

fn least_action(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(200);
    let rate = r.finite_lambda()?;
    let count = r.trials(100);
    let c = r.c_lambda(trap_constant(rate.lambda()));
    let cap = r.cap(u64::MAX);
    let rows = run_trials(count, seed, workers, |k, s| -> Result<Vec<String>, CliError> {
        let src = InstructionSource::new(s, rate);
        let legal = stabilize(&Configuration::point(0, n), &src, Region::WholeLine, FiringPolicy::Lifo, cap);
        let trap = trap_stabilize(n as u64, &src, c, cap)?;
        let pointwise = legal.odometer.le(&trap.result.odometer);
        let (lt, tt) = (legal.odometer.total(), trap.result.odometer.total());
        let verdict = if !legal.is_stable() || !trap.result.is_stable() {
            "capped"
        } else if pointwise && tt >= lt {
            "ok"
        } else {
            "violated"
        };
        Ok(vec![
            k.to_string(),
            s.to_string(),
            lt.to_string(),
            tt.to_string(),
            trap.spacing.to_string(),
            trap.grid_phase_total.to_string(),
            pointwise.to_string(),
            verdict.to_string(),
        ])
    });
    let rows: Vec<Vec<String>> = rows.into_iter().collect::<Result<_, _>>()?;
    let mut trials =
        Table::new(&["trial", "seed", "legal_total", "trap_total", "spacing", "grid_total", "pointwise", "verdict"]);
    let tally = |v: &str| rows.iter().filter(|r| r[7] == v).count() as u64;
    let (ok, violated, capped) = (tally("ok"), tally("violated"), tally("capped"));
    let col_mean = |i: usize| mean(&rows.iter().map(|r| r[i].parse::<f64>().unwrap()).collect::<Vec<_>>());
    let (ml, mt) = (col_mean(2), col_mean(3));
    rows.into_iter().for_each(|row| trials.push(row));
    let mut summary = Table::new(&["trials", "ok", "violated", "capped", "mean_legal_total", "mean_trap_total"]);
    summary.push(vec![
        count.to_string(),
        ok.to_string(),
        violated.to_string(),
        capped.to_string(),
        fmt_f(ml),
        fmt_f(mt),
    ]);
    Ok(Parts::new(summary, trials, violated))
}

fn smp(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let rate = r.lambda(SleepRate::new(1.0)?);
    let rule_name = r.rule("stabilize".into());
    let n = r.n(20);
    let rule = match rule_name.as_str() {
        "nothing" => StopRule::Nothing,
        "stabilize" => StopRule::Stabilize(n),
        "adversarial" => StopRule::Adversarial(n),
        other => return Err(bad(format!("unknown rule {other:?}"))),
    };
    if rule == StopRule::Nothing {
        r.used.retain(|k| *k != "n");
    }
    let count = positive("trials", r.trials(10_000))?;
    let probes = r.probes(vec![0]);
    let m = positive("m", r.m(1))?;
    if probes.is_empty() {
        return Err(bad("need at least one probe site"));
    }
    let cap = r.cap(default_step_cap(n as u64));
    let per_trial = run_trials(count, seed, workers, |_, s| smp_probe(rule, &InstructionSource::new(s, rate), &probes, m, cap));
    let mut trials = Table::new(&["trial", "seed", "probe", "j", "instruction"]);
    let mut table = LawTable::default();
    for (k, res) in per_trial.into_iter().enumerate() {
        let s = derive_trial_seed(seed, k as u64);
        let got = res?;
        for (i, ins) in got.into_iter().enumerate() {
            table.record(ins);
            let sym = match ins {
                arw_core::Instruction::Sleep => "s",
                arw_core::Instruction::StepLeft => "L",
                arw_core::Instruction::StepRight => "R",
            };
            trials.push(vec![
                k.to_string(),
                s.to_string(),
                probes[i / m as usize].to_string(),
                (i as u64 % m + 1).to_string(),
                sym.to_string(),
            ]);
        }
    }
    let p = rate.sleep_probability();
    let q = (1.0 - p) / 2.0;
    let test = chi_square(&table.counts(), &[p, q, q]);
    let (fs, fl, fr) = table.frequencies();
    let lambda = if rate.is_infinite() { "inf".to_string() } else { fmt_f(rate.lambda()) };
    let mut summary =
        Table::new(&["rule", "lambda", "trials", "sleep", "left", "right", "chi2", "df", "p_value", "pass"]);
    summary.push(vec![
        rule_name,
        lambda,
        count.to_string(),
        fmt_f(fs),
        fmt_f(fl),
        fmt_f(fr),
        fmt_f(test.statistic),
        test.df.to_string(),
        fmt_f(test.p_value),
        (test.p_value > 0.01).to_string(),
    ]);
    Ok(Parts::new(summary, trials, 0))
}

fn spread(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(1000);
    let rate = r.lambda(SleepRate::new(1.0)?);
    let count = positive("trials", r.trials(100))?;
    let cap = r.cap(default_step_cap(n as u64));
    let dump = r.dump(false);
    let (est, samples) = estimate_aggregate(n, rate, count, seed, workers, cap)?;
    let mut trials = Table::new(&["trial", "seed", "size", "left", "right", "total", "interval_ok", "capped"]);
    for (k, s) in samples.iter().enumerate() {
        trials.push(vec![
            k.to_string(),
            s.seed.to_string(),
            s.size.to_string(),
            s.left.to_string(),
            s.right.to_string(),
            s.total.to_string(),
            s.interval_ok.to_string(),
            s.capped.to_string(),
        ]);
    }
    let mut summary = Table::new(&[
        "n",
        "trials",
        "flagged",
        "mean_size",
        "sd_size",
        "zeta_agg_hat",
        "sigma",
        "mean_left",
        "mean_right",
        "max_extent",
        "interval_failures",
    ]);
    summary.push(vec![
        est.n.to_string(),
        est.trials.to_string(),
        est.flagged.to_string(),
        fmt_f(est.mean_size),
        fmt_f(est.sd_size),
        fmt_f(est.zeta_agg_hat),
        fmt_f(est.sigma),
        fmt_f(est.mean_left),
        fmt_f(est.mean_right),
        est.max_extent.to_string(),
        est.interval_failures.to_string(),
    ]);
    let mut parts = Parts::new(summary, trials, est.interval_failures);
    if dump {
        let dumps = run_trials(count, seed, workers, |k, s| {
            let src = InstructionSource::new(s, rate);
            let res = stabilize(&Configuration::point(0, n), &src, Region::WholeLine, FiringPolicy::Lifo, cap);
            [
                (format!("dumps/trial_{k}_config.tsv"), res.final_config.to_tsv()),
                (format!("dumps/trial_{k}_odometer.tsv"), res.odometer.to_tsv()),
            ]
        });
        parts.extra.extend(dumps.into_iter().flatten());
    }
    Ok(parts)
}

fn inner(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let size = positive("interval", r.interval(256))?;
    let rate = r.finite_lambda()?;
    let count = positive("trials", r.trials(10_000))?;
    let q = r.q(1e-3);
    let cap = r.cap(default_step_cap(size));
    let (est, samples) = estimate_inner(size, rate, count, q, seed, workers, cap)?;
    let mut trials = Table::new(&["trial", "seed", "survivors", "density", "steps", "capped"]);
    for (k, s) in samples.iter().enumerate() {
        trials.push(vec![
            k.to_string(),
            s.seed.to_string(),
            s.survivors.to_string(),
            fmt_f(s.survivors as f64 / size as f64),
            s.steps.to_string(),
            s.capped.to_string(),
        ]);
    }
    let mut summary = Table::new(&[
        "interval_size",
        "trials",
        "flagged",
        "mean_density",
        "std_err",
        "quantile_level",
        "zeta_in_hat",
        "sigma",
    ]);
    summary.push(vec![
        est.interval_size.to_string(),
        est.trials.to_string(),
        est.flagged.to_string(),
        fmt_f(est.mean_density),
        fmt_f(est.std_err),
        fmt_f(est.quantile_level),
        fmt_f(est.zeta_in_hat),
        fmt_f(est.sigma),
    ]);
    Ok(Parts::new(summary, trials, 0))
}

fn default_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

fn outer(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let rate = r.finite_lambda()?;
    let grid = r.grid(default_grid());
    let count = positive("trials", r.trials(1000))?;
    let schedule = WindowSchedule { l0: r.l0(64), l_max: r.l_max(1024) };
    let d = OuterRule::default();
    let rule = OuterRule {
        tail_fraction: r.tail_fraction(d.tail_fraction),
        exponent_threshold: r.exponent_threshold(d.exponent_threshold),
        max_nonconvergence: r.max_nonconvergence(d.max_nonconvergence),
    };
    let cap = r.cap(default_step_cap(2 * schedule.l_max + 1));
    let (est, samples) = estimate_outer(rate, &grid, count, schedule, rule, seed, workers, cap)?;
    let mut trials = Table::new(&["zeta", "trial", "seed", "env_seed", "converged", "w0", "final_window"]);
    for per_zeta in &samples {
        for (k, s) in per_zeta.iter().enumerate() {
            trials.push(vec![
                fmt_f(s.zeta),
                k.to_string(),
                s.seed.to_string(),
                s.env_seed.to_string(),
                s.converged.to_string(),
                fmt_opt(s.w0),
                fmt_opt(s.windows.last()),
            ]);
        }
    }
    let mut points = Table::new(&[
        "zeta",
        "trials",
        "converged",
        "nonconvergence",
        "mean_w0",
        "third_moment",
        "tail_exponent",
        "accepted",
    ]);
    for p in &est.points {
        points.push(vec![
            fmt_f(p.zeta),
            p.trials.to_string(),
            p.converged.to_string(),
            fmt_f(p.nonconvergence),
            fmt_f(p.mean_w0),
            fmt_f(p.third_moment),
            fmt_f(p.tail_exponent),
            p.accepted.to_string(),
        ]);
    }
    let mut summary = Table::new(&["lambda", "grid_points", "zeta_out_hat", "sigma", "downward_violations"]);
    summary.push(vec![
        fmt_f(rate.lambda()),
        grid.len().to_string(),
        fmt_opt(est.zeta_out_hat),
        fmt_f(est.sigma),
        est.downward_violations.iter().map(|z| fmt_f(*z)).collect::<Vec<_>>().join(";"),
    ]);
    let mut parts = Parts::new(summary, trials, 0);
    parts.extra.push(("points.csv".into(), points.to_csv()));
    Ok(parts)
}

fn chain(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let size = positive("interval", r.interval(64))?;
    let interval = Interval::centered(size)?;
    let rate = r.finite_lambda()?;
    let v = r.v(0);
    if !interval.contains(v) {
        return Err(bad(format!("v = {v} lies outside {interval}")));
    }
    let burn_in = r.burn_in(10 * size);
    let steps = positive("steps", r.steps(100_000))?;
    let count = positive("trials", r.trials(1))?;
    let cap = r.cap(default_step_cap(size));
    let runs = run_trials(count, seed, workers, |_, s| {
        run_chain(interval, v, &InstructionSource::new(s, rate), burn_in, steps, cap)
    });
    let mut trials = Table::new(&["trial", "seed", "v", "density", "first_half", "second_half", "half_gap"]);
    let mut densities = Vec::new();
    let mut max_gap: f64 = 0.0;
    for (k, run) in runs.into_iter().enumerate() {
        let c = run?;
        let gap = (c.first_half - c.second_half).abs();
        max_gap = max_gap.max(gap);
        densities.push(c.density);
        trials.push(vec![
            k.to_string(),
            derive_trial_seed(seed, k as u64).to_string(),
            v.to_string(),
            fmt_f(c.density),
            fmt_f(c.first_half),
            fmt_f(c.second_half),
            fmt_f(gap),
        ]);
    }
    let mut summary = Table::new(&["interval_size", "v", "trials", "mean_density", "std_err", "max_half_gap"]);
    summary.push(vec![
        size.to_string(),
        v.to_string(),
        count.to_string(),
        fmt_f(mean(&densities)),
        fmt_f(std_err(&densities)),
        fmt_f(max_gap),
    ]);
    Ok(Parts::new(summary, trials, 0))
}

fn replay_rate(r: &mut Resolver, method: Method) -> Result<SleepRate, CliError> {
    if method == Method::Replay {
        Ok(r.lambda(SleepRate::new(1.0)?))
    } else {
        Ok(SleepRate::infinite())
    }
}

fn idla_shape(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(10_000) as u64;
    let count = positive("trials", r.trials(200))?;
    let method = r.sampler()?;
    let rate = replay_rate(r, method)?;
    let e = r.shape_exponent(0.6);
    let trace = r.trace(false);
    let runs = run_trials(count, seed, workers, |_, s| -> Result<ClusterTrace, CliError> {
        match method {
            Method::ExitLaw => Ok(sample_point_idla(n, s)),
            Method::Replay => Ok(run_point_idla(n, &InstructionSource::new(s, rate))?.0),
        }
    });
    let bound = (n as f64).powf(e);
    let mut trials = Table::new(&["trial", "seed", "a_n", "b_n", "m_n", "within"]);
    let mut parts_extra = Vec::new();
    let (mut within, mut ms) = (0u64, Vec::new());
    for (k, run) in runs.into_iter().enumerate() {
        let t = run?;
        let (a, b) = (*t.a.last().unwrap(), *t.b.last().unwrap());
        let m = *martingale(&t).last().unwrap();
        let ok = (b as f64 - n as f64 / 2.0).abs() <= bound;
        within += u64::from(ok);
        ms.push(m as f64);
        trials.push(vec![
            k.to_string(),
            derive_trial_seed(seed, k as u64).to_string(),
            a.to_string(),
            b.to_string(),
            m.to_string(),
            ok.to_string(),
        ]);
        if trace {
            parts_extra.push((format!("traces/trial_{k}.csv"), trace_csv(&t)));
        }
    }
    let mut summary = Table::new(&["n", "trials", "within_fraction", "mean_m", "se_m"]);
    summary.push(vec![
        n.to_string(),
        count.to_string(),
        fmt_f(within as f64 / count as f64),
        fmt_f(mean(&ms)),
        fmt_f(std_err(&ms)),
    ]);
    let mut parts = Parts::new(summary, trials, 0);
    parts.extra = parts_extra;
    Ok(parts)
}

fn idla_fill(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(10_000) as u64;
    let eps = r.epsilon(0.1);
    if !(0.0..1.0).contains(&eps) {
        return Err(bad("epsilon must lie in [0, 1)"));
    }
    let count = positive("trials", r.trials(200))?;
    let method = r.sampler()?;
    let rate = replay_rate(r, method)?;
    let radius = (n as f64 * (1.0 - eps) / 2.0).floor() as u64;
    let interval = Interval::ball(radius);
    let runs = run_trials(count, seed, workers, |_, s| -> Result<(Option<Interval>, u64), CliError> {
        match method {
            Method::ExitLaw => Ok(sample_killed_idla(n, interval, s)?),
            Method::Replay => {
                let k = run_killed_idla(n, interval, &InstructionSource::new(s, rate))?;
                Ok((k.result.final_config.bounds(), k.result.kills))
            }
        }
    });
    let mut trials = Table::new(&["trial", "seed", "filled", "kills", "lo", "hi"]);
    let mut filled_count = 0u64;
    for (k, run) in runs.into_iter().enumerate() {
        let (occupied, kills) = run?;
        let filled = occupied == Some(interval);
        filled_count += u64::from(filled);
        trials.push(vec![
            k.to_string(),
            derive_trial_seed(seed, k as u64).to_string(),
            filled.to_string(),
            kills.to_string(),
            fmt_opt(occupied.map(|i| i.lo)),
            fmt_opt(occupied.map(|i| i.hi)),
        ]);
    }
    let mut summary = Table::new(&["n", "radius", "trials", "fill_fraction"]);
    summary.push(vec![
        n.to_string(),
        radius.to_string(),
        count.to_string(),
        fmt_f(filled_count as f64 / count as f64),
    ]);
    Ok(Parts::new(summary, trials, 0))
}

fn env_seed(base: u64, k: u64) -> u64 {
    derive_trial_seed(base ^ ENV_STREAM, k)
}

fn zeta_param(r: &mut Resolver, default: f64) -> Result<f64, CliError> {
    let z = r.zeta(default);
    if !(z > 0.0 && z <= 1.0) {
        return Err(bad(format!("zeta must lie in (0, 1], got {z}")));
    }
    Ok(z)
}

struct Extent {
    fired: Option<Interval>,
    settled: Option<Interval>,
    count: u64,
}

fn percolated(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(10_000) as u64;
    let zeta = zeta_param(r, 0.5)?;
    let eps = r.epsilon(0.1);
    let count = positive("trials", r.trials(200))?;
    let method = r.sampler()?;
    let rate = replay_rate(r, method)?;
    let scale = n as f64 / (2.0 * zeta);
    let inner_r = (scale * (1.0 - eps)).floor() as u64;
    let outer_r = (scale * (1.0 + eps)).ceil() as u64;
    let runs = run_trials(count, seed, workers, |k, s| -> Result<Extent, CliError> {
        let env = PercolationEnv::new(zeta, env_seed(seed, k))?;
        match method {
            Method::ExitLaw => {
                let e = sample_percolated_idla(n, &env, s);
                Ok(Extent { fired: e.fired, settled: Some(e.settled), count: e.settled_count })
            }
            Method::Replay => {
                let p = run_percolated_idla(n, &env, &InstructionSource::new(s, rate))?;
                let settled = p.settled.first().map(|&lo| Interval { lo, hi: *p.settled.last().unwrap() });
                Ok(Extent { fired: p.odometer.support(), settled, count: p.settled.len() as u64 })
            }
        }
    });
    let mut trials = Table::new(&[
        "trial",
        "seed",
        "env_seed",
        "settled_count",
        "fired_lo",
        "fired_hi",
        "settled_lo",
        "settled_hi",
        "inner_ok",
        "outer_ok",
    ]);
    let (mut inner_ok_n, mut outer_ok_n, mut both_n, mut exact_n) = (0u64, 0u64, 0u64, 0u64);
    for (k, run) in runs.into_iter().enumerate() {
        let e = run?;
        let inner_ok = e.fired.is_some_and(|f| f.contains_interval(&Interval::ball(inner_r)));
        let outer_ok = e.fired.is_none_or(|f| Interval::ball(outer_r).contains_interval(&f));
        inner_ok_n += u64::from(inner_ok);
        outer_ok_n += u64::from(outer_ok);
        both_n += u64::from(inner_ok && outer_ok);
        exact_n += u64::from(e.count == n);
        trials.push(vec![
            k.to_string(),
            derive_trial_seed(seed, k as u64).to_string(),
            env_seed(seed, k as u64).to_string(),
            e.count.to_string(),
            fmt_opt(e.fired.map(|i| i.lo)),
            fmt_opt(e.fired.map(|i| i.hi)),
            fmt_opt(e.settled.map(|i| i.lo)),
            fmt_opt(e.settled.map(|i| i.hi)),
            inner_ok.to_string(),
            outer_ok.to_string(),
        ]);
    }
    let frac = |x: u64| fmt_f(x as f64 / count as f64);
    let mut summary = Table::new(&[
        "n",
        "zeta",
        "trials",
        "inner_radius",
        "outer_radius",
        "inner_fraction",
        "outer_fraction",
        "both_fraction",
        "exact_count_fraction",
    ]);
    summary.push(vec![
        n.to_string(),
        fmt_f(zeta),
        count.to_string(),
        inner_r.to_string(),
        outer_r.to_string(),
        frac(inner_ok_n),
        frac(outer_ok_n),
        frac(both_n),
        frac(exact_n),
    ]);
    Ok(Parts::new(summary, trials, count - exact_n))
}

fn sites_detail(sites: &[Site]) -> String {
    sites.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn couple(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(100);
    let radius = r.radius(n as u64 / 4);
    let rate = r.finite_lambda()?;
    let count = positive("trials", r.trials(200))?;
    let cap = r.cap(default_step_cap(n as u64));
    let interval = Interval::ball(radius);
    let certs = run_trials(count, seed, workers, |_, s| crucial_coupling_check(n, interval, &InstructionSource::new(s, rate), cap));
    let mut trials = Table::new(&["seed", "verdict", "l", "r", "detail"]);
    let mut tally = [0u64; 4];
    for c in certs {
        let c = c?;
        let (i, verdict, detail) = match &c.verdict {
            CouplingVerdict::ExactMatch => (0, "exact-match", String::new()),
            CouplingVerdict::EventFailed => (1, "event-failed", String::new()),
            CouplingVerdict::Mismatch(sites) => (2, "mismatch", sites_detail(sites)),
            CouplingVerdict::Capped => (3, "capped", String::new()),
        };
        tally[i] += 1;
        trials.push(vec![c.seed.to_string(), verdict.to_string(), c.l.to_string(), c.r.to_string(), detail]);
    }
    let mut summary = Table::new(&["n", "radius", "trials", "exact_match", "event_failed", "mismatch", "capped"]);
    summary.push(vec![
        n.to_string(),
        radius.to_string(),
        count.to_string(),
        tally[0].to_string(),
        tally[1].to_string(),
        tally[2].to_string(),
        tally[3].to_string(),
    ]);
    Ok(Parts::new(summary, trials, tally[2]))
}

fn decompose(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(500);
    let zeta = zeta_param(r, 0.25)?;
    let rate = r.finite_lambda()?;
    let count = positive("trials", r.trials(100))?;
    let window = positive("window", r.window(10_000))?;
    let max_window = r.max_window(8 * window);
    let eps = r.epsilon(0.1);
    let cap = r.cap(default_step_cap(2 * max_window + 1));
    let radius = (n as f64 / (2.0 * zeta) * (1.0 + eps)).ceil() as u64;
    let certs = run_trials(count, seed, workers, |k, s| -> Result<_, CliError> {
        let env = PercolationEnv::new(zeta, env_seed(seed, k))?;
        Ok(outer_decomposition_check(n, &env, &InstructionSource::new(s, rate), window, max_window, cap)?)
    });
    let mut trials =
        Table::new(&["trial", "seed", "env_seed", "verdict", "window", "v_lo", "v_hi", "support_ok", "detail"]);
    let mut tally = [0u64; 4];
    let mut support_ok_n = 0u64;
    for (k, c) in certs.into_iter().enumerate() {
        let c = c?;
        let (i, verdict, detail) = match &c.verdict {
            DecompositionVerdict::Dominated => (0, "dominated", String::new()),
            DecompositionVerdict::WindowTooSmall => (1, "window-too-small", String::new()),
            DecompositionVerdict::Violated(sites) => (2, "violated", sites_detail(sites)),
            DecompositionVerdict::Capped => (3, "capped", String::new()),
        };
        tally[i] += 1;
        let support_ok = c.v_support.is_none_or(|s| Interval::ball(radius).contains_interval(&s));
        support_ok_n += u64::from(support_ok);
        trials.push(vec![
            k.to_string(),
            c.seed.to_string(),
            c.env_seed.to_string(),
            verdict.to_string(),
            c.window.to_string(),
            fmt_opt(c.v_support.map(|i| i.lo)),
            fmt_opt(c.v_support.map(|i| i.hi)),
            support_ok.to_string(),
            detail,
        ]);
    }
    let mut summary = Table::new(&[
        "n",
        "zeta",
        "trials",
        "dominated",
        "window_too_small",
        "violated",
        "capped",
        "support_fraction",
    ]);
    summary.push(vec![
        n.to_string(),
        fmt_f(zeta),
        count.to_string(),
        tally[0].to_string(),
        tally[1].to_string(),
        tally[2].to_string(),
        tally[3].to_string(),
        fmt_f(support_ok_n as f64 / count as f64),
    ]);
    Ok(Parts::new(summary, trials, tally[2]))
}

fn trap(r: &mut Resolver, workers: usize) -> Result<Parts, CliError> {
    let seed = r.seed(1);
    let n = r.n(100);
    let rate = r.finite_lambda()?;
    let count = positive("trials", r.trials(100))?;
    let c = r.c_lambda(trap_constant(rate.lambda()));
    let cap = r.cap(u64::MAX);
    let n4 = (n as u64).pow(4);
    let runs = run_trials(count, seed, workers, |_, s| trap_stabilize(n as u64, &InstructionSource::new(s, rate), c, cap));
    let mut trials = Table::new(&["trial", "seed", "total", "spacing", "grid_total", "exceeds_n4", "capped"]);
    let (mut capped, mut exceed, mut max_total) = (0u64, 0u64, 0u64);
    let mut totals = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        let t = run?;
        let total = t.result.odometer.total();
        let is_capped = t.result.status != Status::Stable;
        capped += u64::from(is_capped);
        exceed += u64::from(total > n4);
        max_total = max_total.max(total);
        totals.push(total as f64);
        trials.push(vec![
            k.to_string(),
            derive_trial_seed(seed, k as u64).to_string(),
            total.to_string(),
            t.spacing.to_string(),
            t.grid_phase_total.to_string(),
            (total > n4).to_string(),
            is_capped.to_string(),
        ]);
    }
    let mut summary = Table::new(&["n", "trials", "capped", "mean_total", "max_total", "exceed_fraction"]);
    summary.push(vec![
        n.to_string(),
        count.to_string(),
        capped.to_string(),
        fmt_f(mean(&totals)),
        max_total.to_string(),
        fmt_f(exceed as f64 / count as f64),
    ]);
    Ok(Parts::new(summary, trials, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(json: &str) -> Params {
        Params::from_json(json).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(Experiment::from_name(e.name()), Some(e));
        }
    }

    #[test]
    fn config_echo_has_defaults() {
        let o = run(Experiment::Spread, params(r#"{"n": 20, "trials": 3}"#), 1).unwrap();
        assert_eq!(o.config["n"], 20);
        assert_eq!(o.config["seed"], 1);
        assert_eq!(o.config["lambda"], 1.0);
        assert!(!o.config.contains_key("zeta"));
        assert_eq!(o.trials.rows.len(), 3);
    }

    #[test]
    fn echo_reproduces() {
        let o = run(Experiment::Couple, params(r#"{"n": 30, "trials": 5, "seed": 9}"#), 1).unwrap();
        let again = run(Experiment::Couple, params(&Value::Object(o.config.clone()).to_string()), 1).unwrap();
        assert_eq!(o.trials, again.trials);
        assert_eq!(o.violations, 0);
    }

    #[test]
    fn bad_method_is_config_error() {
        let e = run(Experiment::IdlaShape, params(r#"{"method": "guess"}"#), 1).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }

    #[test]
    fn infinite_rate_rejected_where_needed() {
        let e = run(Experiment::Couple, params(r#"{"lambda": "inf", "trials": 1}"#), 1).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }
}
