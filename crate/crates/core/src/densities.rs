//! Monte Carlo estimators for the inner, outer and aggregate densities, and
//! the stationary chain on an interval.

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, Interval, Odometer, Region};
use crate::engine::{stabilize, FiringPolicy, Mode, Stabilizer, Status};
use crate::error::{invalid, Result};
use crate::idla::PercolationEnv;
use crate::stacks::{InstructionSource, SleepRate};
use crate::stats;
use crate::trials::{derive_trial_seed, run_trial_range, run_trials};
use crate::Site;

/// Surviving particles of the killed stabilization of `1_I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalSample {
    pub seed: u64,
    pub survivors: u64,
    pub steps: u64,
    /// The step cap was hit; such samples are excluded from estimates.
    pub capped: bool,
}

pub fn sample_interval_stabilization(interval: Interval, rate: SleepRate, seed: u64, cap: u64) -> IntervalSample {
    let src = InstructionSource::new(seed, rate);
    let r = stabilize(&Configuration::indicator(interval), &src, Region::Killed(interval), FiringPolicy::Lifo, cap);
    IntervalSample { seed, survivors: r.final_config.total(), steps: r.steps, capped: r.status != Status::Stable }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerDensityEstimate {
    pub interval_size: u64,
    pub trials: u64,
    /// Capped samples left out of the estimate.
    pub flagged: u64,
    pub mean_density: f64,
    pub std_err: f64,
    pub quantile_level: f64,
    /// Upper `q`-quantile of the densities.
    pub zeta_in_hat: f64,
    /// Order-statistic half-width around `zeta_in_hat`.
    pub sigma: f64,
}

/// Summarize densities `|S_I(1_I)| / #I`.
pub fn inner_from_densities(interval_size: u64, densities: &[f64], flagged: u64, q: f64) -> Result<InnerDensityEstimate> {
    if densities.is_empty() {
        return Err(invalid("no unflagged samples"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let mut sorted = densities.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(InnerDensityEstimate {
        interval_size,
        trials: densities.len() as u64 + flagged,
        flagged,
        mean_density: stats::mean(densities),
        std_err: stats::std_err(densities),
        quantile_level: q,
        zeta_in_hat: stats::upper_quantile(&sorted, q),
        sigma: stats::upper_quantile_sigma(&sorted, q),
    })
}

/// Run `trials` killed stabilizations of `1_I` on a centred interval of
/// `size` sites and estimate the inner density at level `q`.
pub fn estimate_inner(
    size: u64,
    rate: SleepRate,
    trials: u64,
    q: f64,
    base_seed: u64,
    workers: usize,
    cap: u64,
) -> Result<(InnerDensityEstimate, Vec<IntervalSample>)> {
    if rate.is_infinite() {
        return Err(invalid("inner density needs a finite sleep rate"));
    }
    let interval = Interval::centered(size)?;
    let samples = run_trials(trials, base_seed, workers, |_, seed| sample_interval_stabilization(interval, rate, seed, cap));
    let densities: Vec<f64> = samples.iter().filter(|s| !s.capped).map(|s| s.survivors as f64 / size as f64).collect();
    let flagged = samples.iter().filter(|s| s.capped).count() as u64;
    Ok((inner_from_densities(size, &densities, flagged, q)?, samples))
}

/// Stable state of the chain "add an active particle at `v`, stabilize with
/// sink at `∂I`". The odometer keeps the stack positions across steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainState {
    pub interval: Interval,
    pub config: Configuration,
    pub odometer: Odometer,
    pub steps: u64,
}

impl ChainState {
    pub fn empty(interval: Interval) -> Self {
        ChainState { interval, config: Configuration::empty(), odometer: Odometer::zero(), steps: 0 }
    }

    pub fn density(&self) -> f64 {
        self.config.total() as f64 / self.interval.len() as f64
    }
}

/// One step of the chain. Returns the new state and the number of kills.
pub fn stationary_chain_step(state: &ChainState, v: Site, src: &InstructionSource, cap: u64) -> Result<(ChainState, u64)> {
    if !state.interval.contains(v) {
        return Err(invalid(format!("insertion site {v} outside {}", state.interval)));
    }
    let mut s = Stabilizer::new(src, Region::Killed(state.interval), Mode::Arw, &state.config);
    s.strip.preload_odometer(&state.odometer);
    s.add_active(v, 1);
    if s.run(FiringPolicy::Lifo, cap) != Status::Stable {
        return Err(invalid("chain step exceeded the step cap"));
    }
    let kills = s.kills;
    let r = s.finish(Status::Stable);
    Ok((
        ChainState { interval: state.interval, config: r.final_config, odometer: r.odometer, steps: state.steps + 1 },
        kills,
    ))
}

/// Densities measured along one long chain run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub interval: Interval,
    pub v: Site,
    pub burn_in: u64,
    pub steps: u64,
    /// Mean density over the measured steps.
    pub density: f64,
    pub first_half: f64,
    pub second_half: f64,
}

/// Run the chain from the empty state: `burn_in` unrecorded steps, then
/// `steps` steps whose post-step densities are averaged. The interval lives
/// in a persistent engine so each step costs only its own firings. `cap`
/// bounds the firings of a single step.
pub fn run_chain(interval: Interval, v: Site, src: &InstructionSource, burn_in: u64, steps: u64, cap: u64) -> Result<ChainRun> {
    if !interval.contains(v) {
        return Err(invalid(format!("insertion site {v} outside {interval}")));
    }
    if src.rate().is_infinite() {
        return Err(invalid("the chain needs a finite sleep rate"));
    }
    let mut s = Stabilizer::new(src, Region::Killed(interval), Mode::Arw, &Configuration::empty());
    let mut particles: i64 = 0;
    let (mut first, mut second) = (0u64, 0u64);
    let half = steps / 2;
    for t in 0..burn_in + steps {
        let kills_before = s.kills;
        s.add_active(v, 1);
        if s.run(FiringPolicy::Lifo, s.steps.saturating_add(cap)) != Status::Stable {
            return Err(invalid("chain step exceeded the step cap"));
        }
        particles += 1 - (s.kills - kills_before) as i64;
        if t >= burn_in {
            if t - burn_in < half {
                first += particles as u64;
            } else {
                second += particles as u64;
            }
        }
    }
    let size = interval.len() as f64;
    let first_half = first as f64 / (half.max(1) as f64 * size);
    let second_half = second as f64 / ((steps - half).max(1) as f64 * size);
    Ok(ChainRun {
        interval,
        v,
        burn_in,
        steps,
        density: (first + second) as f64 / (steps.max(1) as f64 * size),
        first_half,
        second_half,
    })
}

/// `w_L(0)` over a doubling window schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedOdometerSample {
    pub zeta: f64,
    pub lambda: SleepRate,
    pub seed: u64,
    pub env_seed: u64,
    pub windows: Vec<u64>,
    pub values: Vec<u64>,
    /// The last two doublings left `w_L(0)` unchanged.
    pub converged: bool,
    pub w0: Option<u64>,
}

/// Stabilize the Bernoulli(ζ) configuration on `[-L, L]` for
/// `L = L0, 2 L0, ...` up to `l_max`, recording the odometer at 0.
///
/// Each window continues from the stabilized previous one with the new
/// particles added. A legal sequence for a configuration stays legal after
/// particles are added, so this gives exactly the stabilization of the
/// larger window.
pub fn sample_w0(
    zeta: f64,
    rate: SleepRate,
    seed: u64,
    env_seed: u64,
    l0: u64,
    l_max: u64,
    cap: u64,
) -> Result<WindowedOdometerSample> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(invalid(format!("density must lie in (0, 1), got {zeta}")));
    }
    if l0 < 2 || l_max < l0 {
        return Err(invalid("window schedule needs 2 <= L0 <= L_max"));
    }
    let env = PercolationEnv::new(zeta, env_seed)?;
    let src = InstructionSource::new(seed, rate);
    let mut s = Stabilizer::new(&src, Region::WholeLine, Mode::Arw, &Configuration::empty());
    let mut out = WindowedOdometerSample {
        zeta,
        lambda: rate,
        seed,
        env_seed,
        windows: Vec::new(),
        values: Vec::new(),
        converged: false,
        w0: None,
    };
    let mut covered: Option<Site> = None;
    let mut l = l0;
    while l <= l_max {
        let lo = -(l as Site);
        let hi = l as Site;
        for x in lo..=hi {
            if covered.is_some_and(|c| x.abs() <= c) {
                continue;
            }
            if env.is_open(x) {
                s.add_active(x, 1);
            }
        }
        covered = Some(hi);
        if s.run(FiringPolicy::Lifo, cap) != Status::Stable {
            break;
        }
        let i = s.strip.index(0);
        out.windows.push(l);
        out.values.push(s.strip.cells[i].odo);
        let k = out.values.len();
        if k >= 3 && out.values[k - 1] == out.values[k - 2] && out.values[k - 2] == out.values[k - 3] {
            out.converged = true;
            out.w0 = Some(out.values[k - 1]);
            break;
        }
        l *= 2;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterPoint {
    pub zeta: f64,
    /// Samples evaluated; fewer than requested when the point was rejected
    /// early.
    pub trials: u64,
    pub converged: u64,
    pub nonconvergence: f64,
    pub mean_w0: f64,
    pub third_moment: f64,
    /// Hill estimate over the top 5% of converged samples; infinite when
    /// no tail is visible.
    pub tail_exponent: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterDensityEstimate {
    pub lambda: SleepRate,
    pub points: Vec<OuterPoint>,
    /// Largest accepted grid point.
    pub zeta_out_hat: Option<f64>,
    /// Grid resolution error, `step / sqrt(12)`.
    pub sigma: f64,
    /// Accepted points lying above a rejected one.
    pub downward_violations: Vec<f64>,
}

/// Decision parameters of the outer estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRule {
    pub tail_fraction: f64,
    pub exponent_threshold: f64,
    pub max_nonconvergence: f64,
}

impl Default for OuterRule {
    fn default() -> Self {
        OuterRule { tail_fraction: 0.05, exponent_threshold: 3.0, max_nonconvergence: 0.01 }
    }
}

pub fn outer_point(zeta: f64, samples: &[WindowedOdometerSample], rule: OuterRule) -> OuterPoint {
    let w: Vec<f64> = samples.iter().filter_map(|s| s.w0).map(|v| v as f64).collect();
    let trials = samples.len() as u64;
    let converged = w.len() as u64;
    let nonconvergence = if trials == 0 { 1.0 } else { 1.0 - converged as f64 / trials as f64 };
    let tail_exponent = if w.len() >= 20 { stats::hill_estimator(&w, rule.tail_fraction) } else { f64::NAN };
    OuterPoint {
        zeta,
        trials,
        converged,
        nonconvergence,
        mean_w0: stats::mean(&w),
        third_moment: stats::third_moment(&w),
        tail_exponent,
        accepted: converged > 0 && tail_exponent > rule.exponent_threshold && nonconvergence <= rule.max_nonconvergence,
    }
}

pub fn outer_from_points(rate: SleepRate, points: Vec<OuterPoint>, grid_step: f64) -> OuterDensityEstimate {
    let zeta_out_hat = points.iter().filter(|p| p.accepted).map(|p| p.zeta).fold(None, |m: Option<f64>, z| {
        Some(m.map_or(z, |m| m.max(z)))
    });
    let first_reject = points.iter().filter(|p| !p.accepted).map(|p| p.zeta).fold(f64::INFINITY, f64::min);
    let downward_violations = points.iter().filter(|p| p.accepted && p.zeta > first_reject).map(|p| p.zeta).collect();
    OuterDensityEstimate { lambda: rate, points, zeta_out_hat, sigma: grid_step / 12f64.sqrt(), downward_violations }
}

/// Windowed schedule shared by the outer estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub l0: u64,
    pub l_max: u64,
}

/// Sample `w(0)` on every grid point with the same per-trial seeds, so
/// environments are coupled monotonically across the grid.
#[allow(clippy::too_many_arguments)]
pub fn estimate_outer(
    rate: SleepRate,
    grid: &[f64],
    trials: u64,
    schedule: WindowSchedule,
    rule: OuterRule,
    base_seed: u64,
    workers: usize,
    cap: u64,
) -> Result<(OuterDensityEstimate, Vec<Vec<WindowedOdometerSample>>)> {
    if grid.is_empty() {
        return Err(invalid("empty density grid"));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut all = Vec::with_capacity(grid.len());
    // More than this many non-converged samples rejects the point whatever
    // the remaining trials give, so the point stops there.
    let max_failures = (rule.max_nonconvergence * trials as f64).floor() as u64;
    for &zeta in grid {
        let mut samples: Vec<WindowedOdometerSample> = Vec::with_capacity(trials as usize);
        let mut failures = 0;
        let mut start = 0;
        while start < trials && failures <= max_failures {
            let end = (start + OUTER_BATCH).min(trials);
            let batch = run_trial_range(start..end, base_seed, workers, |i, seed| {
                let env_seed = derive_trial_seed(base_seed ^ ENV_STREAM, i);
                sample_w0(zeta, rate, seed, env_seed, schedule.l0, schedule.l_max, cap)
            });
            for s in batch {
                let s = s?;
                failures += u64::from(!s.converged);
                samples.push(s);
            }
            start = end;
        }
        points.push(outer_point(zeta, &samples, rule));
        all.push(samples);
    }
    let step = if grid.len() > 1 { (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64 } else { 0.0 };
    Ok((outer_from_points(rate, points, step), all))
}

/// Trials per batch of the outer estimator; fixed so that early stopping
/// does not depend on the worker count.
const OUTER_BATCH: u64 = 64;

/// Mixed into the base seed for environment seeds.
pub const ENV_STREAM: u64 = 0x6A09_E667_F3BC_C909;

/// Fired set of one point-source run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateSample {
    pub seed: u64,
    pub size: u64,
    pub left: Site,
    pub right: Site,
    pub total: u64,
    /// The fired set is an interval containing 0.
    pub interval_ok: bool,
    pub capped: bool,
}

pub fn sample_aggregate(n: u32, rate: SleepRate, seed: u64, cap: u64) -> AggregateSample {
    let src = InstructionSource::new(seed, rate);
    let r = stabilize(&Configuration::point(0, n), &src, Region::WholeLine, FiringPolicy::Lifo, cap);
    let size = r.odometer.support_size() as u64;
    let (left, right, interval_ok) = match r.odometer.support() {
        Some(i) => (i.lo, i.hi, i.len() == size && i.contains(0)),
        None => (0, 0, n <= 1),
    };
    AggregateSample {
        seed,
        size,
        left,
        right,
        total: r.odometer.total(),
        interval_ok,
        capped: r.status != Status::Stable,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateEstimate {
    pub n: u64,
    pub trials: u64,
    pub flagged: u64,
    pub mean_size: f64,
    pub sd_size: f64,
    /// `n / mean(#A_n)`.
    pub zeta_agg_hat: f64,
    /// Delta-method standard error of `zeta_agg_hat`.
    pub sigma: f64,
    pub mean_left: f64,
    pub mean_right: f64,
    pub max_extent: u64,
    pub interval_failures: u64,
}

pub fn aggregate_from_samples(n: u64, samples: &[AggregateSample]) -> Result<AggregateEstimate> {
    let ok: Vec<&AggregateSample> = samples.iter().filter(|s| !s.capped).collect();
    if ok.is_empty() {
        return Err(invalid("no unflagged samples"));
    }
    let sizes: Vec<f64> = ok.iter().map(|s| s.size as f64).collect();
    let m = stats::mean(&sizes);
    let se = stats::std_err(&sizes);
    Ok(AggregateEstimate {
        n,
        trials: samples.len() as u64,
        flagged: (samples.len() - ok.len()) as u64,
        mean_size: m,
        sd_size: stats::std_dev(&sizes),
        zeta_agg_hat: n as f64 / m,
        sigma: n as f64 * se / (m * m),
        mean_left: stats::mean(&ok.iter().map(|s| s.left as f64).collect::<Vec<_>>()),
        mean_right: stats::mean(&ok.iter().map(|s| s.right as f64).collect::<Vec<_>>()),
        max_extent: ok.iter().map(|s| s.left.unsigned_abs().max(s.right.unsigned_abs())).max().unwrap_or(0),
        interval_failures: ok.iter().filter(|s| !s.interval_ok).count() as u64,
    })
}

pub fn estimate_aggregate(
    n: u32,
    rate: SleepRate,
    trials: u64,
    base_seed: u64,
    workers: usize,
    cap: u64,
) -> Result<(AggregateEstimate, Vec<AggregateSample>)> {
    let samples = run_trials(trials, base_seed, workers, |_, seed| sample_aggregate(n, rate, seed, cap));
    Ok((aggregate_from_samples(n as u64, &samples)?, samples))
}
