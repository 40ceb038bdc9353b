//! Exact per-seed coupling checks and the strong Markov test.

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, Interval, Odometer, Region, SiteState};
use crate::engine::{boundary_source_stabilize, stabilize, FiringPolicy, Status};
use crate::error::{invalid, Result};
use crate::idla::{run_killed_idla, run_percolated_idla, PercolationEnv};
use crate::stacks::{Instruction, InstructionSource, LawTable, SleepRate};
use crate::stats::{chi_square, ChiSquare};
use crate::trials::run_trials;
use crate::Site;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingVerdict {
    ExactMatch,
    /// The IDLA fill of `I` failed; the coupling says nothing.
    EventFailed,
    /// Sites of `I` where the two constructions disagree.
    Mismatch(Vec<Site>),
    /// A step cap was hit.
    Capped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingCertificate {
    pub seed: u64,
    pub n: u32,
    pub interval: Interval,
    pub filled: bool,
    /// `u_n(a)` and `u_n(b)` for `∂I = {a, b}`.
    pub l: u64,
    pub r: u64,
    pub verdict: CouplingVerdict,
}

/// Compare `S(n δ_0)` on `I` with the killed stabilization of
/// `l δ_a + 1_I + r δ_b` on the stacks shifted by the IDLA fill odometer.
pub fn crucial_coupling_check(n: u32, interval: Interval, src: &InstructionSource, cap: u64) -> Result<CouplingCertificate> {
    if !interval.contains(0) {
        return Err(invalid("coupling interval must contain 0"));
    }
    if src.rate().is_infinite() {
        return Err(invalid("coupling check needs a finite sleep rate"));
    }
    let (a, b) = interval.boundary();
    let full = stabilize(&Configuration::point(0, n), src, Region::WholeLine, FiringPolicy::Lifo, cap);
    let mut cert = CouplingCertificate {
        seed: src.seed(),
        n,
        interval,
        filled: false,
        l: full.odometer.get(a),
        r: full.odometer.get(b),
        verdict: CouplingVerdict::Capped,
    };
    if full.status != Status::Stable {
        return Ok(cert);
    }
    let fill = run_killed_idla(n as u64, interval, src)?;
    cert.filled = fill.filled;
    if !fill.filled {
        cert.verdict = CouplingVerdict::EventFailed;
        return Ok(cert);
    }
    let shifted = src.shift(&fill.result.odometer.to_shift());
    let killed = boundary_source_stabilize(interval, cert.l, cert.r, &shifted, cap)?;
    if killed.status != Status::Stable {
        return Ok(cert);
    }
    let mismatches: Vec<Site> =
        interval.sites().filter(|&x| full.final_config.get(x) != killed.final_config.get(x)).collect();
    cert.verdict = if mismatches.is_empty() { CouplingVerdict::ExactMatch } else { CouplingVerdict::Mismatch(mismatches) };
    Ok(cert)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionVerdict {
    Dominated,
    /// ζ-IDLA settled outside `[-L/2, L/2]` even at the largest window.
    WindowTooSmall,
    /// Sites where `u_n > v_n + w'`.
    Violated(Vec<Site>),
    Capped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCertificate {
    pub seed: u64,
    pub env_seed: u64,
    pub n: u32,
    pub zeta: f64,
    /// Window actually used.
    pub window: u64,
    /// Fired set of `v_n`.
    pub v_support: Option<Interval>,
    pub verdict: DecompositionVerdict,
}

/// Check `u_n <= v_n + w'` pointwise, where `v_n` is the ζ-IDLA odometer
/// and `w'` the odometer of one particle per open site of `[-L, L]` on the
/// stacks shifted by `v_n`. `L` doubles from `window` up to `max_window`
/// until the settled sites fit in `[-L/2, L/2]`.
pub fn outer_decomposition_check(
    n: u32,
    env: &PercolationEnv,
    src: &InstructionSource,
    window: u64,
    max_window: u64,
    cap: u64,
) -> Result<DecompositionCertificate> {
    if n == 0 {
        return Err(invalid("decomposition check needs n >= 1"));
    }
    let v = run_percolated_idla(n as u64, env, src)?;
    let mut cert = DecompositionCertificate {
        seed: src.seed(),
        env_seed: env.env_seed(),
        n,
        zeta: env.zeta(),
        window,
        v_support: v.odometer.support(),
        verdict: DecompositionVerdict::WindowTooSmall,
    };
    let reach = v.settled.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
    let mut l = window.max(2);
    while 2 * reach > l {
        if l >= max_window {
            return Ok(cert);
        }
        l = (2 * l).min(max_window);
    }
    cert.window = l;
    let u = stabilize(&Configuration::point(0, n), src, Region::WholeLine, FiringPolicy::Lifo, cap);
    if u.status != Status::Stable {
        cert.verdict = DecompositionVerdict::Capped;
        return Ok(cert);
    }
    let l = l as Site;
    let stage2 = Configuration::from_sites((-l..=l).filter(|&x| env.is_open(x)).map(|x| (x, SiteState::Active(1))));
    let shifted = src.shift(&v.odometer.to_shift());
    let w = stabilize(&stage2, &shifted, Region::WholeLine, FiringPolicy::Lifo, cap);
    if w.status != Status::Stable {
        cert.verdict = DecompositionVerdict::Capped;
        return Ok(cert);
    }
    let bound = &v.odometer + &w.odometer;
    let bad = u.odometer.exceedances(&bound);
    cert.verdict = if bad.is_empty() { DecompositionVerdict::Dominated } else { DecompositionVerdict::Violated(bad) };
    Ok(cert)
}

/// Exploration performed before probing the stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    Nothing,
    /// Stabilize `n δ_0`; `F` is its odometer.
    Stabilize(u32),
    /// Stabilize `n δ_0`, then at each probe site skip the next instruction
    /// whenever it is a step. This peeks ahead, so it is not a stopping
    /// rule, and the probed law is biased towards sleep.
    Adversarial(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmpReport {
    pub rule: StopRule,
    pub rate: SleepRate,
    pub seeds: u64,
    pub probes: Vec<Site>,
    pub per_site: u64,
    pub table: LawTable,
    pub test: ChiSquare,
}

/// The `m` instructions after the explored part of each probe stack.
pub fn smp_probe(rule: StopRule, src: &InstructionSource, probes: &[Site], m: u64, cap: u64) -> Result<Vec<Instruction>> {
    let explored = match rule {
        StopRule::Nothing => Odometer::zero(),
        StopRule::Stabilize(n) | StopRule::Adversarial(n) => {
            let r = stabilize(&Configuration::point(0, n), src, Region::WholeLine, FiringPolicy::Lifo, cap);
            if r.status != Status::Stable {
                return Err(invalid("exploration exceeded the step cap"));
            }
            r.odometer
        }
    };
    let mut out = Vec::with_capacity(probes.len() * m as usize);
    for &x in probes {
        let mut k = explored.get(x);
        if matches!(rule, StopRule::Adversarial(_)) && src.draw(x, k + 1)?.is_step() {
            k += 1;
        }
        for j in 1..=m {
            out.push(src.draw(x, k + j)?);
        }
    }
    Ok(out)
}

/// Pool probes over `seeds` trials and test them against the instruction law.
#[allow(clippy::too_many_arguments)]
pub fn smp_check(
    rule: StopRule,
    rate: SleepRate,
    seeds: u64,
    probes: &[Site],
    m: u64,
    base_seed: u64,
    workers: usize,
    cap: u64,
) -> Result<SmpReport> {
    if m == 0 || probes.is_empty() {
        return Err(invalid("need at least one probe site and m >= 1"));
    }
    let per_trial = run_trials(seeds, base_seed, workers, |_, seed| {
        smp_probe(rule, &InstructionSource::new(seed, rate), probes, m, cap)
    });
    let mut table = LawTable::default();
    for t in per_trial {
        for ins in t? {
            table.record(ins);
        }
    }
    let p = rate.sleep_probability();
    let q = (1.0 - p) / 2.0;
    let test = chi_square(&table.counts(), &[p, q, q]);
    Ok(SmpReport { rule, rate, seeds, probes: probes.to_vec(), per_site: m, table, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacks::empirical_law;

    fn src(seed: u64) -> InstructionSource {
        InstructionSource::new(seed, SleepRate::new(1.0).unwrap())
    }

    #[test]
    fn single_site_coupling() {
        let i = Interval::new(0, 0).unwrap();
        for seed in 0..50 {
            let c = crucial_coupling_check(1, i, &src(seed), u64::MAX).unwrap();
            assert!(c.filled);
            assert_eq!(c.verdict, CouplingVerdict::ExactMatch);
        }
    }

    #[test]
    fn too_few_particles_cannot_fill() {
        let i = Interval::new(-10, 10).unwrap();
        for seed in 0..20 {
            let c = crucial_coupling_check(15, i, &src(seed), u64::MAX).unwrap();
            assert_eq!(c.verdict, CouplingVerdict::EventFailed);
        }
    }

    #[test]
    fn coupling_small_instances() {
        let i = Interval::new(-6, 6).unwrap();
        let mut matched = 0;
        for seed in 0..100 {
            let c = crucial_coupling_check(40, i, &src(seed), u64::MAX).unwrap();
            assert!(matches!(c.verdict, CouplingVerdict::ExactMatch | CouplingVerdict::EventFailed), "{c:?}");
            matched += u64::from(c.verdict == CouplingVerdict::ExactMatch);
        }
        assert!(matched > 50);
    }

    #[test]
    fn decomposition_single_particle() {
        for seed in 0..30 {
            let env = PercolationEnv::new(0.5, seed + 7).unwrap();
            let c = outer_decomposition_check(1, &env, &src(seed), 64, 1024, u64::MAX).unwrap();
            assert_eq!(c.verdict, DecompositionVerdict::Dominated, "{c:?}");
        }
    }

    #[test]
    fn decomposition_full_density() {
        for seed in 0..10 {
            let env = PercolationEnv::new(1.0, seed).unwrap();
            let c = outer_decomposition_check(30, &env, &src(seed), 64, 64, u64::MAX).unwrap();
            assert_eq!(c.verdict, DecompositionVerdict::Dominated);
        }
    }

    #[test]
    fn decomposition_window_too_small() {
        let env = PercolationEnv::new(0.2, 3).unwrap();
        let c = outer_decomposition_check(50, &env, &src(1), 4, 8, u64::MAX).unwrap();
        assert_eq!(c.verdict, DecompositionVerdict::WindowTooSmall);
    }

    #[test]
    fn explore_nothing_is_empirical_law() {
        let rate = SleepRate::new(0.5).unwrap();
        let s = InstructionSource::new(4, rate);
        let probes = [-3, 0, 5];
        let got = smp_probe(StopRule::Nothing, &s, &probes, 20, u64::MAX).unwrap();
        let mut t = LawTable::default();
        got.into_iter().for_each(|i| t.record(i));
        assert_eq!(t, empirical_law(&s, &probes, 20).unwrap());
    }

    #[test]
    fn adversarial_rule_is_biased() {
        let r = smp_check(StopRule::Adversarial(5), SleepRate::new(1.0).unwrap(), 2000, &[0], 1, 1, 1, u64::MAX)
            .unwrap();
        let (sleep, _, _) = r.table.frequencies();
        assert!((sleep - 0.75).abs() < 0.04, "{sleep}");
        assert!(r.test.p_value < 1e-6);
    }
}
