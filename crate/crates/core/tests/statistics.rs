//! Distributional checks of the stacks and of the exit-law samplers, against
//! independently computed laws.

use std::collections::BTreeMap;

use arw_core::idla::{
    run_killed_idla, run_percolated_idla, run_point_idla, sample_killed_idla, sample_percolated_idla, sample_point_idla,
};
use arw_core::stats::chi_square;
use arw_core::{derive_trial_seed, Instruction, InstructionSource, Interval, PercolationEnv, SleepRate};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn law(rate: SleepRate) -> [f64; 3] {
    if rate.is_infinite() {
        return [0.0, 0.5, 0.5];
    }
    let l = rate.lambda();
    [l / (1.0 + l), 0.5 / (1.0 + l), 0.5 / (1.0 + l)]
}

fn cell(i: Instruction) -> usize {
    match i {
        Instruction::Sleep => 0,
        Instruction::StepLeft => 1,
        Instruction::StepRight => 2,
    }
}

#[test]
fn marginal_law_million_draws() {
    for (seed, rate) in [(11, SleepRate::new(0.25).unwrap()), (12, SleepRate::new(1.0).unwrap()), (13, SleepRate::new(4.0).unwrap()), (14, SleepRate::infinite())] {
        let src = InstructionSource::new(seed, rate);
        let mut counts = [0u64; 3];
        for x in -500..500 {
            for k in 1..=1000 {
                counts[cell(src.draw(x, k).unwrap())] += 1;
            }
        }
        let test = chi_square(&counts, &law(rate));
        assert!(test.p_value > 1e-3, "{rate:?}: {counts:?} p = {}", test.p_value);
        if rate.is_infinite() {
            assert_eq!(counts[0], 0);
        }
        if rate.lambda() == 1.0 {
            let f = counts[0] as f64 / 1e6;
            assert!((f - 0.5).abs() <= 0.002, "{f}");
        }
    }
}

/// Pairs of instructions against the product law.
fn pair_test(pairs: impl Iterator<Item = (Instruction, Instruction)>, p: [f64; 3]) -> f64 {
    let mut counts = [0u64; 9];
    for (a, b) in pairs {
        counts[3 * cell(a) + cell(b)] += 1;
    }
    let probs: Vec<f64> = (0..9).map(|i| p[i / 3] * p[i % 3]).collect();
    chi_square(&counts, &probs).p_value
}

#[test]
fn cells_are_pairwise_independent() {
    let rate = SleepRate::new(1.0).unwrap();
    let src = InstructionSource::new(99, rate);
    let along = (0..400).flat_map(|x| (1..500).step_by(2).map(move |k| (x, k)));
    let p = pair_test(along.map(|(x, k)| (src.draw(x, k).unwrap(), src.draw(x, k + 1).unwrap())), law(rate));
    assert!(p > 1e-3, "same stack: p = {p}");
    let across = (-200..200).step_by(2).flat_map(|x| (1..=250).map(move |k| (x, k)));
    let p = pair_test(across.map(|(x, k)| (src.draw(x, k).unwrap(), src.draw(x + 1, k).unwrap())), law(rate));
    assert!(p > 1e-3, "neighbouring stacks: p = {p}");
    let seeds = (0..100_000u64).map(|i| {
        let a = InstructionSource::new(derive_trial_seed(5, i), rate);
        let b = InstructionSource::new(derive_trial_seed(5, i + 1), rate);
        (a.draw(0, 1).unwrap(), b.draw(0, 1).unwrap())
    });
    let p = pair_test(seeds, law(rate));
    assert!(p > 1e-3, "consecutive trial seeds: p = {p}");
}

/// Exact law of `b_n` for point-source IDLA from gambler's ruin: from 0
/// inside the occupied `[-a, b]`, the walker first leaves through `b + 1`
/// with probability `(a + 1) / (a + b + 2)`.
fn point_idla_law(n: usize) -> Vec<f64> {
    let mut dist = vec![1.0];
    for k in 0..n {
        let mut next = vec![0.0; k + 2];
        for (b, &p) in dist.iter().enumerate() {
            let a = k - b;
            let right = (a + 1) as f64 / (k + 2) as f64;
            next[b + 1] += p * right;
            next[b] += p * (1.0 - right);
        }
        dist = next;
    }
    dist
}

/// Goodness of fit with cells of expected count below 5 pooled.
fn fit_p_value(observed: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let (mut obs, mut pr) = (Vec::new(), Vec::new());
    let (mut o_acc, mut p_acc) = (0u64, 0.0);
    for (o, p) in observed.iter().zip(probs) {
        o_acc += o;
        p_acc += p;
        if p_acc * total as f64 >= 5.0 {
            obs.push(o_acc);
            pr.push(p_acc);
            o_acc = 0;
            p_acc = 0.0;
        }
    }
    if let Some(last) = obs.last_mut() {
        *last += o_acc;
        *pr.last_mut().unwrap() += p_acc;
    }
    chi_square(&obs, &pr).p_value
}

#[test]
fn point_idla_matches_gamblers_ruin() {
    let n = 40;
    let exact = point_idla_law(n);
    let mut replay = vec![0u64; n + 1];
    let mut sampled = vec![0u64; n + 1];
    for i in 0..3000 {
        let s = derive_trial_seed(21, i);
        let (t, _) = run_point_idla(n as u64, &InstructionSource::new(s, SleepRate::new(1.0).unwrap())).unwrap();
        replay[*t.b.last().unwrap() as usize] += 1;
        sampled[*sample_point_idla(n as u64, s).b.last().unwrap() as usize] += 1;
    }
    let p = fit_p_value(&replay, &exact);
    assert!(p > 1e-3, "replay p = {p}");
    let p = fit_p_value(&sampled, &exact);
    assert!(p > 1e-3, "exit-law p = {p}");
}

/// Two-sample homogeneity test over the union of observed values.
fn homogeneity_p_value(a: &[i64], b: &[i64]) -> f64 {
    let mut table: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for &x in a {
        table.entry(x).or_default().0 += 1.0;
    }
    for &x in b {
        table.entry(x).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut rows, mut acc) = (Vec::new(), (0.0, 0.0));
    for (_, (x, y)) in table {
        acc.0 += x;
        acc.1 += y;
        if acc.0 + acc.1 >= 20.0 {
            rows.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = rows.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    if rows.len() < 2 {
        return 1.0;
    }
    let mut stat = 0.0;
    for &(x, y) in &rows {
        let t = x + y;
        let (ea, eb) = (t * na / (na + nb), t * nb / (na + nb));
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    ChiSquared::new((rows.len() - 1) as f64).unwrap().sf(stat)
}

#[test]
fn killed_sampler_matches_replay() {
    let interval = Interval::new(-9, 12).unwrap();
    let n = 40;
    let (mut lo_r, mut hi_r, mut kills_r) = (Vec::new(), Vec::new(), Vec::new());
    let (mut lo_s, mut hi_s, mut kills_s) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..3000 {
        let s = derive_trial_seed(31, i);
        let r = run_killed_idla(n, interval, &InstructionSource::new(s, SleepRate::new(2.0).unwrap())).unwrap();
        let b = r.result.final_config.bounds().unwrap();
        assert_eq!(r.result.final_config.total(), b.len(), "occupied set is an interval");
        lo_r.push(b.lo);
        hi_r.push(b.hi);
        kills_r.push(r.result.kills as i64);
        let (occ, kills) = sample_killed_idla(n, interval, derive_trial_seed(32, i)).unwrap();
        let occ = occ.unwrap();
        lo_s.push(occ.lo);
        hi_s.push(occ.hi);
        kills_s.push(kills as i64);
        assert_eq!(occ.len() + kills, n);
    }
    for (name, a, b) in [("lo", &lo_r, &lo_s), ("hi", &hi_r, &hi_s), ("kills", &kills_r, &kills_s)] {
        let p = homogeneity_p_value(a, b);
        assert!(p > 1e-3, "{name}: p = {p}");
    }
}

#[test]
fn percolated_sampler_matches_replay() {
    let n = 25;
    let rate = SleepRate::new(1.0).unwrap();
    let mut replay: [Vec<i64>; 4] = Default::default();
    let mut sampled: [Vec<i64>; 4] = Default::default();
    for env_seed in 0..4u64 {
        let env = PercolationEnv::new(0.4, env_seed).unwrap();
        for i in 0..1000 {
            let s = derive_trial_seed(41 + env_seed, i);
            let r = run_percolated_idla(n, &env, &InstructionSource::new(s, rate)).unwrap();
            assert_eq!(r.settled.len() as u64, n);
            assert!(r.settled.iter().all(|&x| env.is_open(x)));
            let fired = r.odometer.support().unwrap();
            for (v, x) in replay.iter_mut().zip([fired.lo, fired.hi, r.settled[0], *r.settled.last().unwrap()]) {
                v.push(x);
            }
            let e = sample_percolated_idla(n, &env, derive_trial_seed(51 + env_seed, i));
            assert_eq!(e.settled_count, n);
            let f = e.fired.unwrap();
            for (v, x) in sampled.iter_mut().zip([f.lo, f.hi, e.settled.lo, e.settled.hi]) {
                v.push(x);
            }
        }
    }
    for (k, name) in ["fired_lo", "fired_hi", "settled_lo", "settled_hi"].iter().enumerate() {
        let p = homogeneity_p_value(&replay[k], &sampled[k]);
        assert!(p > 1e-3, "{name}: p = {p}");
    }
}
