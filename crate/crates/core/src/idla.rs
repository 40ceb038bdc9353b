//! Internal DLA: point-source growth, killed fill, percolated (ζ-)IDLA and
//! gap statistics of the percolation environment.
//!
//! Two routes are provided for each process. The `run_*` functions replay
//! walkers on the instruction stacks, so their odometers can be compared with
//! ARW stabilizations of the same seed. The `sample_*` functions draw the
//! same processes in law from harmonic-measure exit probabilities, which is
//! what makes `n = 10^4` clusters cheap.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Configuration, Interval, Odometer, SiteState};
use crate::engine::{StabilizationResult, Status};
use crate::error::{invalid, ArwError, Result};
use crate::stacks::{mix64, InstructionSource};
use crate::strip::{Marks, Strip, WalkEnd};
use crate::Site;

/// Per-walker step budget.
pub const WALKER_CAP: u64 = 1_000_000_000;

const ENV_SALT: u64 = 0x2545_F491_4F6C_DD1D;
const ENV_MUL: u64 = 0x94D0_49BB_1331_11EB;

/// Cluster boundary after each walker: `A_k = [-a_k, b_k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTrace {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
}

impl ClusterTrace {
    fn start(n: u64) -> Self {
        let mut t = ClusterTrace { a: Vec::with_capacity(n as usize + 1), b: Vec::with_capacity(n as usize + 1) };
        t.a.push(0);
        t.b.push(0);
        t
    }

    /// Number of walkers.
    pub fn n(&self) -> u64 {
        self.a.len() as u64 - 1
    }

    pub fn cluster(&self) -> Interval {
        let k = self.a.len() - 1;
        Interval { lo: -(self.a[k] as Site), hi: self.b[k] as Site }
    }

    fn push_right(&mut self, right: bool) {
        let (a, b) = (*self.a.last().unwrap(), *self.b.last().unwrap());
        self.a.push(a + u64::from(!right));
        self.b.push(b + u64::from(right));
    }
}

/// `M_k = (k + 1) b_k - k (k + 1) / 2`, exact.
pub fn martingale(t: &ClusterTrace) -> Vec<i64> {
    t.b.iter()
        .enumerate()
        .map(|(k, &b)| {
            let k = k as i64;
            (k + 1) * b as i64 - k * (k + 1) / 2
        })
        .collect()
}

/// CSV with header `k,a_k,b_k,M_k`.
pub fn trace_csv(t: &ClusterTrace) -> String {
    let m = martingale(t);
    let mut out = String::from("k,a_k,b_k,M_k\n");
    for k in 0..t.a.len() {
        writeln!(out, "{},{},{},{}", k, t.a[k], t.b[k], m[k]).unwrap();
    }
    out
}

/// Bernoulli(ζ) site percolation given by a pure function of `(env_seed, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercolationEnv {
    zeta: f64,
    env_seed: u64,
    #[serde(skip)]
    key: u64,
    #[serde(skip)]
    cut: u64,
}

impl PercolationEnv {
    pub fn new(zeta: f64, env_seed: u64) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(invalid(format!("percolation density must lie in (0, 1], got {zeta}")));
        }
        let cut = if zeta == 1.0 { u64::MAX } else { (zeta * (1u64 << 53) as f64).floor() as u64 };
        Ok(PercolationEnv { zeta, env_seed, key: mix64(env_seed ^ ENV_SALT), cut })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn env_seed(&self) -> u64 {
        self.env_seed
    }

    #[inline]
    pub fn is_open(&self, x: Site) -> bool {
        let bits = mix64(self.key.wrapping_add((x as u64).wrapping_mul(ENV_MUL)));
        (bits >> 11) < self.cut
    }

    /// First open site `>= x` (`step = 1`) or `<= x` (`step = -1`).
    pub fn next_open(&self, mut x: Site, step: Site) -> Site {
        while !self.is_open(x) {
            x += step;
        }
        x
    }
}

/// Gaps `Δ_k = o_k - o_{k-1}` between the starting site `o_0` and the
/// successive open sites `o_1, o_2, ...` strictly beyond it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSample {
    pub gaps: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

pub fn gaps(env: &PercolationEnv, from: Site, direction: Direction, count: usize) -> GapSample {
    let step = match direction {
        Direction::Left => -1,
        Direction::Right => 1,
    };
    let mut prev = from;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let next = env.next_open(prev + step, step);
        out.push(next.abs_diff(prev));
        prev = next;
    }
    GapSample { gaps: out }
}

/// Point-source IDLA by stack replay: the origin starts occupied and `n`
/// walkers are released from it one at a time.
pub fn run_point_idla(n: u64, src: &InstructionSource) -> Result<(ClusterTrace, Odometer)> {
    let mut strip = Strip::new(src, Marks::Plain, Interval { lo: -(n as Site) / 2 - 4, hi: n as Site / 2 + 4 });
    let i0 = strip.index(0);
    strip.cells[i0].occ = 1;
    let mut trace = ClusterTrace::start(n);
    for _ in 0..n {
        match strip.walk(0, WALKER_CAP) {
            WalkEnd::Stopped(x) => {
                let i = strip.index(x);
                strip.cells[i].occ = 1;
                trace.push_right(x > 0);
            }
            _ => return Err(ArwError::WalkerCap(WALKER_CAP)),
        }
    }
    Ok((trace, strip.odometer()))
}

/// Point-source IDLA in law: a walker started at 0 inside `[-a, b]` leaves
/// through `b + 1` with probability `(a + 1) / (a + b + 2)`.
pub fn sample_point_idla(n: u64, seed: u64) -> ClusterTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = ClusterTrace::start(n);
    let (mut a, mut b) = (0u64, 0u64);
    for _ in 0..n {
        let right = rng.random_range(0..a + b + 2) < a + 1;
        if right {
            b += 1;
        } else {
            a += 1;
        }
        trace.push_right(right);
    }
    trace
}

/// Outcome of IDLA of `n δ_0` killed on leaving `I`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KilledIdla {
    /// Final occupancy equals `1_I`.
    pub filled: bool,
    pub result: StabilizationResult,
}

/// Killed IDLA by stack replay. The first particle settles at the origin;
/// each later walker stops at the first vacant site of `I` or dies on `∂I`.
pub fn run_killed_idla(n: u64, interval: Interval, src: &InstructionSource) -> Result<KilledIdla> {
    if !interval.contains(0) {
        return Err(invalid("killed IDLA needs 0 in the interval"));
    }
    let mut strip = Strip::new(src, Marks::Killed(interval), Interval { lo: interval.lo - 1, hi: interval.hi + 1 });
    let mut settled = 0;
    let kills = strip
        .release(0, n, WALKER_CAP, |_| settled += 1)
        .ok_or(ArwError::WalkerCap(WALKER_CAP))?;
    let odometer = strip.odometer();
    let result = StabilizationResult {
        final_config: strip.configuration(),
        odometer: odometer.clone(),
        steps: odometer.total(),
        kills,
        status: Status::Stable,
    };
    Ok(KilledIdla { filled: settled == interval.len(), result })
}

/// Killed IDLA in law. Returns the occupied interval and the kill count.
pub fn sample_killed_idla(n: u64, interval: Interval, seed: u64) -> Result<(Option<Interval>, u64)> {
    if !interval.contains(0) {
        return Err(invalid("killed IDLA needs 0 in the interval"));
    }
    if n == 0 {
        return Ok((None, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (0u64, 0u64);
    let (max_a, max_b) = ((-interval.lo) as u64, interval.hi as u64);
    let mut kills = 0;
    for _ in 1..n {
        if rng.random_range(0..a + b + 2) < a + 1 {
            if b < max_b {
                b += 1;
            } else {
                kills += 1;
            }
        } else if a < max_a {
            a += 1;
        } else {
            kills += 1;
        }
    }
    Ok((Some(Interval { lo: -(a as Site), hi: b as Site }), kills))
}

/// Odometer `v_n` and settled sites of ζ-IDLA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PercolatedIdla {
    pub odometer: Odometer,
    /// Occupied open sites, increasing.
    pub settled: Vec<Site>,
}

/// ζ-IDLA by stack replay: walkers from 0 settle at the first vacant open
/// site they visit. Sleep cells are read and counted, then ignored.
pub fn run_percolated_idla(n: u64, env: &PercolationEnv, src: &InstructionSource) -> Result<PercolatedIdla> {
    let half = (n as f64 / (2.0 * env.zeta())).ceil() as Site + 8;
    let mut strip = Strip::new(src, Marks::Percolation(*env), Interval { lo: -half, hi: half });
    let mut settled = Vec::with_capacity(n as usize);
    strip
        .release(0, n, WALKER_CAP, |x| settled.push(x))
        .ok_or(ArwError::WalkerCap(WALKER_CAP))?;
    settled.sort_unstable();
    Ok(PercolatedIdla { odometer: strip.odometer(), settled })
}

/// Extents of one ζ-IDLA run sampled in law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercolatedExtent {
    /// Smallest interval containing the fired sites, if any fired.
    pub fired: Option<Interval>,
    /// Leftmost and rightmost settled sites.
    pub settled: Interval,
    pub settled_count: u64,
}

/// ζ-IDLA in law. All open sites strictly between the nearest vacant open
/// sites `l < 0 < r` are occupied, so each walker settles at `r` with
/// probability `-l / (r - l)`. The far end of its excursion, which bounds
/// the fired set, is drawn from the exact conditional law of the path
/// minimum (or maximum).
pub fn sample_percolated_idla(n: u64, env: &PercolationEnv, seed: u64) -> PercolatedExtent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo_fired, mut hi_fired) = (Site::MAX, Site::MIN);
    let (mut count, mut lo_set, mut hi_set) = if env.is_open(0) { (1, 0, 0) } else { (0, Site::MAX, Site::MIN) };
    let mut left = env.next_open(-1, -1);
    let mut right = env.next_open(1, 1);
    while count < n {
        let d = -left; // > 0
        let r = right; // > 0
        let total = (r + d) as u64;
        let u: f64 = 1.0 - rng.random::<f64>();
        if rng.random_range(0..total) < d as u64 {
            // Exits at r; excursion reaches -t with P(T >= t) = r (d - t) / ((r + t) d).
            let t = excursion(r, d, u);
            lo_fired = lo_fired.min(-t);
            hi_fired = hi_fired.max(r - 1);
            lo_set = lo_set.min(r);
            hi_set = hi_set.max(r);
            right = env.next_open(r + 1, 1);
        } else {
            let t = excursion(d, r, u);
            lo_fired = lo_fired.min(left + 1);
            hi_fired = hi_fired.max(t);
            lo_set = lo_set.min(left);
            hi_set = hi_set.max(left);
            left = env.next_open(left - 1, -1);
        }
        count += 1;
    }
    let fired = (lo_fired <= hi_fired).then_some(Interval { lo: lo_fired, hi: hi_fired });
    PercolatedExtent { fired, settled: Interval { lo: lo_set, hi: hi_set }, settled_count: count }
}

/// Depth `T in [0, d - 1]` of the far-side excursion of a walker from 0 that
/// exits at distance `r` before reaching distance `d` on the other side.
fn excursion(r: Site, d: Site, u: f64) -> Site {
    let (r, d) = (r as f64, d as f64);
    let t = (r * d * (1.0 - u) / (r + u * d)).floor();
    (t.max(0.0) as Site).min(d as Site - 1)
}

/// Occupancy of the settled sites as a configuration.
pub fn settled_configuration(sites: &[Site]) -> Configuration {
    Configuration::from_sites(sites.iter().map(|&x| (x, SiteState::Active(1))))
}
