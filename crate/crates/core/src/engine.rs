//! Firing semantics and the stabilization engines.
//!
//! All engines read the same stack family through a [`Strip`] window. The
//! worklist engine performs legal firings (ARW or IDLA sense) until stable;
//! by the Abelian property the stable configuration and the odometer do not
//! depend on the [`FiringPolicy`].

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Configuration, Interval, Odometer, Region, SiteState};
use crate::error::{invalid, ArwError, Result};
use crate::stacks::{InstructionSource, Instruction};
use crate::strip::{Marks, Strip, QUEUED};
use crate::Site;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Unstable where an active particle sits.
    Arw,
    /// Unstable where two or more particles sit; sleep cells are no-ops.
    Idla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FiringPolicy {
    /// Queue of unstable sites, re-enqueued while unstable.
    #[default]
    Fifo,
    /// Stack of unstable sites; follows the particle that just moved.
    Lifo,
    LeftmostFirst,
    /// Uniformly random unstable site, driven by the given seed.
    Random(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Legality {
    Legal,
    Acceptable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Stable,
    StepCapExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FireOutcome {
    Moved { to: Site },
    Killed { at: Site },
    FellAsleep,
    NoOp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilizationResult {
    pub final_config: Configuration,
    pub odometer: Odometer,
    /// Firings performed by this run.
    pub steps: u64,
    /// Particles removed at a sink.
    pub kills: u64,
    pub status: Status,
}

impl StabilizationResult {
    pub fn is_stable(&self) -> bool {
        self.status == Status::Stable
    }

    /// Sites that fired at least once.
    pub fn fired_set(&self) -> Option<Interval> {
        self.odometer.support()
    }
}

/// Default firing budget for an `n`-particle point source: `10 n^4`, floored
/// at `10^7` so small systems are never capped by geometric tails.
pub fn default_step_cap(n: u64) -> u64 {
    let n = n as u128;
    let cap = 10 * n * n * n * n;
    cap.clamp(10_000_000, u64::MAX as u128) as u64
}

pub fn is_stable(c: &Configuration, mode: Mode) -> bool {
    c.iter().all(|(_, s)| match mode {
        Mode::Arw => !s.is_active(),
        Mode::Idla => s.count() <= 1,
    })
}

/// Fire `x` once, reading instruction `u(x) + 1` of its stack.
pub fn fire(
    c: &mut Configuration,
    src: &InstructionSource,
    u: &mut Odometer,
    x: Site,
    legality: Legality,
    region: Region,
) -> Result<FireOutcome> {
    if !region.contains(x) {
        return Err(ArwError::OutsideRegion(x));
    }
    let count = match (c.get(x), legality) {
        (SiteState::Empty, _) | (SiteState::Active(0), _) => return Err(ArwError::FireEmpty(x)),
        (SiteState::Sleeping, Legality::Legal) => return Err(ArwError::FireSleeping(x)),
        (SiteState::Sleeping, Legality::Acceptable) => 1,
        (SiteState::Active(n), _) => n,
    };
    if count == 1 && src.rate().is_infinite() {
        // Infinite sleep rate: a lone particle falls asleep without reading
        // its stack.
        c.set(x, SiteState::Sleeping);
        return Ok(FireOutcome::FellAsleep);
    }
    let k = u.get(x) + 1;
    let ins = src.draw(x, k)?;
    u.add_at(x, 1);
    match ins {
        Instruction::Sleep if count == 1 => {
            c.set(x, SiteState::Sleeping);
            Ok(FireOutcome::FellAsleep)
        }
        Instruction::Sleep => {
            c.set(x, SiteState::Active(count));
            Ok(FireOutcome::NoOp)
        }
        step => {
            let y = x + step.displacement();
            c.set(x, if count == 1 { SiteState::Empty } else { SiteState::Active(count - 1) });
            if region.contains(y) {
                c.add_active(y, 1);
                Ok(FireOutcome::Moved { to: y })
            } else {
                Ok(FireOutcome::Killed { at: y })
            }
        }
    }
}

enum Worklist {
    Fifo(VecDeque<Site>),
    Lifo(Vec<Site>),
    Leftmost(BTreeSet<Site>),
    Random(Vec<Site>, ChaCha8Rng),
}

impl Worklist {
    fn new(policy: FiringPolicy) -> Self {
        match policy {
            FiringPolicy::Fifo => Worklist::Fifo(VecDeque::new()),
            FiringPolicy::Lifo => Worklist::Lifo(Vec::new()),
            FiringPolicy::LeftmostFirst => Worklist::Leftmost(BTreeSet::new()),
            FiringPolicy::Random(seed) => Worklist::Random(Vec::new(), ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    #[inline]
    fn push(&mut self, x: Site) {
        match self {
            Worklist::Fifo(q) => q.push_back(x),
            Worklist::Lifo(s) => s.push(x),
            Worklist::Leftmost(s) => {
                s.insert(x);
            }
            Worklist::Random(v, _) => v.push(x),
        }
    }

    #[inline]
    fn pop(&mut self) -> Option<Site> {
        match self {
            Worklist::Fifo(q) => q.pop_front(),
            Worklist::Lifo(s) => s.pop(),
            Worklist::Leftmost(s) => s.pop_first(),
            Worklist::Random(v, rng) => {
                if v.is_empty() {
                    None
                } else {
                    let i = rng.random_range(0..v.len());
                    Some(v.swap_remove(i))
                }
            }
        }
    }
}

/// Worklist stabilizer over a strip.
pub(crate) struct Stabilizer<'a> {
    pub strip: Strip<'a>,
    mode: Mode,
    killed: Option<Interval>,
    infinite: bool,
    pub steps: u64,
    pub kills: u64,
}

impl<'a> Stabilizer<'a> {
    pub fn new(src: &'a InstructionSource, region: Region, mode: Mode, c: &Configuration) -> Self {
        let (window, killed) = match region {
            Region::WholeLine => {
                let b = c.bounds().unwrap_or(Interval { lo: 0, hi: 0 });
                (Interval { lo: b.lo - 8, hi: b.hi + 8 }, None)
            }
            Region::Killed(i) => (Interval { lo: i.lo - 1, hi: i.hi + 1 }, Some(i)),
        };
        let mut strip = Strip::new(src, Marks::Plain, window);
        let mut kills = 0;
        for (x, s) in c.iter() {
            if killed.is_none_or(|i| i.contains(x)) {
                let i = strip.index(x);
                strip.cells[i].occ = s.encode();
            } else {
                kills += s.count();
            }
        }
        Stabilizer { strip, mode, killed, infinite: src.rate().is_infinite(), steps: 0, kills }
    }

    #[inline(always)]
    fn unstable(&self, occ: i32) -> bool {
        match self.mode {
            Mode::Arw => occ >= 1,
            Mode::Idla => occ >= 2,
        }
    }

    /// Add `n` active particles at `x` (inside the region).
    pub fn add_active(&mut self, x: Site, n: i32) {
        let i = self.strip.index(x);
        let occ = &mut self.strip.cells[i].occ;
        *occ = if *occ == -1 { n + 1 } else { *occ + n };
    }

    #[inline(always)]
    fn enqueue(&mut self, work: &mut Worklist, x: Site, i: usize) {
        let c = self.strip.cells[i];
        if c.flags & QUEUED == 0 && self.unstable(c.occ) {
            self.strip.cells[i].flags |= QUEUED;
            work.push(x);
        }
    }

    /// Fire until stable. Under `Lifo` the engine follows each moved
    /// particle to its new site; otherwise it drains the popped site and
    /// queues the sites particles land on.
    pub fn run(&mut self, policy: FiringPolicy, cap: u64) -> Status {
        let follow = policy == FiringPolicy::Lifo;
        let mut work = Worklist::new(policy);
        for i in 0..self.strip.cells.len() {
            let x = self.strip.site(i);
            self.enqueue(&mut work, x, i);
        }
        let sink = self.killed.map(|i| i.boundary());
        while let Some(x0) = work.pop() {
            let mut x = x0;
            let mut i = self.strip.index(x0);
            self.strip.cells[i].flags &= !QUEUED;
            loop {
                let occ = self.strip.cells[i].occ;
                if !self.unstable(occ) {
                    break;
                }
                if occ == 1 && self.infinite {
                    self.strip.cells[i].occ = -1;
                    break;
                }
                if self.steps >= cap {
                    self.enqueue(&mut work, x, i);
                    return Status::StepCapExceeded;
                }
                self.steps += 1;
                let d = self.strip.consume_step(i);
                if d == 0 {
                    if occ == 1 {
                        self.strip.cells[i].occ = -1;
                        break;
                    }
                    continue;
                }
                self.strip.cells[i].occ = occ - 1;
                let y = x + d;
                if let Some((a, b)) = sink {
                    if y == a || y == b {
                        self.kills += 1;
                        continue;
                    }
                }
                let j = self.strip.index(y);
                // Growth may have shifted indices.
                i = self.strip.index(x);
                let t = &mut self.strip.cells[j].occ;
                *t = if *t == -1 { 2 } else { *t + 1 };
                if follow {
                    self.enqueue(&mut work, x, i);
                    x = y;
                    i = j;
                } else {
                    self.enqueue(&mut work, y, j);
                }
            }
        }
        Status::Stable
    }

    pub fn finish(self, status: Status) -> StabilizationResult {
        StabilizationResult {
            final_config: self.strip.configuration(),
            odometer: self.strip.odometer(),
            steps: self.steps,
            kills: self.kills,
            status,
        }
    }
}

/// Legal ARW stabilization of `c` in `region`.
pub fn stabilize(
    c: &Configuration,
    src: &InstructionSource,
    region: Region,
    policy: FiringPolicy,
    cap: u64,
) -> StabilizationResult {
    let mut s = Stabilizer::new(src, region, Mode::Arw, c);
    let status = s.run(policy, cap);
    s.finish(status)
}

/// IDLA stabilization: only multiply occupied sites fire; sleep cells are
/// read and counted but never change the configuration.
pub fn stabilize_idla(c: &Configuration, src: &InstructionSource, region: Region, cap: u64) -> StabilizationResult {
    stabilize_idla_with(c, src, region, FiringPolicy::Fifo, cap)
}

pub fn stabilize_idla_with(
    c: &Configuration,
    src: &InstructionSource,
    region: Region,
    policy: FiringPolicy,
    cap: u64,
) -> StabilizationResult {
    let mut s = Stabilizer::new(src, region, Mode::Idla, c);
    let status = s.run(policy, cap);
    s.finish(status)
}

/// Killed stabilization of `l δ_a + 1_I + r δ_b` with sink `{a, b}`.
///
/// The boundary sites fire first, `l` and `r` times: a particle stepping into
/// `I` enters it, any other first move kills the particle, except that the
/// last particle at each boundary site may fall asleep there. Then `∂I` acts
/// as a sink. The returned configuration is restricted to `I`; boundary
/// deaths and boundary sleepers are both counted in `kills`.
pub fn boundary_source_stabilize(
    interval: Interval,
    l: u64,
    r: u64,
    src: &InstructionSource,
    cap: u64,
) -> Result<StabilizationResult> {
    let (a, b) = interval.boundary();
    let mut s = Stabilizer::new(src, Region::Killed(interval), Mode::Arw, &Configuration::indicator(interval));
    let mut boundary_odometer = Odometer::zero();
    for (site, count, inward) in [(a, l, Instruction::StepRight), (b, r, Instruction::StepLeft)] {
        for k in 1..=count {
            let ins = src.draw(site, k)?;
            if ins == inward {
                s.add_active(site + ins.displacement(), 1);
            } else {
                s.kills += 1;
            }
        }
        boundary_odometer.add_at(site, count);
    }
    let status = s.run(FiringPolicy::Fifo, cap);
    let mut res = s.finish(status);
    // The strip only counts firings inside I.
    res.odometer = &res.odometer.restrict(interval) + &boundary_odometer;
    res.final_config = res.final_config.restrict(interval);
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrapResult {
    /// Final configuration and combined odometer of both phases.
    pub result: StabilizationResult,
    /// Grid spacing used in the first phase.
    pub spacing: u64,
    /// Instructions read while spreading particles onto the grid.
    pub grid_phase_total: u64,
}

/// Grid spacing `2 ceil(c log n)`, at least 2.
pub fn trap_spacing(n: u64, c_lambda: f64) -> u64 {
    let raw = 2.0 * (c_lambda * (n as f64).ln()).ceil();
    (raw as u64).max(2)
}

/// The constant `C` for which a geometric number of moves before sleeping
/// exceeds `2 C log n` with probability at most `n^{-7/2}`:
/// `C = 7 / (4 log(1 + lambda))`.
pub fn trap_constant(lambda: f64) -> f64 {
    1.75 / (1.0 + lambda).ln()
}

/// Acceptable stabilization of `n δ_0` through a trap grid.
///
/// Particles leave the origin one at a time and walk (sleep cells are read
/// and overridden) until they reach an unoccupied point of the grid
/// `{k Δ}`; the resulting configuration is then stabilized by legal ARW
/// firings. The combined odometer dominates the legal one.
pub fn trap_stabilize(n: u64, src: &InstructionSource, c_lambda: f64, cap: u64) -> Result<TrapResult> {
    if n == 0 {
        return Err(invalid("trap_stabilize needs n >= 1"));
    }
    if src.rate().is_infinite() {
        return Err(invalid("trap_stabilize needs a finite sleep rate"));
    }
    if !(c_lambda > 0.0) {
        return Err(invalid("trap constant must be positive"));
    }
    let spacing = trap_spacing(n, c_lambda);
    let step = spacing as Site;
    let half = (n as Site) * step;
    let mut strip = Strip::new(src, Marks::Grid(step), Interval { lo: -half / 2 - 8, hi: half / 2 + 8 });
    let capped = strip.release(0, n, cap, |_| ()).is_none();
    let grid = strip.configuration();
    let grid_odometer = strip.odometer();
    let grid_phase_total = grid_odometer.total();
    if capped {
        let result = StabilizationResult {
            final_config: grid,
            odometer: grid_odometer,
            steps: grid_phase_total,
            kills: 0,
            status: Status::StepCapExceeded,
        };
        return Ok(TrapResult { result, spacing, grid_phase_total });
    }
    let mut s = Stabilizer::new(src, Region::WholeLine, Mode::Arw, &grid);
    s.strip.preload_odometer(&grid_odometer);
    let status = s.run(FiringPolicy::Fifo, cap.saturating_sub(grid_phase_total));
    let steps = s.steps + grid_phase_total;
    let mut result = s.finish(status);
    result.steps = steps;
    Ok(TrapResult { result, spacing, grid_phase_total })
}
