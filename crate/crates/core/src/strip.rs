//! Dense growable lattice window shared by every engine.

use crate::config::{Configuration, Interval, Odometer, SiteState};
use crate::idla::PercolationEnv;
use crate::stacks::InstructionSource;
use crate::Site;

pub(crate) const QUEUED: u8 = 1;
/// Walkers may settle here.
pub(crate) const OPEN: u8 = 2;
/// Walkers arriving here die.
pub(crate) const SINK: u8 = 4;

/// Walkers advanced together by [`Strip::release`].
const LANES: usize = 4;

/// Static site marks of a strip.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Marks {
    /// Every site is open.
    Plain,
    Percolation(PercolationEnv),
    /// Open exactly on multiples of the spacing.
    Grid(Site),
    /// Open inside the interval, sink outside.
    Killed(Interval),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    /// 0 empty, -1 sleeping, n >= 1 active.
    pub occ: i32,
    pub flags: u8,
    pub odo: u64,
    pub key: u64,
}

pub(crate) struct Strip<'a> {
    src: &'a InstructionSource,
    marks: Marks,
    lo: Site,
    pub cells: Vec<Cell>,
}

pub(crate) enum WalkEnd {
    /// Walker stopped at this site (not yet placed).
    Stopped(Site),
    Killed,
    Capped,
}

impl<'a> Strip<'a> {
    pub fn new(src: &'a InstructionSource, marks: Marks, window: Interval) -> Self {
        let mut s = Strip { src, marks, lo: window.lo, cells: Vec::with_capacity(window.len() as usize) };
        for x in window.sites() {
            let c = s.fresh(x);
            s.cells.push(c);
        }
        s
    }

    fn fresh(&self, x: Site) -> Cell {
        let flags = match self.marks {
            Marks::Plain => OPEN,
            Marks::Percolation(e) if e.is_open(x) => OPEN,
            Marks::Percolation(_) => 0,
            Marks::Grid(step) if x.rem_euclid(step) == 0 => OPEN,
            Marks::Grid(_) => 0,
            Marks::Killed(i) if i.contains(x) => OPEN,
            Marks::Killed(_) => SINK,
        };
        Cell { occ: 0, flags, odo: 0, key: self.src.stack_key(x) }
    }

    #[inline]
    pub fn hi(&self) -> Site {
        self.lo + self.cells.len() as Site - 1
    }

    /// Index of `x`, growing the window geometrically when needed.
    #[inline]
    pub fn index(&mut self, x: Site) -> usize {
        let i = x.wrapping_sub(self.lo) as usize;
        if i < self.cells.len() {
            return i;
        }
        self.grow(x);
        (x - self.lo) as usize
    }

    #[cold]
    fn grow(&mut self, x: Site) {
        let extra = self.cells.len().max(16) as Site;
        if x < self.lo {
            let new_lo = x.min(self.lo - extra);
            let mut cells: Vec<Cell> = (new_lo..self.lo).map(|y| self.fresh(y)).collect();
            cells.append(&mut self.cells);
            self.cells = cells;
            self.lo = new_lo;
        } else {
            let new_hi = x.max(self.hi() + extra);
            let start = self.hi() + 1;
            for y in start..=new_hi {
                let c = self.fresh(y);
                self.cells.push(c);
            }
        }
    }

    #[inline]
    pub fn site(&self, i: usize) -> Site {
        self.lo + i as Site
    }

    /// Consume the next instruction at cell `i`, returning its displacement.
    #[inline(always)]
    pub fn consume_step(&mut self, i: usize) -> Site {
        let c = &mut self.cells[i];
        c.odo += 1;
        self.src.cell_step(c.key, c.odo)
    }

    pub fn preload_odometer(&mut self, u: &Odometer) {
        for (x, v) in u.iter() {
            let i = self.index(x);
            self.cells[i].odo += v;
        }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::from_dense(self.lo, self.cells.iter().map(|c| SiteState::decode(c.occ)).collect())
    }

    pub fn odometer(&self) -> Odometer {
        Odometer::from_dense(self.lo, self.cells.iter().map(|c| c.odo).collect())
    }

    /// Move a lone walker from `start`, reading instructions at its current
    /// site and skipping sleeps, until it reaches a vacant open site or a
    /// sink. Sites where the walker stops or dies are not fired.
    pub fn walk(&mut self, start: Site, cap: u64) -> WalkEnd {
        let mut x = start;
        let mut budget = cap;
        loop {
            let i = self.index(x);
            let c = self.cells[i];
            if c.flags & SINK != 0 {
                return WalkEnd::Killed;
            }
            if c.occ == 0 && c.flags & OPEN != 0 {
                return WalkEnd::Stopped(x);
            }
            if budget == 0 {
                return WalkEnd::Capped;
            }
            budget -= 1;
            x += self.consume_step(i);
        }
    }

    /// Release `count` walkers from `start` as in [`Self::walk`], running
    /// several at once. Each walker settles (`occ = 1`) at the first vacant
    /// open site it meets and is reported to `settle`. IDLA is abelian, so
    /// the final occupancy and odometer do not depend on the interleaving.
    /// Returns the number of walkers that died on a sink, or `None` if one
    /// walker used up `cap` steps.
    pub fn release(&mut self, start: Site, count: u64, cap: u64, mut settle: impl FnMut(Site)) -> Option<u64> {
        let mut pos = [start; LANES];
        let mut used = [0u64; LANES];
        let mut live = [false; LANES];
        let mut released = 0;
        for l in live.iter_mut().take(count.min(LANES as u64) as usize) {
            *l = true;
            released += 1;
        }
        let mut kills = 0;
        let mut running = released;
        while running > 0 {
            for l in 0..LANES {
                if !live[l] {
                    continue;
                }
                let x = pos[l];
                let i = self.index(x);
                let c = self.cells[i];
                let done = if c.flags & SINK != 0 {
                    kills += 1;
                    true
                } else if c.occ == 0 && c.flags & OPEN != 0 {
                    self.cells[i].occ = 1;
                    settle(x);
                    true
                } else {
                    if used[l] == cap {
                        return None;
                    }
                    used[l] += 1;
                    pos[l] = x + self.consume_step(i);
                    false
                };
                if done {
                    if released < count {
                        released += 1;
                        pos[l] = start;
                        used[l] = 0;
                    } else {
                        live[l] = false;
                        running -= 1;
                    }
                }
            }
        }
        Some(kills)
    }
}
