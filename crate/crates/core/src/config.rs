//! Particle configurations, odometers and stabilization regions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ArwError, Result};
use crate::Site;

/// State of one site, ordered `0 < s < 1 < 2 < ...`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SiteState {
    #[default]
    Empty,
    Sleeping,
    Active(u32),
}

impl SiteState {
    /// Number of particles, counting a sleeper as one.
    pub fn count(self) -> u64 {
        match self {
            SiteState::Empty => 0,
            SiteState::Sleeping => 1,
            SiteState::Active(n) => n as u64,
        }
    }

    pub fn is_empty(self) -> bool {
        self.count() == 0
    }

    pub fn is_active(self) -> bool {
        matches!(self, SiteState::Active(n) if n > 0)
    }

    fn rank(self) -> u64 {
        match self {
            SiteState::Empty => 0,
            SiteState::Sleeping => 1,
            SiteState::Active(n) => n as u64 + 1,
        }
    }

    pub(crate) fn encode(self) -> i32 {
        match self {
            SiteState::Empty | SiteState::Active(0) => 0,
            SiteState::Sleeping => -1,
            SiteState::Active(n) => n as i32,
        }
    }

    pub(crate) fn decode(v: i32) -> SiteState {
        match v {
            0 => SiteState::Empty,
            -1 => SiteState::Sleeping,
            n => SiteState::Active(n as u32),
        }
    }
}

impl PartialOrd for SiteState {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SiteState {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for SiteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteState::Empty => f.write_str("0"),
            SiteState::Sleeping => f.write_str("s"),
            SiteState::Active(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for SiteState {
    type Err = ArwError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "s" => Ok(SiteState::Sleeping),
            "0" => Ok(SiteState::Empty),
            t => t
                .parse::<u32>()
                .map(SiteState::Active)
                .map_err(|_| invalid(format!("bad site state {t:?}"))),
        }
    }
}

/// Closed integer interval `[lo, hi]`, `lo <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Site,
    pub hi: Site,
}

impl Interval {
    pub fn new(lo: Site, hi: Site) -> Result<Self> {
        if lo > hi {
            return Err(invalid(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// `[-r, r]`.
    pub fn ball(r: u64) -> Self {
        Interval { lo: -(r as Site), hi: r as Site }
    }

    /// The centered interval of `len` sites; the extra site of an even
    /// length goes to the right.
    pub fn centered(len: u64) -> Result<Self> {
        if len == 0 {
            return Err(invalid("interval length must be positive"));
        }
        let lo = -(((len - 1) / 2) as Site);
        Ok(Interval { lo, hi: lo + len as Site - 1 })
    }

    pub fn len(&self) -> u64 {
        (self.hi - self.lo) as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: Site) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Outer boundary `{lo - 1, hi + 1}`.
    pub fn boundary(&self) -> (Site, Site) {
        (self.lo - 1, self.hi + 1)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Stabilization domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    WholeLine,
    /// Particles stepping onto `lo - 1` or `hi + 1` are killed.
    Killed(Interval),
}

impl Region {
    pub fn interval(lo: Site, hi: Site) -> Result<Self> {
        Interval::new(lo, hi).map(Region::Killed)
    }

    pub fn contains(&self, x: Site) -> bool {
        match self {
            Region::WholeLine => true,
            Region::Killed(i) => i.contains(x),
        }
    }
}

/// Finitely supported configuration `eta : Z -> N_s`, stored densely over a
/// bounding window.
#[derive(Clone, Default)]
pub struct Configuration {
    lo: Site,
    cells: Vec<SiteState>,
}

impl Configuration {
    pub fn empty() -> Self {
        Configuration::default()
    }

    /// `n` active particles at `x`.
    pub fn point(x: Site, n: u32) -> Self {
        let mut c = Configuration::empty();
        if n > 0 {
            c.set(x, SiteState::Active(n));
        }
        c
    }

    /// One active particle on every site of `interval`.
    pub fn indicator(interval: Interval) -> Self {
        Configuration {
            lo: interval.lo,
            cells: vec![SiteState::Active(1); interval.len() as usize],
        }
    }

    pub fn from_sites(sites: impl IntoIterator<Item = (Site, SiteState)>) -> Self {
        let mut c = Configuration::empty();
        for (x, s) in sites {
            c.set(x, s);
        }
        c
    }

    pub(crate) fn from_dense(lo: Site, cells: Vec<SiteState>) -> Self {
        let mut c = Configuration { lo, cells };
        c.trim();
        c
    }

    pub fn get(&self, x: Site) -> SiteState {
        let i = x - self.lo;
        if i < 0 || i as usize >= self.cells.len() {
            SiteState::Empty
        } else {
            self.cells[i as usize]
        }
    }

    pub fn set(&mut self, x: Site, state: SiteState) {
        let state = if state == SiteState::Active(0) { SiteState::Empty } else { state };
        if self.cells.is_empty() {
            if state.is_empty() {
                return;
            }
            self.lo = x;
            self.cells.push(state);
            return;
        }
        if x < self.lo {
            if state.is_empty() {
                return;
            }
            let extra = (self.lo - x) as usize;
            let mut cells = vec![SiteState::Empty; extra];
            cells.append(&mut self.cells);
            self.cells = cells;
            self.lo = x;
        }
        let i = (x - self.lo) as usize;
        if i >= self.cells.len() {
            if state.is_empty() {
                return;
            }
            self.cells.resize(i + 1, SiteState::Empty);
        }
        self.cells[i] = state;
        self.trim();
    }

    /// Add `n` active particles at `x`, waking a sleeper.
    pub fn add_active(&mut self, x: Site, n: u32) {
        let next = match self.get(x) {
            SiteState::Empty => n,
            SiteState::Sleeping => n + 1,
            SiteState::Active(m) => m + n,
        };
        self.set(x, SiteState::Active(next));
    }

    fn trim(&mut self) {
        let first = self.cells.iter().position(|s| !s.is_empty());
        match first {
            None => {
                self.cells.clear();
                self.lo = 0;
            }
            Some(f) => {
                let last = self.cells.iter().rposition(|s| !s.is_empty()).unwrap();
                self.cells.truncate(last + 1);
                if f > 0 {
                    self.cells.drain(..f);
                    self.lo += f as Site;
                }
            }
        }
    }

    /// Smallest interval containing every particle.
    pub fn bounds(&self) -> Option<Interval> {
        if self.cells.is_empty() {
            None
        } else {
            Some(Interval { lo: self.lo, hi: self.lo + self.cells.len() as Site - 1 })
        }
    }

    /// Non-empty sites in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, SiteState)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(move |(i, &s)| (self.lo + i as Site, s))
    }

    /// `|eta|`.
    pub fn total(&self) -> u64 {
        self.cells.iter().map(|s| s.count()).sum()
    }

    /// `|eta|_I`.
    pub fn total_in(&self, interval: Interval) -> u64 {
        interval.sites().map(|x| self.get(x).count()).sum()
    }

    pub fn occupied_sites(&self) -> usize {
        self.iter().count()
    }

    pub fn sleeping_count(&self) -> u64 {
        self.cells.iter().filter(|s| **s == SiteState::Sleeping).count() as u64
    }

    pub fn active_count(&self) -> u64 {
        self.cells
            .iter()
            .map(|s| if let SiteState::Active(n) = s { *n as u64 } else { 0 })
            .sum()
    }

    pub fn restrict(&self, interval: Interval) -> Configuration {
        Configuration::from_sites(self.iter().filter(|(x, _)| interval.contains(*x)))
    }

    /// `site<TAB>state` per non-empty site, sorted by site.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (x, s) in self.iter() {
            out.push_str(&format!("{x}\t{s}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut c = Configuration::empty();
        let mut last: Option<Site> = None;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (x, s) = split_tsv(line, line_no + 1)?;
            let x: Site = x.parse().map_err(|_| ArwError::Parse {
                line: line_no + 1,
                reason: format!("bad site {x:?}"),
            })?;
            if last.is_some_and(|l| l >= x) {
                return Err(ArwError::Parse { line: line_no + 1, reason: "sites not sorted".into() });
            }
            last = Some(x);
            let s: SiteState = s
                .parse()
                .map_err(|e: ArwError| ArwError::Parse { line: line_no + 1, reason: e.to_string() })?;
            c.set(x, s);
        }
        Ok(c)
    }
}

fn split_tsv(line: &str, line_no: usize) -> Result<(&str, &str)> {
    line.split_once('\t').ok_or_else(|| ArwError::Parse {
        line: line_no,
        reason: "expected site<TAB>value".into(),
    })
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Eq for Configuration {}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter().map(|(x, s)| (x, s.to_string()))).finish()
    }
}

/// Fire counts `u : Z -> N`.
#[derive(Clone, Default)]
pub struct Odometer {
    lo: Site,
    counts: Vec<u64>,
}

impl Odometer {
    pub fn zero() -> Self {
        Odometer::default()
    }

    pub(crate) fn from_dense(lo: Site, counts: Vec<u64>) -> Self {
        let mut u = Odometer { lo, counts };
        u.trim();
        u
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Site, u64)>) -> Self {
        let mut u = Odometer::zero();
        for (x, v) in pairs {
            u.add_at(x, v);
        }
        u
    }

    pub fn get(&self, x: Site) -> u64 {
        let i = x - self.lo;
        if i < 0 || i as usize >= self.counts.len() {
            0
        } else {
            self.counts[i as usize]
        }
    }

    pub fn add_at(&mut self, x: Site, v: u64) {
        if v == 0 {
            return;
        }
        if self.counts.is_empty() {
            self.lo = x;
            self.counts.push(0);
        } else if x < self.lo {
            let extra = (self.lo - x) as usize;
            let mut counts = vec![0; extra];
            counts.append(&mut self.counts);
            self.counts = counts;
            self.lo = x;
        }
        let i = (x - self.lo) as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += v;
    }

    fn trim(&mut self) {
        match self.counts.iter().position(|&c| c > 0) {
            None => {
                self.counts.clear();
                self.lo = 0;
            }
            Some(f) => {
                let last = self.counts.iter().rposition(|&c| c > 0).unwrap();
                self.counts.truncate(last + 1);
                if f > 0 {
                    self.counts.drain(..f);
                    self.lo += f as Site;
                }
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sites with a positive count, in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(move |(i, &c)| (self.lo + i as Site, c))
    }

    /// Smallest interval containing every fired site.
    pub fn support(&self) -> Option<Interval> {
        if self.counts.is_empty() {
            None
        } else {
            Some(Interval { lo: self.lo, hi: self.lo + self.counts.len() as Site - 1 })
        }
    }

    /// Number of fired sites.
    pub fn support_size(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Pointwise `self <= other`.
    pub fn le(&self, other: &Odometer) -> bool {
        self.iter().all(|(x, c)| c <= other.get(x))
    }

    /// Sites where `self(x) > other(x)`.
    pub fn exceedances(&self, other: &Odometer) -> Vec<Site> {
        self.iter().filter(|&(x, c)| c > other.get(x)).map(|(x, _)| x).collect()
    }

    pub fn restrict(&self, interval: Interval) -> Odometer {
        Odometer::from_pairs(self.iter().filter(|(x, _)| interval.contains(*x)))
    }

    pub fn to_shift(&self) -> crate::StackShift {
        crate::StackShift::from_pairs(self.iter())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (x, c) in self.iter() {
            out.push_str(&format!("{x}\t{c}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut u = Odometer::zero();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (x, c) = split_tsv(line, line_no + 1)?;
            let parse_err = |what: &str| ArwError::Parse { line: line_no + 1, reason: format!("bad {what}") };
            let x: Site = x.trim().parse().map_err(|_| parse_err("site"))?;
            let c: u64 = c.trim().parse().map_err(|_| parse_err("count"))?;
            u.add_at(x, c);
        }
        Ok(u)
    }
}

impl std::ops::Add for &Odometer {
    type Output = Odometer;

    fn add(self, other: &Odometer) -> Odometer {
        let mut out = self.clone();
        for (x, c) in other.iter() {
            out.add_at(x, c);
        }
        out
    }
}

impl PartialEq for Odometer {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Eq for Odometer {}

impl fmt::Debug for Odometer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_order() {
        assert!(SiteState::Empty < SiteState::Sleeping);
        assert!(SiteState::Sleeping < SiteState::Active(1));
        assert!(SiteState::Active(1) < SiteState::Active(2));
        assert_eq!(SiteState::Sleeping.count(), 1);
    }

    #[test]
    fn set_trims_and_compares_by_content() {
        let mut c = Configuration::point(5, 2);
        c.set(-3, SiteState::Sleeping);
        c.set(5, SiteState::Empty);
        assert_eq!(c, Configuration::from_sites([(-3, SiteState::Sleeping)]));
        assert_eq!(c.bounds(), Some(Interval { lo: -3, hi: -3 }));
        c.set(-3, SiteState::Empty);
        assert_eq!(c.bounds(), None);
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn add_active_wakes_sleeper() {
        let mut c = Configuration::from_sites([(1, SiteState::Sleeping)]);
        c.add_active(1, 1);
        assert_eq!(c.get(1), SiteState::Active(2));
    }

    #[test]
    fn tsv_roundtrip_and_errors() {
        let c = Configuration::from_sites([(-2, SiteState::Sleeping), (0, SiteState::Active(3)), (4, SiteState::Active(1))]);
        let text = c.to_tsv();
        assert_eq!(text, "-2\ts\n0\t3\n4\t1\n");
        assert_eq!(Configuration::from_tsv(&text).unwrap(), c);
        assert!(Configuration::from_tsv("1\t2\n0\t1\n").is_err());
        assert!(Configuration::from_tsv("1 2\n").is_err());

        let u = Odometer::from_pairs([(0, 2), (1, 1)]);
        assert_eq!(u.to_tsv(), "0\t2\n1\t1\n");
        assert_eq!(Odometer::from_tsv(&u.to_tsv()).unwrap(), u);
    }

    #[test]
    fn odometer_order_and_support() {
        let a = Odometer::from_pairs([(0, 2), (3, 1)]);
        let b = Odometer::from_pairs([(0, 2), (1, 5), (3, 4)]);
        assert!(a.le(&b));
        assert!(!b.le(&a));
        assert_eq!(b.exceedances(&a), vec![1, 3]);
        assert_eq!(a.support(), Some(Interval { lo: 0, hi: 3 }));
        assert_eq!(a.support_size(), 2);
        assert_eq!((&a + &b).total(), a.total() + b.total());
    }

    #[test]
    fn centered_interval() {
        assert_eq!(Interval::centered(5).unwrap(), Interval { lo: -2, hi: 2 });
        assert_eq!(Interval::centered(4).unwrap(), Interval { lo: -1, hi: 2 });
        assert_eq!(Interval::centered(1).unwrap(), Interval { lo: 0, hi: 0 });
        assert!(Interval::new(2, 1).is_err());
    }
}
