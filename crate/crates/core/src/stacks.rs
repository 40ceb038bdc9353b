//! Instruction stacks.
//!
//! Every site `x` carries an infinite stack of i.i.d. instructions. Cells are
//! produced by a counter-based map `(seed, x, k) -> instruction`, so any cell
//! can be read in O(1) without consuming a stream, and a shifted family
//! `k -> k + f(x)` is just an index offset. This is what makes the stack
//! couplings replayable bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, ArwError, Result};
use crate::Site;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SITE_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const SEED_SALT: u64 = 0x5851_F42D_4C95_7F2D;

/// SplitMix64 finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instruction {
    Sleep,
    StepLeft,
    StepRight,
}

impl Instruction {
    /// Displacement of a step instruction; `0` for `Sleep`.
    #[inline]
    pub fn displacement(self) -> i64 {
        match self {
            Instruction::Sleep => 0,
            Instruction::StepLeft => -1,
            Instruction::StepRight => 1,
        }
    }

    pub fn is_step(self) -> bool {
        self != Instruction::Sleep
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Instruction::Sleep => "s",
            Instruction::StepLeft => "L",
            Instruction::StepRight => "R",
        })
    }
}

/// Sleep rate `lambda` in `(0, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SleepRate {
    lambda: f64,
}

impl SleepRate {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(invalid(format!("sleep rate must be positive, got {lambda}")));
        }
        Ok(SleepRate { lambda })
    }

    pub fn infinite() -> Self {
        SleepRate { lambda: f64::INFINITY }
    }

    pub fn lambda(self) -> f64 {
        self.lambda
    }

    pub fn is_infinite(self) -> bool {
        self.lambda.is_infinite()
    }

    /// Probability that a cell holds `Sleep`: `lambda / (1 + lambda)`, and 0
    /// for the infinite rate (whose stacks carry only steps).
    pub fn sleep_probability(self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            self.lambda / (1.0 + self.lambda)
        }
    }
}

impl fmt::Display for SleepRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.lambda)
        }
    }
}

impl std::str::FromStr for SleepRate {
    type Err = ArwError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" | "INF" => Ok(SleepRate::infinite()),
            t => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| invalid(format!("cannot parse sleep rate {t:?}")))?;
                SleepRate::new(v)
            }
        }
    }
}

// JSON has no infinity; the infinite rate travels as the string "inf".
impl Serialize for SleepRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.lambda)
        }
    }
}

impl<'de> Deserialize<'de> for SleepRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let rate = match Raw::deserialize(d)? {
            Raw::Num(v) => SleepRate::new(v),
            Raw::Str(s) => s.parse(),
        };
        rate.map_err(serde::de::Error::custom)
    }
}

/// Finitely supported index shift `f : Z -> N`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StackShift {
    support: BTreeMap<Site, u64>,
}

impl StackShift {
    pub fn zero() -> Self {
        StackShift::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Site, u64)>) -> Self {
        let mut shift = StackShift::zero();
        for (x, v) in pairs {
            shift.add_at(x, v);
        }
        shift
    }

    pub fn get(&self, x: Site) -> u64 {
        self.support.get(&x).copied().unwrap_or(0)
    }

    pub fn add_at(&mut self, x: Site, v: u64) {
        if v > 0 {
            *self.support.entry(x).or_insert(0) += v;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.support.iter().map(|(&x, &v)| (x, v))
    }
}

impl Add for &StackShift {
    type Output = StackShift;

    fn add(self, other: &StackShift) -> StackShift {
        let mut out = self.clone();
        for (x, v) in other.iter() {
            out.add_at(x, v);
        }
        out
    }
}

/// Pure, immutable map `(x, k) -> instruction` realizing the stacks.
#[derive(Clone, Debug)]
pub struct InstructionSource {
    seed: u64,
    rate: SleepRate,
    seed_key: u64,
    sleep_cut: u64,
    has_sleep: bool,
    offset: Arc<StackShift>,
}

impl PartialEq for InstructionSource {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.rate == other.rate && self.offset == other.offset
    }
}

impl InstructionSource {
    pub fn new(seed: u64, rate: SleepRate) -> Self {
        let p = rate.sleep_probability();
        // Sleep iff the 53-bit uniform u satisfies u <= p; comparing the
        // integer mantissa against floor(p * 2^53) is the same test.
        let sleep_cut = if rate.is_infinite() {
            0
        } else {
            (p * (1u64 << 53) as f64).floor() as u64
        };
        InstructionSource {
            seed,
            rate,
            seed_key: mix64(seed ^ SEED_SALT),
            sleep_cut,
            has_sleep: !rate.is_infinite(),
            offset: Arc::new(StackShift::zero()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rate(&self) -> SleepRate {
        self.rate
    }

    pub fn offsets(&self) -> &StackShift {
        &self.offset
    }

    /// Current shift at `x`.
    #[inline]
    pub fn offset(&self, x: Site) -> u64 {
        if self.offset.is_zero() {
            0
        } else {
            self.offset.get(x)
        }
    }

    /// Per-site key; combined with a logical index by [`Self::cell`].
    #[inline]
    pub fn site_key(&self, x: Site) -> u64 {
        mix64(self.seed_key.wrapping_add((x as u64).wrapping_mul(SITE_MUL)))
    }

    /// Key of the shifted stack at `x`: `cell(stack_key(x), k)` is the
    /// `k`-th instruction of that stack.
    #[inline]
    pub fn stack_key(&self, x: Site) -> u64 {
        self.site_key(x).wrapping_add(self.offset(x).wrapping_mul(GOLDEN))
    }

    /// Instruction at logical (unshifted) index `index >= 1` of the stack
    /// whose key is `key`.
    #[inline(always)]
    pub fn cell(&self, key: u64, index: u64) -> Instruction {
        let bits = mix64(key.wrapping_add(index.wrapping_mul(GOLDEN)));
        if self.has_sleep && (bits >> 11) <= self.sleep_cut {
            Instruction::Sleep
        } else if bits & 1 == 0 {
            Instruction::StepLeft
        } else {
            Instruction::StepRight
        }
    }

    /// Displacement of the instruction [`Self::cell`] returns: 0 for sleep,
    /// otherwise -1 or +1. Branch-free.
    #[inline(always)]
    pub fn cell_step(&self, key: u64, index: u64) -> i64 {
        let bits = mix64(key.wrapping_add(index.wrapping_mul(GOLDEN)));
        let sleep = self.has_sleep & ((bits >> 11) <= self.sleep_cut);
        let dir = ((bits & 1) as i64) * 2 - 1;
        dir * i64::from(!sleep)
    }

    /// `k`-th instruction of the (possibly shifted) stack at `x`.
    pub fn draw(&self, x: Site, k: u64) -> Result<Instruction> {
        if k < 1 {
            return Err(ArwError::StackIndex(k));
        }
        Ok(self.cell(self.site_key(x), k + self.offset(x)))
    }

    /// Source with `draw(result, x, k) == draw(self, x, k + f(x))`.
    pub fn shift(&self, f: &StackShift) -> InstructionSource {
        let mut out = self.clone();
        if !f.is_zero() {
            out.offset = Arc::new(&*self.offset + f);
        }
        out
    }
}

/// Pooled empirical frequencies of the three instruction kinds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawTable {
    pub sleep: u64,
    pub left: u64,
    pub right: u64,
}

impl LawTable {
    pub fn record(&mut self, ins: Instruction) {
        match ins {
            Instruction::Sleep => self.sleep += 1,
            Instruction::StepLeft => self.left += 1,
            Instruction::StepRight => self.right += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.sleep + self.left + self.right
    }

    /// `(sleep, left, right)` frequencies.
    pub fn frequencies(&self) -> (f64, f64, f64) {
        let t = self.total().max(1) as f64;
        (self.sleep as f64 / t, self.left as f64 / t, self.right as f64 / t)
    }

    pub fn counts(&self) -> [u64; 3] {
        [self.sleep, self.left, self.right]
    }
}

/// Frequencies of the first `m` unread instructions at each of `sites`.
pub fn empirical_law(source: &InstructionSource, sites: &[Site], m: u64) -> Result<LawTable> {
    if m < 1 {
        return Err(invalid("empirical_law needs m >= 1"));
    }
    let mut table = LawTable::default();
    for &x in sites {
        let key = source.site_key(x);
        let base = source.offset(x);
        for k in 1..=m {
            table.record(source.cell(key, base + k));
        }
    }
    Ok(table)
}
