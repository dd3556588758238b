//! Random restrictions, coordinate collapses, and the coordinate maps that lift
//! points and lines of a derived cube back to the cube they came from.

use crate::bitset::BitSet;
use crate::cube::{cube_size, CoordDist, CubeError, CubeSet, LineTemplate, Side, WILDCARD};
use crate::rational::{self, int, Rational};
use crate::rng::rng_from_seed;
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RestrictError {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("coordinate {coord} out of range for dimension {n}")]
    CoordOutOfRange { coord: usize, n: usize },
    #[error("coordinate {0} listed twice")]
    Repeated(usize),
    #[error("|I| = {coords} but |z| = {values}")]
    LengthMismatch { coords: usize, values: usize },
    #[error("empty collapse block")]
    EmptyBlock,
    #[error("delta must lie in (0, 1], got {0}")]
    BadDelta(String),
    #[error("need k <= |S| = {s}, got k = {k}")]
    BadK { k: usize, s: usize },
    #[error("per-coordinate law must be nonnegative and sum to 1")]
    BadLaw,
}

/// Fixes the coordinates in `coords` to the symbols `z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restriction {
    pub n: usize,
    #[serde(rename = "I")]
    pub coords: Vec<usize>,
    pub z: Vec<u8>,
    #[serde(default, with = "rational::as_string_opt", skip_serializing_if = "Option::is_none")]
    pub delta: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn check_distinct(coords: &[usize], n: usize) -> Result<(), RestrictError> {
    let mut seen = vec![false; n];
    for &c in coords {
        if c >= n {
            return Err(RestrictError::CoordOutOfRange { coord: c, n });
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(RestrictError::Repeated(c));
        }
    }
    Ok(())
}

impl Restriction {
    /// Sorts `(coords, z)` by coordinate.
    pub fn new(n: usize, coords: Vec<usize>, z: Vec<u8>) -> Result<Self, RestrictError> {
        if coords.len() != z.len() {
            return Err(RestrictError::LengthMismatch {
                coords: coords.len(),
                values: z.len(),
            });
        }
        check_distinct(&coords, n)?;
        if let Some(&s) = z.iter().find(|&&s| s > 2) {
            return Err(CubeError::BadSymbol {
                symbol: s,
                side: Side::Full,
            }
            .into());
        }
        let mut pairs: Vec<(usize, u8)> = coords.into_iter().zip(z).collect();
        pairs.sort_unstable();
        Ok(Restriction {
            n,
            coords: pairs.iter().map(|p| p.0).collect(),
            z: pairs.iter().map(|p| p.1).collect(),
            delta: None,
            seed: None,
        })
    }

    pub fn empty(n: usize) -> Self {
        Restriction {
            n,
            coords: vec![],
            z: vec![],
            delta: None,
            seed: None,
        }
    }

    /// Coordinates left alive, in increasing order.
    pub fn surviving(&self) -> Vec<usize> {
        (0..self.n).filter(|c| !self.coords.contains(c)).collect()
    }

    pub fn coord_map(&self) -> CoordMap {
        let mut slots = vec![Slot::Var(0); self.n];
        for (&c, &s) in self.coords.iter().zip(&self.z) {
            slots[c] = Slot::Fixed(s);
        }
        for (k, c) in self.surviving().into_iter().enumerate() {
            slots[c] = Slot::Var(k);
        }
        CoordMap {
            slots,
            target: self.n - self.coords.len(),
        }
    }
}

/// `{y : (y, z) in S}` over the surviving coordinates. For side sets `z` must
/// already be written in the set's own alphabet.
pub fn restrict_set(s: &CubeSet, r: &Restriction) -> Result<CubeSet, RestrictError> {
    if r.n != s.n() {
        return Err(CubeError::DimensionMismatch(s.n(), r.n).into());
    }
    if let Some(&bad) = r.z.iter().find(|&&v| s.side().local(v).is_none()) {
        return Err(CubeError::BadSymbol {
            symbol: bad,
            side: s.side(),
        }
        .into());
    }
    Ok(pull_set(s, &r.coord_map()))
}

/// Each coordinate enters `I` with probability `1 - delta`; `z` is i.i.d. from `nu`.
pub fn sample_restriction(
    n: usize,
    delta: &Rational,
    nu: &CoordDist,
    seed: u64,
) -> Result<Restriction, RestrictError> {
    if !delta.is_positive() || delta > &int(1) {
        return Err(RestrictError::BadDelta(rational::format(delta)));
    }
    if nu.iter().any(|p| p.is_negative()) || nu.iter().fold(Rational::zero(), |a, p| a + p) != int(1) {
        return Err(RestrictError::BadLaw);
    }
    let mut rng = rng_from_seed(seed);
    let p_fix = rational::to_f64(&(int(1) - delta));
    let weights: Vec<f64> = nu.iter().map(rational::to_f64).collect();
    let law = WeightedIndex::new(&weights).map_err(|_| RestrictError::BadLaw)?;
    let mut coords = Vec::new();
    let mut z = Vec::new();
    for c in 0..n {
        if rng.gen::<f64>() < p_fix {
            coords.push(c);
            z.push(law.sample(&mut rng) as u8);
        }
    }
    let mut r = Restriction::new(n, coords, z)?;
    r.delta = Some(delta.clone());
    r.seed = Some(seed);
    Ok(r)
}

/// Disjoint blocks of coordinates, each fused into one coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollapseSpec {
    pub blocks: Vec<Vec<usize>>,
}

impl CollapseSpec {
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self, RestrictError> {
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(RestrictError::EmptyBlock);
        }
        let all: Vec<usize> = blocks.iter().flatten().copied().collect();
        check_distinct(&all, n)?;
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort_unstable();
        Ok(CollapseSpec { blocks })
    }

    /// Output coordinates are the groups (blocks and untouched singletons)
    /// ordered by their smallest original coordinate.
    pub fn coord_map(&self, n: usize) -> CoordMap {
        let mut group_of: Vec<Option<usize>> = vec![None; n];
        for (g, b) in self.blocks.iter().enumerate() {
            for &c in b {
                group_of[c] = Some(g);
            }
        }
        let mut slots = vec![Slot::Var(0); n];
        let mut block_target: Vec<Option<usize>> = vec![None; self.blocks.len()];
        let mut next = 0;
        for c in 0..n {
            let k = match group_of[c] {
                Some(g) => *block_target[g].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                }),
                None => {
                    next += 1;
                    next - 1
                }
            };
            slots[c] = Slot::Var(k);
        }
        CoordMap {
            slots,
            target: next,
        }
    }
}

/// `S_{=T_1,…,T_N}`: copy each fused symbol to its whole block, then look up.
pub fn collapse_eq(s: &CubeSet, spec: &CollapseSpec) -> Result<CubeSet, RestrictError> {
    let all: Vec<usize> = spec.blocks.iter().flatten().copied().collect();
    check_distinct(&all, s.n())?;
    Ok(pull_set(s, &spec.coord_map(s.n())))
}

/// Where a source coordinate takes its symbol from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// A constant symbol of `[3]`.
    Fixed(u8),
    /// A coordinate of the derived cube.
    Var(usize),
}

/// A map from words of a derived cube (dimension `target`) to words of a source
/// cube (dimension `slots.len()`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoordMap {
    pub slots: Vec<Slot>,
    pub target: usize,
}

impl CoordMap {
    pub fn identity(n: usize) -> Self {
        CoordMap {
            slots: (0..n).map(Slot::Var).collect(),
            target: n,
        }
    }

    pub fn source_dim(&self) -> usize {
        self.slots.len()
    }

    /// `self` followed by `next`, where `next` acts on the cube `self` produces.
    pub fn then(&self, next: &CoordMap) -> CoordMap {
        assert_eq!(next.source_dim(), self.target, "maps do not compose");
        CoordMap {
            slots: self
                .slots
                .iter()
                .map(|s| match *s {
                    Slot::Fixed(v) => Slot::Fixed(v),
                    Slot::Var(k) => next.slots[k],
                })
                .collect(),
            target: next.target,
        }
    }

    pub fn lift_point(&self, w: &[u8]) -> Vec<u8> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Fixed(v) => v,
                Slot::Var(k) => w[k],
            })
            .collect()
    }

    /// A template whose instantiations are the lifts of `t`'s instantiations.
    pub fn lift_template(&self, t: &LineTemplate) -> LineTemplate {
        // every derived coordinate has a preimage, so a wildcard survives the lift
        LineTemplate::new(self.lift_point(t.word()))
            .expect("lifted template keeps its wildcards")
    }
}

/// `{w : lift(w) in S}` where fixed symbols are projected onto `S`'s side.
pub fn pull_set(s: &CubeSet, map: &CoordMap) -> CubeSet {
    assert_eq!(map.source_dim(), s.n(), "map and set dimensions differ");
    let side = s.side();
    let base = side.base();
    let n = s.n();
    let m = map.target;
    let mut offset = 0usize;
    let mut gain = vec![0usize; m];
    for (c, slot) in map.slots.iter().enumerate() {
        let w = base.pow((n - 1 - c) as u32);
        match *slot {
            Slot::Fixed(v) => {
                offset += w * side.local(side.project(v)).expect("projected symbol") as usize
            }
            Slot::Var(k) => gain[k] += w,
        }
    }
    let size = cube_size(m, side);
    let mut bits = BitSet::new(size);
    let mut digits = vec![0usize; m];
    let mut idx = offset;
    for out in 0..size {
        if s.contains_index(idx) {
            bits.insert(out);
        }
        for pos in (0..m).rev() {
            if digits[pos] + 1 < base {
                digits[pos] += 1;
                idx += gain[pos];
                break;
            }
            idx -= gain[pos] * digits[pos];
            digits[pos] = 0;
        }
    }
    CubeSet::from_bits(m, side, bits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseTv {
    pub n: usize,
    pub s: usize,
    pub k: usize,
    #[serde(serialize_with = "ser_rat")]
    pub tv: Rational,
    pub tv_f64: f64,
    /// `10 k / sqrt(s)`
    pub bound_f64: f64,
    pub within_bound: bool,
}

fn ser_rat<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}

fn binom(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (0..k).fold(BigInt::from(1), |acc, t| acc * (n - t) / (t + 1))
}

/// Exact total variation between uniform on `[3]^n` and the law of `v` where a
/// uniformly random `k`-subset `T` of `s` designated coordinates shares one
/// uniform symbol and all other coordinates are uniform.
///
/// Only the counts of each symbol among the designated coordinates matter, so
/// the sum runs over `(m0, m1, m2)` with multinomial weights; the value does
/// not depend on `n`.
pub fn tv_of_collapse(n: usize, s: usize, k: usize) -> Result<CollapseTv, RestrictError> {
    if k > s || k == 0 {
        return Err(RestrictError::BadK { k, s });
    }
    if s > n {
        return Err(RestrictError::CoordOutOfRange { coord: s, n });
    }
    // P(v) = count_T(v) / (C(s,k) 3^(n-k+1)), uniform = 3^-n.
    // Over the s designated coordinates: sum_v |count·3^(k-1) - C(s,k)| / (C(s,k) 3^s).
    let total = binom(s, k);
    let scale = BigInt::from(3).pow((k - 1) as u32);
    let mut acc = BigInt::zero();
    for m0 in 0..=s {
        for m1 in 0..=s - m0 {
            let m2 = s - m0 - m1;
            let count = binom(m0, k) + binom(m1, k) + binom(m2, k);
            let words = binom(s, m0) * binom(s - m0, m1);
            acc += words * (count * &scale - &total).abs();
        }
    }
    let tv = Rational::new(acc, total * BigInt::from(3).pow(s as u32) * 2);
    let within_bound = &tv * &tv * int(s as i64) <= int(100 * (k * k) as i64);
    Ok(CollapseTv {
        n,
        s,
        k,
        tv_f64: rational::to_f64(&tv),
        tv,
        bound_f64: 10.0 * k as f64 / (s as f64).sqrt(),
        within_bound,
    })
}

/// Exact lines-aware sanity: the derived cube of `map` contains a line only if
/// `s` does. Returns the first derived line whose lift escapes `s`.
pub fn first_unsound_line(s: &CubeSet, map: &CoordMap) -> Option<LineTemplate> {
    let derived = pull_set(s, map);
    crate::cube::enumerate_lines(map.target)
        .filter(|t| t.points().iter().all(|p| derived.contains_point(p)))
        .find(|t| {
            let lifted = map.lift_template(t);
            !lifted.points().iter().all(|p| s.contains_point(p))
        })
}

/// Wildcard positions of a template, for reporting.
pub fn wildcard_positions(t: &LineTemplate) -> Vec<usize> {
    t.word()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == WILDCARD)
        .map(|(i, _)| i)
        .collect()
}
