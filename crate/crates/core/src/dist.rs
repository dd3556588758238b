//! Exact-rational joint distributions on finite product alphabets.
//!
//! A [`JointDist`] keeps its rows in a sorted map, so equality of two
//! distributions is plain structural equality. Every coordinate carries a name;
//! Cauchy-Schwarz duplication names its fresh copies by adding primes
//! (`x` -> `x'` -> `x''`), which is how the tables of the increment proof label
//! their columns.

use crate::rational::{self, int, pow, rat, Rational, RationalObj};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistError {
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(String),
    #[error("non-positive probability {p} on tuple {tuple:?}")]
    NonPositive { tuple: Vec<u8>, p: String },
    #[error("duplicate tuple {0:?}")]
    DuplicateTuple(Vec<u8>),
    #[error("tuple {tuple:?} has symbol outside alphabet {coord}")]
    SymbolNotInAlphabet { tuple: Vec<u8>, coord: usize },
    #[error("arity mismatch: {0} vs {1}")]
    ArityMismatch(usize, usize),
    #[error("bad coordinate list: {0}")]
    BadCoords(String),
    #[error("conditioning event has zero mass")]
    EmptyCondition,
    #[error("component tuple {0:?} is outside the support")]
    NotSubset(Vec<u8>),
    #[error("tuple {0:?} is not one of the allowed atoms")]
    OffSupport(Vec<u8>),
    #[error("denominator cap {cap} exceeds the enumeration limit {limit} (about {estimate} distributions)")]
    CapExceeded {
        cap: String,
        limit: u64,
        estimate: String,
    },
    #[error("chain parameters: {0}")]
    Chain(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// An exact distribution on `Σ_1 × … × Σ_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointDist {
    alphabets: Vec<Vec<u8>>,
    names: Vec<String>,
    rows: BTreeMap<Vec<u8>, Rational>,
}

fn default_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("v{i}")).collect()
}

impl JointDist {
    pub fn new(
        alphabets: Vec<Vec<u8>>,
        rows: impl IntoIterator<Item = (Vec<u8>, Rational)>,
    ) -> Result<Self, DistError> {
        let names = default_names(alphabets.len());
        Self::with_names(alphabets, names, rows)
    }

    pub fn with_names(
        alphabets: Vec<Vec<u8>>,
        names: Vec<String>,
        rows: impl IntoIterator<Item = (Vec<u8>, Rational)>,
    ) -> Result<Self, DistError> {
        let k = alphabets.len();
        if names.len() != k {
            return Err(DistError::ArityMismatch(k, names.len()));
        }
        let mut map = BTreeMap::new();
        let mut sum = Rational::zero();
        for (t, p) in rows {
            if t.len() != k {
                return Err(DistError::ArityMismatch(k, t.len()));
            }
            if let Some(c) = (0..k).find(|&c| !alphabets[c].contains(&t[c])) {
                return Err(DistError::SymbolNotInAlphabet { tuple: t, coord: c });
            }
            if !p.is_positive() {
                return Err(DistError::NonPositive {
                    tuple: t,
                    p: rational::format(&p),
                });
            }
            sum += &p;
            if map.insert(t.clone(), p).is_some() {
                return Err(DistError::DuplicateTuple(t));
            }
        }
        if !sum.is_one() {
            return Err(DistError::NotNormalized(rational::format(&sum)));
        }
        Ok(JointDist {
            alphabets,
            names,
            rows: map,
        })
    }

    /// Builds from rows that may repeat; masses of equal tuples are added.
    fn merged(
        alphabets: Vec<Vec<u8>>,
        names: Vec<String>,
        rows: impl IntoIterator<Item = (Vec<u8>, Rational)>,
    ) -> JointDist {
        let mut map: BTreeMap<Vec<u8>, Rational> = BTreeMap::new();
        for (t, p) in rows {
            *map.entry(t).or_insert_with(Rational::zero) += p;
        }
        map.retain(|_, p| !p.is_zero());
        JointDist {
            alphabets,
            names,
            rows: map,
        }
    }

    pub fn point_mass(alphabets: Vec<Vec<u8>>, tuple: Vec<u8>) -> Result<Self, DistError> {
        Self::new(alphabets, [(tuple, int(1))])
    }

    /// Uniform over the listed tuples.
    pub fn uniform_on(alphabets: Vec<Vec<u8>>, tuples: &[Vec<u8>]) -> Result<Self, DistError> {
        let p = rat(1, tuples.len().max(1) as i64);
        Self::new(alphabets, tuples.iter().map(|t| (t.clone(), p.clone())))
    }

    /// Independent product of one-coordinate laws.
    pub fn product(factors: &[Vec<(u8, Rational)>]) -> Result<Self, DistError> {
        let alphabets: Vec<Vec<u8>> = factors
            .iter()
            .map(|f| f.iter().map(|(s, _)| *s).collect())
            .collect();
        let mut rows: Vec<(Vec<u8>, Rational)> = vec![(vec![], int(1))];
        for f in factors {
            rows = rows
                .into_iter()
                .flat_map(|(t, p)| {
                    f.iter().map(move |(s, q)| {
                        let mut t = t.clone();
                        t.push(*s);
                        (t, &p * q)
                    })
                })
                .collect();
        }
        rows.retain(|(_, p)| p.is_positive());
        Self::new(alphabets, rows)
    }

    pub fn arity(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabets(&self) -> &[Vec<u8>] {
        &self.alphabets
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn renamed(mut self, names: &[&str]) -> Result<Self, DistError> {
        if names.len() != self.arity() {
            return Err(DistError::ArityMismatch(self.arity(), names.len()));
        }
        self.names = names.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Vec<u8>, &Rational)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prob(&self, tuple: &[u8]) -> Rational {
        self.rows.get(tuple).cloned().unwrap_or_else(Rational::zero)
    }

    /// Same alphabets and masses, ignoring coordinate names.
    pub fn same_law(&self, other: &JointDist) -> bool {
        self.alphabets == other.alphabets && self.rows == other.rows
    }

    pub fn support(&self) -> Vec<Vec<u8>> {
        self.rows.keys().cloned().collect()
    }

    pub fn total(&self) -> Rational {
        self.rows.values().fold(Rational::zero(), |a, p| a + p)
    }

    pub fn coord(&self, name: &str) -> Result<usize, DistError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DistError::BadCoords(format!("no coordinate named {name:?}")))
    }

    pub fn coords(&self, names: &[&str]) -> Result<Vec<usize>, DistError> {
        names.iter().map(|n| self.coord(n)).collect()
    }

    fn check_coords(&self, coords: &[usize], allow_empty: bool) -> Result<(), DistError> {
        if coords.is_empty() && !allow_empty {
            return Err(DistError::BadCoords("empty coordinate list".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in coords {
            if c >= self.arity() {
                return Err(DistError::BadCoords(format!(
                    "coordinate {c} out of range for arity {}",
                    self.arity()
                )));
            }
            if !seen.insert(c) {
                return Err(DistError::BadCoords(format!("coordinate {c} repeated")));
            }
        }
        Ok(())
    }

    /// Law of the listed coordinates, in the listed order.
    pub fn marginal(&self, coords: &[usize]) -> Result<JointDist, DistError> {
        self.check_coords(coords, false)?;
        Ok(JointDist::merged(
            coords.iter().map(|&c| self.alphabets[c].clone()).collect(),
            coords.iter().map(|&c| self.names[c].clone()).collect(),
            self.rows
                .iter()
                .map(|(t, p)| (coords.iter().map(|&c| t[c]).collect(), p.clone())),
        ))
    }

    pub fn marginal_by_name(&self, names: &[&str]) -> Result<JointDist, DistError> {
        self.marginal(&self.coords(names)?)
    }

    /// Law of the remaining coordinates given `t[coords] = values`.
    pub fn condition(&self, coords: &[usize], values: &[u8]) -> Result<JointDist, DistError> {
        self.check_coords(coords, false)?;
        if coords.len() != values.len() {
            return Err(DistError::ArityMismatch(coords.len(), values.len()));
        }
        let rest: Vec<usize> = (0..self.arity()).filter(|c| !coords.contains(c)).collect();
        if rest.is_empty() {
            return Err(DistError::BadCoords("conditioning on every coordinate".into()));
        }
        let hits: Vec<(&Vec<u8>, &Rational)> = self
            .rows
            .iter()
            .filter(|(t, _)| coords.iter().zip(values).all(|(&c, &v)| t[c] == v))
            .collect();
        let mass = hits.iter().fold(Rational::zero(), |a, (_, p)| a + *p);
        if mass.is_zero() {
            return Err(DistError::EmptyCondition);
        }
        Ok(JointDist::merged(
            rest.iter().map(|&c| self.alphabets[c].clone()).collect(),
            rest.iter().map(|&c| self.names[c].clone()).collect(),
            hits.into_iter()
                .map(|(t, p)| (rest.iter().map(|&c| t[c]).collect(), p / &mass)),
        ))
    }

    /// Draws `w` from the `keep` marginal, then two conditionally independent
    /// copies of the other coordinates. Output coordinates are the original ones
    /// followed by the fresh copies of the non-kept coordinates in original order.
    pub fn cs_duplicate(&self, keep: &[usize]) -> Result<JointDist, DistError> {
        self.check_coords(keep, false)?;
        if keep.len() >= self.arity() {
            return Err(DistError::BadCoords("keep set must be a proper subset".into()));
        }
        let rest: Vec<usize> = (0..self.arity()).filter(|c| !keep.contains(c)).collect();
        let mut groups: BTreeMap<Vec<u8>, Vec<(&Vec<u8>, &Rational)>> = BTreeMap::new();
        for (t, p) in &self.rows {
            groups
                .entry(keep.iter().map(|&c| t[c]).collect())
                .or_default()
                .push((t, p));
        }
        let mut out = Vec::new();
        for members in groups.values() {
            let dw = members.iter().fold(Rational::zero(), |a, (_, p)| a + *p);
            for (a, pa) in members {
                for (b, pb) in members {
                    let mut t = (*a).clone();
                    t.extend(rest.iter().map(|&c| b[c]));
                    out.push((t, *pa * *pb / &dw));
                }
            }
        }
        let mut names = self.names.clone();
        for &c in &rest {
            let fresh = fresh_copy_name(&self.names[c], &names);
            names.push(fresh);
        }
        let mut alphabets = self.alphabets.clone();
        alphabets.extend(rest.iter().map(|&c| self.alphabets[c].clone()));
        Ok(JointDist::merged(alphabets, names, out))
    }

    pub fn cs_duplicate_by_name(&self, keep: &[&str]) -> Result<JointDist, DistError> {
        self.cs_duplicate(&self.coords(keep)?)
    }

    /// Pushforward under coordinatewise symbol maps.
    pub fn project_symbols(&self, maps: &[SymbolMap]) -> Result<JointDist, DistError> {
        if maps.len() != self.arity() {
            return Err(DistError::ArityMismatch(self.arity(), maps.len()));
        }
        let alphabets = self
            .alphabets
            .iter()
            .zip(maps)
            .map(|(a, m)| {
                let img: BTreeSet<u8> = a.iter().map(|&s| m.apply(s)).collect();
                img.into_iter().collect()
            })
            .collect();
        let names = self
            .names
            .iter()
            .zip(maps)
            .map(|(n, m)| match m {
                SymbolMap::Identity => n.clone(),
                SymbolMap::Pi1 => format!("pi1({n})"),
                SymbolMap::Pi2 => format!("pi2({n})"),
            })
            .collect();
        Ok(JointDist::merged(
            alphabets,
            names,
            self.rows.iter().map(|(t, p)| {
                (
                    t.iter().zip(maps).map(|(&s, m)| m.apply(s)).collect(),
                    p.clone(),
                )
            }),
        ))
    }

    /// Largest `beta` with `self - beta * component >= 0`, and the normalized residual.
    pub fn decompose(&self, component: &JointDist) -> Result<Decomposition, DistError> {
        if component.arity() != self.arity() {
            return Err(DistError::ArityMismatch(self.arity(), component.arity()));
        }
        let mut beta: Option<Rational> = None;
        for (t, q) in &component.rows {
            let p = self.rows.get(t).ok_or_else(|| DistError::NotSubset(t.clone()))?;
            let r = p / q;
            if beta.as_ref().is_none_or(|b| &r < b) {
                beta = Some(r);
            }
        }
        let beta = beta.unwrap_or_else(Rational::zero).min(int(1));
        if beta.is_one() {
            return Ok(Decomposition {
                beta,
                residual: None,
            });
        }
        let rest = int(1) - &beta;
        let rows: Vec<(Vec<u8>, Rational)> = self
            .rows
            .iter()
            .map(|(t, p)| (t.clone(), (p - &beta * component.prob(t)) / &rest))
            .collect();
        Ok(Decomposition {
            beta,
            residual: Some(JointDist::merged(
                self.alphabets.clone(),
                self.names.clone(),
                rows,
            )),
        })
    }

    /// `(1/2) sum |self - other|`.
    pub fn tv_distance(&self, other: &JointDist) -> Result<Rational, DistError> {
        if other.arity() != self.arity() {
            return Err(DistError::ArityMismatch(self.arity(), other.arity()));
        }
        let keys: BTreeSet<&Vec<u8>> = self.rows.keys().chain(other.rows.keys()).collect();
        let sum = keys.into_iter().fold(Rational::zero(), |a, t| {
            a + (self.prob(t) - other.prob(t)).abs()
        });
        Ok(sum / int(2))
    }

    /// Per-coordinate `[P(0), P(1), P(2)]` for a one-coordinate distribution.
    pub fn as_coord_dist(&self) -> Result<[Rational; 3], DistError> {
        if self.arity() != 1 {
            return Err(DistError::ArityMismatch(1, self.arity()));
        }
        Ok([0u8, 1, 2].map(|s| self.prob(&[s])))
    }

    pub fn to_file(&self) -> DistFile {
        DistFile {
            alphabets: self.alphabets.clone(),
            names: Some(self.names.clone()),
            rows: self
                .rows
                .iter()
                .map(|(t, p)| DistRow {
                    t: t.clone(),
                    p: RationalObj::from(p),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &DistFile) -> Result<JointDist, DistError> {
        let rows = f
            .rows
            .iter()
            .map(|r| {
                Rational::try_from(&r.p)
                    .map(|p| (r.t.clone(), p))
                    .map_err(DistError::Parse)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let names = f
            .names
            .clone()
            .unwrap_or_else(|| default_names(f.alphabets.len()));
        JointDist::with_names(f.alphabets.clone(), names, rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("distribution files serialize")
    }

    pub fn from_json(s: &str) -> Result<JointDist, DistError> {
        let f: DistFile = serde_json::from_str(s).map_err(|e| DistError::Parse(e.to_string()))?;
        JointDist::from_file(&f)
    }
}

/// `x` -> `x'`, or the next unused prime count on the same base letter.
fn fresh_copy_name(name: &str, taken: &[String]) -> String {
    let base = name.trim_end_matches('\'');
    (1..)
        .map(|c| format!("{base}{}", "'".repeat(c)))
        .find(|cand| !taken.iter().any(|t| t == cand))
        .expect("unbounded search")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub beta: Rational,
    /// `None` when `beta = 1`.
    pub residual: Option<JointDist>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolMap {
    Identity,
    Pi1,
    Pi2,
}

impl SymbolMap {
    pub fn apply(self, s: u8) -> u8 {
        match self {
            SymbolMap::Identity => s,
            SymbolMap::Pi1 => u8::from(s == 1),
            SymbolMap::Pi2 => 2 * u8::from(s == 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistRow {
    pub t: Vec<u8>,
    pub p: RationalObj,
}

/// On-disk distribution format. `names` is optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistFile {
    pub alphabets: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    pub rows: Vec<DistRow>,
}

pub const LINE_ATOMS: [[u8; 3]; 4] = [[0, 0, 0], [1, 1, 1], [2, 2, 2], [0, 1, 2]];

/// The law on `[3]^3` with the given masses on `(0,0,0)`, `(1,1,1)`, `(2,2,2)`, `(0,1,2)`.
pub fn dhj_distribution(
    w000: Rational,
    w111: Rational,
    w222: Rational,
    w012: Rational,
) -> Result<JointDist, DistError> {
    let weights = [w000, w111, w222, w012];
    JointDist::with_names(
        vec![vec![0, 1, 2]; 3],
        vec!["x".into(), "y".into(), "z".into()],
        LINE_ATOMS.iter().zip(weights).map(|(a, w)| (a.to_vec(), w)),
    )
}

/// Masses 1/6, 1/3, 1/3, 1/6: uniform marginal on each coordinate.
pub fn dhj_default() -> JointDist {
    dhj_distribution(rat(1, 6), rat(1, 3), rat(1, 3), rat(1, 6)).expect("valid weights")
}

/// Maps a law on the pairs `(0,0),(1,1),(2,2),(1,2)` to the line atom with the same `(y,z)`.
pub fn lift_pair_to_line(xi: &JointDist) -> Result<JointDist, DistError> {
    if xi.arity() != 2 {
        return Err(DistError::ArityMismatch(2, xi.arity()));
    }
    let rows = xi
        .rows()
        .map(|(t, p)| match (t[0], t[1]) {
            (a, b) if a == b => Ok((vec![a, a, a], p.clone())),
            (1, 2) => Ok((vec![0, 1, 2], p.clone())),
            _ => Err(DistError::OffSupport(t.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    JointDist::with_names(
        vec![vec![0, 1, 2]; 3],
        vec!["x".into(), "y".into(), "z".into()],
        rows,
    )
}

/// Parameters of the noisy chain `y^(0), …, y^(K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub k: u32,
    #[serde(with = "rational::as_string")]
    pub eta: Rational,
    #[serde(with = "rational::as_string")]
    pub eta_prime: Rational,
    pub n: u64,
    /// Stored flip probability; a lower approximation of `eta' / sqrt(n)`.
    #[serde(with = "rational::as_string")]
    pub p: Rational,
}

/// Fractional bits used when `sqrt(n)` is irrational.
const SQRT_BITS: u32 = 64;

/// A rational `p <= eta' / sqrt(n)`, exact when `n` is a perfect square.
/// Otherwise `sqrt(n)` is replaced by `(floor(sqrt(n·4^B)) + 1) / 2^B` with `B = 64`.
pub fn flip_probability(eta_prime: &Rational, n: u64) -> Rational {
    let nn = BigInt::from(n);
    let r = rational::isqrt(&nn);
    if &r * &r == nn {
        return eta_prime / Rational::from_integer(r);
    }
    let scale = BigInt::one() << SQRT_BITS;
    let upper = rational::isqrt(&(nn * &scale * &scale)) + 1;
    eta_prime * Rational::new(scale, upper)
}

impl ChainParams {
    pub fn new(n: u64, k: u32, eta: Rational, eta_prime: Rational) -> Result<Self, DistError> {
        let p = flip_probability(&eta_prime, n);
        Self::with_p(n, k, eta, eta_prime, p)
    }

    pub fn with_p(
        n: u64,
        k: u32,
        eta: Rational,
        eta_prime: Rational,
        p: Rational,
    ) -> Result<Self, DistError> {
        if k == 0 || n == 0 {
            return Err(DistError::Chain("need K >= 1 and n >= 1".into()));
        }
        if !eta.is_positive() || !eta_prime.is_positive() {
            return Err(DistError::Chain("eta and eta' must be positive".into()));
        }
        if Rational::from_integer(BigInt::from(k)) * &eta_prime * int(100) > eta {
            return Err(DistError::Chain(format!(
                "K·eta' = {} exceeds eta/100 = {}",
                rational::format(&(Rational::from_integer(BigInt::from(k)) * &eta_prime)),
                rational::format(&(&eta / int(100)))
            )));
        }
        if !p.is_positive() || p >= int(1) {
            return Err(DistError::Chain(format!("p = {} not in (0,1)", rational::format(&p))));
        }
        Ok(ChainParams {
            k,
            eta,
            eta_prime,
            n,
            p,
        })
    }

    fn keep(&self) -> Rational {
        int(1) - &self.p
    }
}

/// `ν^(i)` as masses on 0, 1, 2.
pub fn chain_marginal(params: &ChainParams, i: u32) -> Result<[Rational; 3], DistError> {
    if i > params.k {
        return Err(DistError::Chain(format!("step {i} beyond K = {}", params.k)));
    }
    let third = rat(1, 3);
    let q = pow(&params.keep(), i as u64);
    Ok([
        third.clone(),
        &third * &q,
        &third + &third * (int(1) - &q),
    ])
}

/// `ξ^(ij)`, the joint law of one coordinate of `(y^(i), y^(j))`.
pub fn chain_pair(params: &ChainParams, i: u32, j: u32) -> Result<JointDist, DistError> {
    if i >= j {
        return Err(DistError::Chain(format!("need i < j, got ({i}, {j})")));
    }
    if j > params.k {
        return Err(DistError::Chain(format!("step {j} beyond K = {}", params.k)));
    }
    let third = rat(1, 3);
    let qi = pow(&params.keep(), i as u64);
    let qj = pow(&params.keep(), j as u64);
    let rows = vec![
        (vec![0, 0], third.clone()),
        (vec![1, 1], &third * &qj),
        (vec![2, 2], &third + &third * (int(1) - &qi)),
        (vec![1, 2], &third * (&qi - &qj)),
    ];
    JointDist::with_names(
        vec![vec![0, 1, 2]; 2],
        vec![format!("y{i}"), format!("y{j}")],
        rows,
    )
}

/// The two pair-law bounds, checked exactly for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairBounds {
    pub i: u32,
    pub j: u32,
    /// `ξ((1,2)) >= eta' / (10 sqrt n)`
    pub cross_mass_ok: bool,
    /// `|ξ((x,x)) - 1/3| <= eta / sqrt n` for every `x`
    pub diagonal_ok: bool,
}

/// Both sides are squared and cleared of denominators so the comparisons stay in
/// integers. With `p = a/b` and `c = b - a`, every mass of `ξ^(ij)` has denominator
/// `3 b^j` or `3 b^i`.
pub fn check_pair_bounds(params: &ChainParams, i: u32, j: u32) -> Result<PairBounds, DistError> {
    if i >= j || j > params.k {
        return Err(DistError::Chain(format!("need i < j <= K = {}, got ({i}, {j})", params.k)));
    }
    let (a, b) = (params.p.numer(), params.p.denom());
    let c = b - a;
    let n = BigInt::from(params.n);
    let nine = BigInt::from(9);
    let (e, f) = (params.eta_prime.numer(), params.eta_prime.denom());
    let (g, h) = (params.eta.numer(), params.eta.denom());
    let (bi, bj) = (b.pow(i), b.pow(j));
    let (ci, cj) = (c.pow(i), c.pow(j));
    // ξ(1,2) = (c^i b^(j-i) - c^j) / (3 b^j), scaled by 10
    let x = &ci * b.pow(j - i) - &cj;
    let cross_mass_ok = BigInt::from(100) * &x * &x * &n * f * f >= &nine * &bj * &bj * e * e;
    // |ξ(t,t) - 1/3| is 0, (b^j - c^j) / (3 b^j) and (b^i - c^i) / (3 b^i)
    let diag = |num: BigInt, den: &BigInt| &num * &num * &n * h * h <= &nine * den * den * g * g;
    let diagonal_ok = diag(&bj - &cj, &bj) && diag(&bi - &ci, &bi);
    Ok(PairBounds {
        i,
        j,
        cross_mass_ok,
        diagonal_ok,
    })
}

/// Default denominator cap for [`enumerate_q`].
pub const Q_DEFAULT_LIMIT: u64 = 64;

/// Number of compositions of `d` into `m` positive parts, summed over `d <= cap`.
fn q_size_estimate(m: usize, cap: &BigInt) -> String {
    // sum_{d=m}^{cap} C(d-1, m-1) = C(cap, m)
    if cap < &BigInt::from(m) {
        return "0".into();
    }
    let mut c = BigInt::one();
    for t in 0..m {
        c = c * (cap - BigInt::from(t)) / BigInt::from(t + 1);
    }
    let s = c.to_string();
    if s.len() > 30 {
        format!("1e{}", s.len() - 1)
    } else {
        s
    }
}

/// Every full-support law on `alphabet` whose masses have a common denominator
/// at most `max_denominator`, ordered by smallest denominator then lexicographically.
pub fn enumerate_q(alphabet: &[u8], max_denominator: &BigInt) -> Result<Vec<JointDist>, DistError> {
    enumerate_q_with_limit(alphabet, max_denominator, Q_DEFAULT_LIMIT)
}

pub fn enumerate_q_with_limit(
    alphabet: &[u8],
    max_denominator: &BigInt,
    limit: u64,
) -> Result<Vec<JointDist>, DistError> {
    let m = alphabet.len();
    if max_denominator > &BigInt::from(limit) {
        return Err(DistError::CapExceeded {
            cap: max_denominator.to_string(),
            limit,
            estimate: q_size_estimate(m, max_denominator),
        });
    }
    let cap: u64 = max_denominator.try_into().unwrap_or(0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    if m == 0 {
        return Ok(out);
    }
    for d in m as u64..=cap {
        let mut parts = vec![0u64; m];
        compositions(d, 0, &mut parts, &mut |parts| {
            let probs: Vec<Rational> = parts.iter().map(|&a| rat(a as i64, d as i64)).collect();
            if seen.insert(probs.clone()) {
                let rows = alphabet.iter().zip(probs).map(|(&s, p)| (vec![s], p));
                out.push(JointDist::new(vec![alphabet.to_vec()], rows).expect("valid composition"));
            }
        });
    }
    Ok(out)
}

fn compositions(rest: u64, pos: usize, parts: &mut [u64], f: &mut dyn FnMut(&[u64])) {
    let m = parts.len();
    if pos == m - 1 {
        parts[pos] = rest;
        f(parts);
        return;
    }
    let slots_after = (m - pos - 1) as u64;
    for a in 1..=rest.saturating_sub(slots_after) {
        parts[pos] = a;
        compositions(rest - a, pos + 1, parts, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u3() -> Vec<u8> {
        vec![0, 1, 2]
    }

    #[test]
    fn dhj_validation() {
        let d = dhj_default();
        assert_eq!(d.len(), 4);
        assert_eq!(d.prob(&[0, 1, 2]), rat(1, 6));
        let u = dhj_distribution(rat(1, 4), rat(1, 4), rat(1, 4), rat(1, 4)).unwrap();
        assert!(u.rows().all(|(_, p)| *p == rat(1, 4)));
        assert!(matches!(
            dhj_distribution(rat(1, 3), rat(1, 3), rat(1, 3), int(0)),
            Err(DistError::NonPositive { .. })
        ));
        assert!(matches!(
            dhj_distribution(rat(1, 3), rat(1, 3), rat(1, 3), rat(1, 3)),
            Err(DistError::NotNormalized(_))
        ));
    }

    #[test]
    fn marginal_and_condition() {
        let d = dhj_default();
        let m = d.marginal(&[0]).unwrap();
        assert_eq!(m.as_coord_dist().unwrap(), [rat(1, 3), rat(1, 3), rat(1, 3)]);
        assert_eq!(d.marginal(&[0, 1, 2]).unwrap(), d);

        let c = d.condition(&[2], &[2]).unwrap();
        assert_eq!(c.prob(&[2, 2]), rat(2, 3));
        assert_eq!(c.prob(&[0, 1]), rat(1, 3));
        assert_eq!(c.len(), 2);
        let c0 = d.condition(&[2], &[0]).unwrap();
        assert_eq!(c0.support(), vec![vec![0, 0]]);
        assert_eq!(d.condition(&[0, 1], &[1, 0]), Err(DistError::EmptyCondition));
        assert!(d.marginal(&[]).is_err());
        assert!(d.marginal(&[0, 0]).is_err());
    }

    #[test]
    fn duplicate_point_mass() {
        let d = JointDist::point_mass(vec![u3(), u3()], vec![2, 1]).unwrap();
        let dup = d.cs_duplicate(&[0]).unwrap();
        assert_eq!(dup.support(), vec![vec![2, 1, 1]]);
        assert_eq!(dup.names(), &["v1", "v2", "v2'"]);
        assert!(d.cs_duplicate(&[0, 1]).is_err());
    }

    #[test]
    fn duplicate_naming_follows_tables() {
        let mu1 = dhj_default().cs_duplicate_by_name(&["z"]).unwrap();
        assert_eq!(mu1.names(), &["x", "y", "z", "x'", "y'"]);
        let mu2 = mu1.cs_duplicate_by_name(&["y", "y'"]).unwrap();
        assert_eq!(mu2.names(), &["x", "y", "z", "x'", "y'", "x''", "z'", "x'''"]);
        assert_eq!(mu1.len(), 6);
        assert_eq!(mu2.len(), 8);
    }

    #[test]
    fn project_examples() {
        let d = dhj_default().marginal(&[0, 1]).unwrap().marginal(&[0]).unwrap();
        assert_eq!(d.project_symbols(&[SymbolMap::Identity]).unwrap(), d);
        // (pi1(x), pi2(x)) of the line law
        let x = dhj_default().marginal(&[0]).unwrap();
        let two = JointDist::new(
            vec![u3(), u3()],
            x.rows().map(|(t, p)| (vec![t[0], t[0]], p.clone())),
        )
        .unwrap();
        let pr = two.project_symbols(&[SymbolMap::Pi1, SymbolMap::Pi2]).unwrap();
        assert_eq!(pr.support(), vec![vec![0, 0], vec![0, 2], vec![1, 0]]);
        assert_eq!(pr.alphabets(), &[vec![0, 1], vec![0, 2]]);
    }

    #[test]
    fn decompose_examples() {
        let d = dhj_default();
        assert_eq!(d.decompose(&d).unwrap().beta, int(1));
        assert!(d.decompose(&d).unwrap().residual.is_none());
        let comp = JointDist::uniform_on(vec![u3(); 3], &[vec![0, 0, 0], vec![0, 1, 2]]).unwrap();
        let dec = d.decompose(&comp).unwrap();
        assert_eq!(dec.beta, rat(1, 3));
        let res = dec.residual.unwrap();
        assert_eq!(res.support(), vec![vec![1, 1, 1], vec![2, 2, 2]]);
        assert_eq!(res.prob(&[1, 1, 1]), rat(1, 2));
        let outside = JointDist::point_mass(vec![u3(); 3], vec![1, 0, 0]).unwrap();
        assert!(matches!(d.decompose(&outside), Err(DistError::NotSubset(_))));
    }

    #[test]
    fn tv_examples() {
        let d = dhj_default();
        assert_eq!(d.tv_distance(&d).unwrap(), int(0));
        let a = JointDist::point_mass(vec![u3()], vec![0]).unwrap();
        let b = JointDist::point_mass(vec![u3()], vec![1]).unwrap();
        assert_eq!(a.tv_distance(&b).unwrap(), int(1));
        let u = JointDist::uniform_on(vec![u3()], &[vec![0], vec![1], vec![2]]).unwrap();
        let w = JointDist::new(
            vec![u3()],
            [(vec![0], rat(1, 2)), (vec![1], rat(1, 4)), (vec![2], rat(1, 4))],
        )
        .unwrap();
        assert_eq!(u.tv_distance(&w).unwrap(), rat(1, 6));
    }

    #[test]
    fn chain_examples() {
        let params = ChainParams::new(10_000, 20, rat(1, 1000), rat(1, 2_000_000)).unwrap();
        assert_eq!(params.p, rat(1, 200_000_000));
        assert_eq!(chain_marginal(&params, 0).unwrap(), [rat(1, 3), rat(1, 3), rat(1, 3)]);
        let xi = chain_pair(&params, 0, 1).unwrap();
        assert_eq!(xi.prob(&[1, 2]), &params.p / int(3));
        assert!(chain_pair(&params, 2, 2).is_err());
        assert!(ChainParams::new(100, 100, rat(1, 1000), rat(1, 1000)).is_err());
        let b = check_pair_bounds(&params, 3, 17).unwrap();
        assert!(b.cross_mass_ok && b.diagonal_ok);
    }

    fn pair_bounds_reference(params: &ChainParams, i: u32, j: u32) -> (bool, bool) {
        let xi = chain_pair(params, i, j).unwrap();
        let n = Rational::from_integer(BigInt::from(params.n));
        let cross = xi.prob(&[1, 2]) * int(10);
        let cross_ok = &cross * &cross * &n >= &params.eta_prime * &params.eta_prime;
        let diag_ok = (0u8..3).all(|x| {
            let d = xi.prob(&[x, x]) - rat(1, 3);
            &d * &d * &n <= &params.eta * &params.eta
        });
        (cross_ok, diag_ok)
    }

    #[test]
    fn pair_bounds_match_rational_reference() {
        // includes parameters where each item fails
        let cases = [
            (10_000, 20, rat(1, 1000), rat(1, 2_000_000)),
            (2, 6, rat(1, 1000), rat(1, 600_000)),
            (12_345, 8, rat(1, 50), rat(1, 40_000)),
            (3, 4, rat(1, 10), rat(1, 4000)),
            (1, 10, rat(1, 10), rat(1, 10_000)),
        ];
        let mut all: Vec<ChainParams> =
            cases.into_iter().map(|(n, k, eta, eta_prime)| ChainParams::new(n, k, eta, eta_prime).unwrap()).collect();
        // p far from eta'/sqrt(n) breaks one item or the other
        for p in [rat(1, 2), rat(1, 7), rat(1, 1_000_000_000_000)] {
            all.push(ChainParams::with_p(100, 12, rat(1, 1000), rat(1, 2_000_000), p).unwrap());
        }
        let mut seen = BTreeSet::new();
        for params in all {
            let (n, k) = (params.n, params.k);
            for j in 1..=k {
                for i in 0..j {
                    let b = check_pair_bounds(&params, i, j).unwrap();
                    let want = pair_bounds_reference(&params, i, j);
                    assert_eq!((b.cross_mass_ok, b.diagonal_ok), want, "n={n} k={k} ({i},{j})");
                    seen.insert(want);
                }
            }
        }
        assert!(seen.len() > 1, "cases never exercise a failing item: {seen:?}");
        let params = ChainParams::new(4, 2, rat(1, 1000), rat(1, 200_000)).unwrap();
        assert!(check_pair_bounds(&params, 1, 1).is_err());
        assert!(check_pair_bounds(&params, 0, 3).is_err());
    }

    #[test]
    fn flip_probability_rounds_down() {
        let eta = rat(1, 100);
        let p = flip_probability(&eta, 2);
        // p * sqrt(2) <= eta  <=>  2 p^2 <= eta^2
        assert!(int(2) * &p * &p <= &eta * &eta);
        assert!(rational::to_f64(&p) > 0.01 / 2f64.sqrt() * (1.0 - 1e-15));
    }

    #[test]
    fn lift_examples() {
        let xi = JointDist::uniform_on(
            vec![u3(), u3()],
            &[vec![0, 0], vec![1, 1], vec![2, 2], vec![1, 2]],
        )
        .unwrap();
        let line = lift_pair_to_line(&xi).unwrap();
        assert_eq!(
            line,
            dhj_distribution(rat(1, 4), rat(1, 4), rat(1, 4), rat(1, 4)).unwrap()
        );
        assert_eq!(line.marginal(&[1, 2]).unwrap().support(), xi.support());
        let bad = JointDist::point_mass(vec![u3(), u3()], vec![2, 1]).unwrap();
        assert!(lift_pair_to_line(&bad).is_err());
    }

    #[test]
    fn q_enumeration() {
        let two = enumerate_q(&[0, 1], &BigInt::from(2)).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].prob(&[0]), rat(1, 2));
        let three = enumerate_q(&[0, 1], &BigInt::from(3)).unwrap();
        let probs: Vec<Rational> = three.iter().map(|d| d.prob(&[0])).collect();
        assert_eq!(probs, vec![rat(1, 2), rat(1, 3), rat(2, 3)]);
        let huge = BigInt::one() << 1000;
        assert!(matches!(
            enumerate_q(&[0, 1], &huge),
            Err(DistError::CapExceeded { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let d = dhj_default();
        let back = JointDist::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        let bare = r#"{"alphabets":[[0,1]],"rows":[{"t":[0],"p":{"num":"1","den":"3"}},{"t":[1],"p":{"num":"2","den":"3"}}]}"#;
        let d = JointDist::from_json(bare).unwrap();
        assert_eq!(d.names(), &["v1"]);
        assert_eq!(d.prob(&[1]), rat(2, 3));
    }
}
