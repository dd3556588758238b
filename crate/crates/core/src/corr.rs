//! Correlations over tensor-power distributions, the product-correlation
//! maximizer, and the one-sided product pseudorandomness tester.

use crate::cube::{CoordDist, CubeSet, Side};
use crate::dist::JointDist;
use crate::rational::{self, int, Rational};
use crate::restrict::{sample_restriction, Restriction};
use crate::rng::{derive_seed, rng_from_seed};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrError {
    #[error("exact evaluation needs {needed} terms, budget is {budget}")]
    FallbackToSampling { needed: f64, budget: f64 },
    #[error("function tables disagree: {0}")]
    Shape(String),
    #[error("symbol {0} is not in the table alphabet")]
    Symbol(u8),
    #[error("grid search needs n <= 3 and at most {limit} grid points, got n = {n}, {points} points")]
    GridTooLarge { n: usize, points: f64, limit: f64 },
    #[error("per-coordinate law is invalid: {0}")]
    BadLaw(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Restrict(#[from] crate::restrict::RestrictError),
}

/// A complex function on `Σ^n`, indexed like a [`CubeSet`] over the same alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct FnTable {
    pub n: usize,
    pub alphabet: Vec<u8>,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FnTableFile {
    pub n: usize,
    pub alphabet: Vec<u8>,
    pub values: Vec<[f64; 2]>,
}

impl FnTable {
    pub fn new(n: usize, alphabet: Vec<u8>, values: Vec<Complex64>) -> Result<Self, CorrError> {
        let want = alphabet.len().pow(n as u32);
        if values.len() != want {
            return Err(CorrError::Shape(format!(
                "{} values for {}^{} cells",
                values.len(),
                alphabet.len(),
                n
            )));
        }
        Ok(FnTable {
            n,
            alphabet,
            values,
        })
    }

    pub fn from_fn(n: usize, alphabet: Vec<u8>, mut f: impl FnMut(&[u8]) -> Complex64) -> Self {
        let b = alphabet.len();
        let size = b.pow(n as u32);
        let mut word = vec![0u8; n];
        let values = (0..size)
            .map(|mut idx| {
                for slot in word.iter_mut().rev() {
                    *slot = alphabet[idx % b];
                    idx /= b;
                }
                f(&word)
            })
            .collect();
        FnTable {
            n,
            alphabet,
            values,
        }
    }

    /// `1_S - shift`, on the alphabet of `S`'s side.
    pub fn indicator(s: &CubeSet, shift: f64) -> Self {
        let values = (0..s.size())
            .map(|i| Complex64::new(f64::from(u8::from(s.contains_index(i))) - shift, 0.0))
            .collect();
        FnTable {
            n: s.n(),
            alphabet: s.side().symbols().to_vec(),
            values,
        }
    }

    pub fn base(&self) -> usize {
        self.alphabet.len()
    }

    pub fn pos(&self, sym: u8) -> Result<usize, CorrError> {
        self.alphabet
            .iter()
            .position(|&a| a == sym)
            .ok_or(CorrError::Symbol(sym))
    }

    pub fn get(&self, word: &[u8]) -> Result<Complex64, CorrError> {
        let b = self.base();
        let mut idx = 0;
        for &s in word {
            idx = idx * b + self.pos(s)?;
        }
        Ok(self.values[idx])
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.norm() == 0.0)
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im.abs() <= 1e-15)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        FnTable {
            n: self.n,
            alphabet: self.alphabet.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `f_{I->z}` over the surviving coordinates; `z` must use this table's alphabet.
    pub fn restrict(&self, r: &Restriction) -> Result<FnTable, CorrError> {
        if r.n != self.n {
            return Err(CorrError::Shape(format!("restriction of dimension {} on table of dimension {}", r.n, self.n)));
        }
        let b = self.base();
        let alive = r.surviving();
        let m = alive.len();
        let mut offset = 0usize;
        for (&c, &v) in r.coords.iter().zip(&r.z) {
            offset += self.pos(v)? * b.pow((self.n - 1 - c) as u32);
        }
        let gain: Vec<usize> = alive.iter().map(|&c| b.pow((self.n - 1 - c) as u32)).collect();
        let size = b.pow(m as u32);
        let mut values = Vec::with_capacity(size);
        let mut digits = vec![0usize; m];
        let mut idx = offset;
        for _ in 0..size {
            values.push(self.values[idx]);
            for pos in (0..m).rev() {
                if digits[pos] + 1 < b {
                    digits[pos] += 1;
                    idx += gain[pos];
                    break;
                }
                idx -= gain[pos] * digits[pos];
                digits[pos] = 0;
            }
        }
        Ok(FnTable {
            n: m,
            alphabet: self.alphabet.clone(),
            values,
        })
    }

    pub fn to_file(&self) -> FnTableFile {
        FnTableFile {
            n: self.n,
            alphabet: self.alphabet.clone(),
            values: self.values.iter().map(|v| [v.re, v.im]).collect(),
        }
    }

    pub fn from_file(f: &FnTableFile) -> Result<Self, CorrError> {
        FnTable::new(
            f.n,
            f.alphabet.clone(),
            f.values.iter().map(|v| Complex64::new(v[0], v[1])).collect(),
        )
    }
}

/// Probability of each alphabet symbol of a table when the `[3]` coordinate
/// law is pushed through the projection matching the alphabet.
pub fn pushforward(mu: &CoordDist, alphabet: &[u8]) -> Result<Vec<f64>, CorrError> {
    let side = match alphabet {
        [0, 1, 2] => Side::Full,
        [0, 1] => Side::ZeroOne,
        [0, 2] => Side::ZeroTwo,
        _ => return Err(CorrError::BadLaw(format!("unsupported alphabet {alphabet:?}"))),
    };
    let mut out = vec![0.0; alphabet.len()];
    for s in 0..3u8 {
        let t = side.project(s);
        let pos = alphabet.iter().position(|&a| a == t).expect("projection lands in alphabet");
        out[pos] += rational::to_f64(&mu[s as usize]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
    Alternating,
    Grid,
}

/// A product of one-coordinate factors `P_i : Σ -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductFunction {
    pub alphabet: Vec<u8>,
    pub factors: Vec<Vec<Complex64>>,
}

impl ProductFunction {
    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn eval(&self, word: &[u8]) -> Complex64 {
        word.iter()
            .zip(&self.factors)
            .map(|(&s, f)| f[self.alphabet.iter().position(|&a| a == s).expect("symbol in alphabet")])
            .product()
    }

    /// `v_i(a)` in `[0,1)` with `P_i(a) = exp(2 pi i v_i(a))`.
    pub fn phases(&self) -> Vec<Vec<f64>> {
        self.factors
            .iter()
            .map(|f| {
                f.iter()
                    .map(|c| (c.arg() / (2.0 * PI)).rem_euclid(1.0))
                    .collect()
            })
            .collect()
    }

    pub fn from_phases(alphabet: Vec<u8>, phases: &[Vec<f64>]) -> Self {
        ProductFunction {
            alphabet,
            factors: phases
                .iter()
                .map(|v| v.iter().map(|&t| Complex64::from_polar(1.0, 2.0 * PI * t)).collect())
                .collect(),
        }
    }

    pub fn table(&self) -> FnTable {
        let alphabet = self.alphabet.clone();
        FnTable::from_fn(self.n(), alphabet, |w| self.eval(w))
    }
}

impl Serialize for ProductFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            alphabet: &'a [u8],
            factors: Vec<Vec<[f64; 2]>>,
            phases: Vec<Vec<f64>>,
        }
        Repr {
            alphabet: &self.alphabet,
            factors: self
                .factors
                .iter()
                .map(|f| f.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            phases: self.phases(),
        }
        .serialize(s)
    }
}

fn ser_complex<S: serde::Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
    [c.re, c.im].serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    #[serde(serialize_with = "ser_complex")]
    pub value: Complex64,
    pub abs: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<ProductFunction>,
    /// Best value over `±1`-valued product functions, for real inputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_sign_value: Option<f64>,
    /// Upper bound on how far the grid optimum can sit below the true optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_bound: Option<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Coordinate updates whose objective dropped by more than `1e-12`.
    pub monotone_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Exact,
    MonteCarlo { samples: u64 },
    /// Exact when within budget, else sampled.
    Auto { samples: u64 },
}

pub const DEFAULT_EXACT_BUDGET: f64 = 1e8;

/// `E_{(x_1..x_k) ~ D^n}[f_1(x_1) … f_k(x_k)]`.
pub fn kwise_correlation(
    fs: &[&FnTable],
    d: &JointDist,
    mode: Mode,
    budget: f64,
    seed: u64,
) -> Result<CorrelationReport, CorrError> {
    let k = d.arity();
    if fs.len() != k {
        return Err(CorrError::Shape(format!("{} functions for a {k}-ary law", fs.len())));
    }
    let n = fs[0].n;
    if fs.iter().any(|f| f.n != n) {
        return Err(CorrError::Shape("functions have different dimensions".into()));
    }
    // per support row: table position of each symbol, and weight
    let rows: Vec<(Vec<usize>, f64)> = d
        .rows()
        .map(|(t, p)| {
            let pos = t
                .iter()
                .zip(fs)
                .map(|(&s, f)| f.pos(s))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((pos, rational::to_f64(p)))
        })
        .collect::<Result<_, CorrError>>()?;
    let needed = (rows.len() as f64).powi(n as i32);
    let exact = match mode {
        Mode::Exact => {
            if needed > budget {
                return Err(CorrError::FallbackToSampling { needed, budget });
            }
            true
        }
        Mode::MonteCarlo { .. } => false,
        Mode::Auto { .. } => needed <= budget,
    };
    if exact {
        let mut idx = vec![0usize; k];
        let value = exact_sum(fs, &rows, n, &mut idx, 1.0);
        return Ok(CorrelationReport {
            value,
            abs: value.norm(),
            method: Method::Exact,
            samples: None,
            stderr: None,
            witness: None,
            real_sign_value: None,
            gap_bound: None,
            converged: true,
            sweeps: 0,
            monotone_violations: 0,
        });
    }
    let samples = match mode {
        Mode::MonteCarlo { samples } | Mode::Auto { samples } => samples.max(2),
        Mode::Exact => unreachable!(),
    };
    let law = WeightedIndex::new(rows.iter().map(|r| r.1)).map_err(|e| CorrError::BadLaw(e.to_string()))?;
    const CHUNK: u64 = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let (sum, sum_sq): (Complex64, f64) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c]));
            let count = CHUNK.min(samples - c * CHUNK);
            let mut sum = Complex64::zero();
            let mut sum_sq = 0.0;
            let mut idx = vec![0usize; k];
            for _ in 0..count {
                idx.iter_mut().for_each(|v| *v = 0);
                for _ in 0..n {
                    let row = &rows[law.sample(&mut rng)].0;
                    for (i, f) in fs.iter().enumerate() {
                        idx[i] = idx[i] * f.base() + row[i];
                    }
                }
                let v: Complex64 = fs.iter().zip(&idx).map(|(f, &i)| f.values[i]).product();
                sum += v;
                sum_sq += v.norm_sqr();
            }
            (sum, sum_sq)
        })
        .reduce(|| (Complex64::zero(), 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nn = samples as f64;
    let mean = sum / nn;
    let var = ((sum_sq - nn * mean.norm_sqr()) / (nn - 1.0)).max(0.0);
    Ok(CorrelationReport {
        value: mean,
        abs: mean.norm(),
        method: Method::MonteCarlo,
        samples: Some(samples),
        stderr: Some((var / nn).sqrt()),
        witness: None,
        real_sign_value: None,
        gap_bound: None,
        converged: true,
        sweeps: 0,
        monotone_violations: 0,
    })
}

fn exact_sum(
    fs: &[&FnTable],
    rows: &[(Vec<usize>, f64)],
    left: usize,
    idx: &mut Vec<usize>,
    weight: f64,
) -> Complex64 {
    if left == 0 {
        return fs.iter().zip(idx.iter()).map(|(f, &i)| f.values[i]).product::<Complex64>() * weight;
    }
    let saved = idx.clone();
    let mut acc = Complex64::zero();
    for (pos, w) in rows {
        for (i, f) in fs.iter().enumerate() {
            idx[i] = saved[i] * f.base() + pos[i];
        }
        acc += exact_sum(fs, rows, left - 1, idx, weight * w);
    }
    idx.copy_from_slice(&saved);
    acc
}

/// Counts, per composition vector over `atoms`, the templates in `atoms^n`
/// whose instantiated points all lie in `s` (a full-side set). Each atom is a
/// tuple of symbols, one per point.
pub fn composition_counts(s: &CubeSet, atoms: &[Vec<u8>]) -> HashMap<Vec<u32>, u64> {
    let full;
    let s = if s.side() == Side::Full {
        s
    } else {
        full = s.pullback();
        &full
    };
    let n = s.n();
    let arity = atoms.first().map_or(0, |a| a.len());
    let weights: Vec<usize> = (0..n).map(|p| 3usize.pow((n - 1 - p) as u32)).collect();
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut comp = vec![0u32; atoms.len()];
    let mut idx = vec![0usize; arity];
    fn rec(
        pos: usize,
        s: &CubeSet,
        atoms: &[Vec<u8>],
        weights: &[usize],
        idx: &mut [usize],
        comp: &mut [u32],
        counts: &mut HashMap<Vec<u32>, u64>,
    ) {
        if pos == weights.len() {
            if idx.iter().all(|&i| s.contains_index(i)) {
                *counts.entry(comp.to_vec()).or_insert(0) += 1;
            }
            return;
        }
        let w = weights[pos];
        for (a, atom) in atoms.iter().enumerate() {
            for (slot, &sym) in idx.iter_mut().zip(atom) {
                *slot += w * sym as usize;
            }
            comp[a] += 1;
            rec(pos + 1, s, atoms, weights, idx, comp, counts);
            comp[a] -= 1;
            for (slot, &sym) in idx.iter_mut().zip(atom) {
                *slot -= w * sym as usize;
            }
        }
    }
    rec(0, s, atoms, &weights, &mut idx, &mut comp, &mut counts);
    counts
}

/// `sum_c count(c) * prod_a w_a^{c_a}`.
///
/// The weights are put over one denominator `L`, so the sum runs in integers and
/// only the final division by `L^{|c|}` reduces.
pub fn weighted_count_sum(counts: &HashMap<Vec<u32>, u64>, weights: &[Rational]) -> Rational {
    let top = counts.keys().flatten().copied().max().unwrap_or(0) as usize;
    let l = weights.iter().fold(BigInt::one(), |l, w| l.lcm(w.denom()));
    let powers: Vec<Vec<BigInt>> = weights
        .iter()
        .map(|w| {
            let num = w.numer() * (&l / w.denom());
            let mut row = vec![BigInt::one()];
            for e in 1..=top {
                let next = &row[e - 1] * &num;
                row.push(next);
            }
            row
        })
        .collect();
    let mut by_degree: BTreeMap<u64, BigInt> = BTreeMap::new();
    for (c, &cnt) in counts {
        let term = c
            .iter()
            .zip(&powers)
            .fold(BigInt::from(cnt), |t, (&e, p)| t * &p[e as usize]);
        let degree = c.iter().map(|&e| u64::from(e)).sum();
        *by_degree.entry(degree).or_default() += term;
    }
    by_degree
        .into_iter()
        .fold(Rational::zero(), |acc, (d, num)| acc + Rational::new(num, l.pow(d as u32)))
}

/// `E_{(x,y,z) ~ ξ^n}[1_S(x) 1_S(y) 1_S(z)]` for a law `ξ` on the four line atoms.
pub fn line_density(s: &CubeSet, xi_line: &JointDist) -> Result<Rational, CorrError> {
    if xi_line.arity() != 3 {
        return Err(CorrError::Shape("line law must be 3-ary".into()));
    }
    let atoms: Vec<Vec<u8>> = crate::dist::LINE_ATOMS.iter().map(|a| a.to_vec()).collect();
    if let Some((t, _)) = xi_line.rows().find(|(t, _)| !atoms.contains(t)) {
        return Err(CorrError::Shape(format!("{t:?} is not a line atom")));
    }
    let weights: Vec<Rational> = atoms.iter().map(|a| xi_line.prob(a)).collect();
    // drop zero-weight atoms from the enumeration
    let (live_atoms, live_w): (Vec<Vec<u8>>, Vec<Rational>) = atoms
        .into_iter()
        .zip(weights)
        .filter(|(_, w)| !w.is_zero())
        .unzip();
    Ok(weighted_count_sum(&composition_counts(s, &live_atoms), &live_w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizerOptions {
    pub restarts: usize,
    pub max_sweeps: usize,
    pub tol: f64,
    /// Phases per entry for the grid method.
    pub grid_resolution: usize,
}

impl Default for MaximizerOptions {
    fn default() -> Self {
        MaximizerOptions {
            restarts: 2,
            max_sweeps: 50,
            tol: 1e-10,
            grid_resolution: 16,
        }
    }
}

/// Per-update objective values of one alternating run.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub objectives: Vec<f64>,
}

const GRID_LIMIT: f64 = 1e8;

/// Largest `|E_{x ~ d^n}[f(x) prod_i P_i(x_i)]|` found over 1-bounded product functions.
/// `d` gives the per-coordinate law on `f`'s alphabet.
pub fn max_product_correlation(
    f: &FnTable,
    d: &[f64],
    method: Method,
    opts: &MaximizerOptions,
    seed: u64,
) -> Result<CorrelationReport, CorrError> {
    if d.len() != f.base() {
        return Err(CorrError::BadLaw(format!("{} masses for alphabet of size {}", d.len(), f.base())));
    }
    match method {
        Method::Grid => grid_max(f, d, opts.grid_resolution),
        _ => Ok(alternating_max(f, d, opts, seed, None)),
    }
}

/// `f(x) * prod_j d(x_j)`.
fn weighted(f: &FnTable, d: &[f64]) -> Vec<Complex64> {
    let mut w = vec![1.0f64; 1];
    for _ in 0..f.n {
        w = w.iter().flat_map(|&a| d.iter().map(move |&p| a * p)).collect();
    }
    f.values.iter().zip(&w).map(|(v, &p)| v * p).collect()
}

fn contract_last(t: &[Complex64], b: usize, p: &[Complex64]) -> Vec<Complex64> {
    t.chunks_exact(b)
        .map(|ch| ch.iter().zip(p).map(|(v, q)| v * q).sum())
        .collect()
}

/// `suffix[i]` is `F` with coordinates `i+1..n` contracted; the last entry is `F` itself.
fn suffix_contractions(fw: &[Complex64], n: usize, b: usize, factors: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(n.saturating_sub(1));
    for i in (0..n.saturating_sub(1)).rev() {
        let src = out.last().map_or(fw, Vec::as_slice);
        let next = contract_last(src, b, &factors[i + 1]);
        out.push(next);
    }
    out.reverse();
    out
}

/// `G_i(a) = sum_{x : x_i = a} F(x) prod_{j != i} P_j(x_j)` from `F` with the
/// trailing coordinates already contracted.
fn contract_leading(t: &[Complex64], b: usize, factors: &[Vec<Complex64>]) -> Vec<Complex64> {
    let mut t = t.to_vec();
    for p in factors {
        let stride = t.len() / b;
        let mut next = vec![Complex64::zero(); stride];
        for (a, q) in p.iter().enumerate() {
            for (slot, v) in next.iter_mut().zip(&t[a * stride..(a + 1) * stride]) {
                *slot += v * q;
            }
        }
        t = next;
    }
    t
}

fn alternating_max(
    f: &FnTable,
    d: &[f64],
    opts: &MaximizerOptions,
    seed: u64,
    trace: Option<&mut Vec<Trace>>,
) -> CorrelationReport {
    let n = f.n;
    let b = f.base();
    let fw = weighted(f, d);
    let real = f.is_real();
    let restarts = opts.restarts.max(1);
    let runs: Vec<(Complex64, Vec<Vec<Complex64>>, bool, usize, usize, Trace)> = (0..restarts)
        .into_par_iter()
        .map(|r| run_alternating(&fw, n, b, opts, derive_seed(seed, &[r as u64]), false))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.norm().total_cmp(&b.1 .0.norm()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let real_sign_value = if real {
        (0..restarts)
            .into_par_iter()
            .map(|r| run_alternating(&fw, n, b, opts, derive_seed(seed, &[r as u64, 1]), true).0.norm())
            .reduce(|| 0.0, f64::max)
            .into()
    } else {
        None
    };
    let violations = runs.iter().map(|r| r.4).sum();
    if let Some(t) = trace {
        t.extend(runs.iter().map(|r| r.5.clone()));
    }
    let (value, factors, converged, sweeps, _, _) = runs.into_iter().nth(best).expect("at least one restart");
    CorrelationReport {
        value,
        abs: value.norm(),
        method: Method::Alternating,
        samples: None,
        stderr: None,
        witness: Some(ProductFunction {
            alphabet: f.alphabet.clone(),
            factors,
        }),
        real_sign_value,
        gap_bound: None,
        converged,
        sweeps,
        monotone_violations: violations,
    }
}

type RunResult = (Complex64, Vec<Vec<Complex64>>, bool, usize, usize, Trace);

fn run_alternating(fw: &[Complex64], n: usize, b: usize, opts: &MaximizerOptions, seed: u64, real: bool) -> RunResult {
    let mut rng = rng_from_seed(seed);
    let mut factors: Vec<Vec<Complex64>> = (0..n)
        .map(|_| {
            (0..b)
                .map(|_| {
                    if real {
                        Complex64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0)
                    } else {
                        Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>())
                    }
                })
                .collect()
        })
        .collect();
    let mut trace = Trace::default();
    if n == 0 {
        let v = fw.first().copied().unwrap_or_default();
        return (v, factors, true, 0, 0, trace);
    }
    let mut violations = 0;
    let mut value = Complex64::zero();
    let mut last_sweep = f64::NEG_INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..opts.max_sweeps.max(1) {
        sweeps += 1;
        // coordinates after i still hold last sweep's factors when i is updated
        let suffix = suffix_contractions(fw, n, b, &factors);
        for i in 0..n {
            let tail = suffix.get(i).map_or(fw, Vec::as_slice);
            let g = contract_leading(tail, b, &factors[..i]);
            let before: Complex64 = g.iter().zip(&factors[i]).map(|(x, p)| x * p).sum();
            for (a, ga) in g.iter().enumerate() {
                let m = ga.norm();
                if m > 0.0 {
                    factors[i][a] = if real {
                        Complex64::new(ga.re.signum(), 0.0)
                    } else {
                        ga.conj() / m
                    };
                }
            }
            value = g.iter().zip(&factors[i]).map(|(x, p)| x * p).sum();
            if value.norm() < before.norm() - 1e-12 {
                violations += 1;
            }
            trace.objectives.push(value.norm());
        }
        let now = value.norm();
        if now - last_sweep <= opts.tol {
            converged = true;
            break;
        }
        last_sweep = now;
    }
    (value, factors, converged, sweeps, violations, trace)
}

/// Alternating maximization that also returns every per-update objective.
pub fn max_product_correlation_traced(
    f: &FnTable,
    d: &[f64],
    opts: &MaximizerOptions,
    seed: u64,
) -> (CorrelationReport, Vec<Trace>) {
    let mut traces = Vec::new();
    let rep = alternating_max(f, d, opts, seed, Some(&mut traces));
    (rep, traces)
}

/// Exhaustive search over `resolution` phases per entry, with `P_i` of the first
/// symbol fixed to 1 (a per-coordinate phase does not change the modulus).
fn grid_max(f: &FnTable, d: &[f64], resolution: usize) -> Result<CorrelationReport, CorrError> {
    let n = f.n;
    let b = f.base();
    let free = n * (b - 1);
    let points = (resolution as f64).powi(free as i32);
    if n > 3 || points > GRID_LIMIT {
        return Err(CorrError::GridTooLarge {
            n,
            points,
            limit: GRID_LIMIT,
        });
    }
    let fw = weighted(f, d);
    let roots: Vec<Complex64> = (0..resolution)
        .map(|t| Complex64::from_polar(1.0, 2.0 * PI * t as f64 / resolution as f64))
        .collect();
    let mut digits = vec![0usize; free];
    let mut best = (Complex64::zero(), digits.clone());
    let mut word = vec![0usize; n];
    loop {
        let mut total = Complex64::zero();
        for (idx, v) in fw.iter().enumerate() {
            let mut rest = idx;
            for slot in word.iter_mut().rev() {
                *slot = rest % b;
                rest /= b;
            }
            let mut p = *v;
            for (i, &a) in word.iter().enumerate() {
                if a > 0 {
                    p *= roots[digits[i * (b - 1) + a - 1]];
                }
            }
            total += p;
        }
        if total.norm() > best.0.norm() + 1e-15 {
            best = (total, digits.clone());
        }
        let mut pos = free;
        loop {
            if pos == 0 {
                let mass: f64 = fw.iter().map(|v| v.norm()).sum();
                let factors = (0..n)
                    .map(|i| {
                        std::iter::once(Complex64::one())
                            .chain((1..b).map(|a| roots[best.1[i * (b - 1) + a - 1]]))
                            .collect()
                    })
                    .collect();
                return Ok(CorrelationReport {
                    value: best.0,
                    abs: best.0.norm(),
                    method: Method::Grid,
                    samples: None,
                    stderr: None,
                    witness: Some(ProductFunction {
                        alphabet: f.alphabet.clone(),
                        factors,
                    }),
                    real_sign_value: None,
                    gap_bound: Some(free as f64 * PI / resolution as f64 * mass),
                    converged: true,
                    sweeps: 0,
                    monotone_violations: 0,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < resolution {
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TesterOptions {
    pub trials: usize,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for TesterOptions {
    fn default() -> Self {
        TesterOptions {
            trials: 16,
            restarts: 2,
            max_sweeps: 50,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pseudorandom,
    Not,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaReport {
    #[serde(serialize_with = "ser_rational")]
    pub delta: Rational,
    pub trials: usize,
    pub exceed: usize,
    pub fraction: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub best_value: f64,
}

fn ser_rational<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}

/// A restriction whose restricted function correlates with an explicit product function.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    #[serde(serialize_with = "ser_rational")]
    pub delta: Rational,
    pub restriction: Restriction,
    pub value: f64,
    pub product: ProductFunction,
}

#[derive(Debug, Clone, Serialize)]
pub struct PseudoReport {
    pub verdict: Verdict,
    pub n: usize,
    pub n_prime: usize,
    pub gamma: f64,
    pub per_delta: Vec<DeltaReport>,
    pub witness: Option<Witness>,
    /// PSEUDORANDOM rests on a heuristic maximizer; NOT rests on an explicit witness.
    pub note: &'static str,
}

/// Wilson score interval at 95%.
pub fn wilson(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let nn = n as f64;
    let p = k as f64 / nn;
    let denom = 1.0 + z * z / nn;
    let center = (p + z * z / (2.0 * nn)) / denom;
    let half = z * (p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

const TIE: f64 = 1e-9;

/// `n'/n, 2n'/n, 4n'/n, …` capped at and ending with 1.
pub fn delta_grid(n: usize, n_prime: usize) -> Vec<Rational> {
    let one = int(1);
    if n == 0 || n_prime >= n {
        return vec![one];
    }
    let mut out = Vec::new();
    let mut d = Rational::new(n_prime.max(1).into(), n.into());
    while d < one {
        out.push(d.clone());
        d *= int(2);
    }
    out.push(one);
    out
}

/// Tests whether restrictions of `f` down to about `n'` live coordinates
/// correlate at level `gamma` with product functions with probability below `gamma`.
/// `mu` is the per-coordinate law on `[3]`; restriction values are pushed onto
/// `f`'s alphabet.
pub fn product_pseudorandom_test(
    f: &FnTable,
    n_prime: usize,
    gamma: f64,
    mu: &CoordDist,
    opts: &TesterOptions,
    seed: u64,
) -> Result<PseudoReport, CorrError> {
    let d = pushforward(mu, &f.alphabet)?;
    let n = f.n;
    let note = "NOT is certified by an explicit witness; PSEUDORANDOM is a statistical verdict from a heuristic maximizer";
    if f.is_zero() {
        return Ok(PseudoReport {
            verdict: Verdict::Pseudorandom,
            n,
            n_prime,
            gamma,
            per_delta: vec![],
            witness: None,
            note,
        });
    }
    let side = match f.alphabet.as_slice() {
        [0, 1] => Side::ZeroOne,
        [0, 2] => Side::ZeroTwo,
        _ => Side::Full,
    };
    let mopts = MaximizerOptions {
        restarts: opts.restarts,
        max_sweeps: opts.max_sweeps,
        tol: opts.tol,
        ..MaximizerOptions::default()
    };
    let trials = opts.trials.max(1);
    let mut per_delta = Vec::new();
    let mut witness: Option<Witness> = None;
    for (di, delta) in delta_grid(n, n_prime).into_iter().enumerate() {
        let is_one = delta == int(1);
        let runs = if is_one { 1 } else { trials };
        let results: Vec<(Restriction, CorrelationReport)> = (0..runs)
            .into_par_iter()
            .map(|t| {
                let rs = derive_seed(seed, &[di as u64, t as u64]);
                let mut r = sample_restriction(n, &delta, mu, rs)?;
                r.z = r.z.iter().map(|&v| side.project(v)).collect();
                let g = f.restrict(&r)?;
                let rep = alternating_max(&g, &d, &mopts, derive_seed(rs, &[7]), None);
                Ok((r, rep))
            })
            .collect::<Result<_, CorrError>>()?;
        let hits = results.iter().filter(|(_, c)| c.abs >= gamma).count();
        let exceed = if is_one { hits * trials } else { hits };
        let (lo, hi) = wilson(exceed, trials);
        let best = results.iter().map(|r| r.1.abs).fold(f64::NEG_INFINITY, f64::max);
        // near-ties go to the restriction with the most live coordinates
        let live = |r: &Restriction| n - r.coords.len();
        let bi = (0..results.len())
            .filter(|&i| results[i].1.abs >= best - TIE)
            .max_by(|&a, &b| live(&results[a].0).cmp(&live(&results[b].0)).then(b.cmp(&a)))
            .expect("at least one trial");
        let better = |w: &Witness| {
            best > w.value + TIE
                || (best >= w.value - TIE && live(&results[bi].0) > live(&w.restriction))
        };
        if best >= gamma && witness.as_ref().is_none_or(better) {
            let (r, rep) = &results[bi];
            witness = Some(Witness {
                delta: delta.clone(),
                restriction: r.clone(),
                value: results[bi].1.abs,
                product: rep.witness.clone().expect("alternating returns a witness"),
            });
        }
        per_delta.push(DeltaReport {
            delta,
            trials,
            exceed,
            fraction: exceed as f64 / trials as f64,
            wilson_lo: lo,
            wilson_hi: hi,
            best_value: best,
        });
    }
    let verdict = if per_delta.iter().any(|r| r.wilson_lo >= gamma) && witness.is_some() {
        Verdict::Not
    } else if per_delta.iter().all(|r| r.wilson_hi < gamma) {
        Verdict::Pseudorandom
    } else {
        Verdict::Inconclusive
    };
    Ok(PseudoReport {
        verdict,
        n,
        n_prime,
        gamma,
        per_delta,
        witness,
        note,
    })
}
