//! The density-increment engine at desk scale.
//!
//! A [`DensityTriple`] carries `(S, E1, E2)` with `S ⊆ E1 ⊠ E2` and the chain of
//! restrictions, collapses and refinements that produced it from a root
//! instance, so any line found downstream lifts back to the root set.
//! Every density claim is an exact recount; heuristic sub-steps (maximizer,
//! bucketing, sampling) only choose which exact objects to build.

use crate::corr::{
    kwise_correlation, max_product_correlation, product_pseudorandom_test, pushforward,
    CorrError, FnTable, MaximizerOptions, Method, Mode, PseudoReport, TesterOptions, Verdict,
    Witness,
};
use crate::cube::{
    disjoint_product, find_line, uniform_coord, uniform_measure, CubeError, CubeSet,
    LineTemplate, Side,
};
use crate::dist::{dhj_default, DistError, JointDist};
use crate::rational::{self, int, rat, Rational};
use crate::restrict::{sample_restriction, CollapseSpec, CoordMap, RestrictError, Restriction, Slot};
use crate::rng::{derive_seed, rng_from_seed};
use crate::verify::Chain;
use num_complex::Complex64;
use num_traits::{One, Signed, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IncrementError {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Restrict(#[from] RestrictError),
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("S is not contained in E1 ⊠ E2")]
    NotContained,
    #[error("expected S on [3]^n, E1 on {{0,1}}^n and E2 on {{0,2}}^n of one dimension")]
    Shape,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn ser_rat<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}

fn ser_rats<S: Serializer>(rs: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rs.iter().map(rational::format))
}

fn f64_of(r: &Rational) -> f64 {
    rational::to_f64(r)
}

// ---------------------------------------------------------------------------
// parameters

/// Desk-scale replacements for the bucketing and Dirichlet sizes, whose
/// asymptotic values degenerate at small `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskOverrides {
    pub group_count: usize,
    pub group_size: usize,
    #[serde(with = "rational::as_string")]
    pub radius: Rational,
    #[serde(with = "rational::as_string")]
    pub eps: Rational,
    pub k_max: u32,
}

impl Default for DeskOverrides {
    fn default() -> Self {
        DeskOverrides {
            group_count: 4,
            group_size: 4,
            radius: rat(1, 8),
            eps: rat(1, 16),
            k_max: 8,
        }
    }
}

/// Every tunable of the engine. Rationals are written as `"a/b"` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamSet {
    /// Target relative density for structure checks and uniformization.
    #[serde(with = "rational::as_string")]
    pub alpha: Rational,
    #[serde(with = "rational::as_string")]
    pub tau: Rational,
    #[serde(with = "rational::as_string")]
    pub tau_tilde: Rational,
    #[serde(with = "rational::as_string")]
    pub gamma: Rational,
    #[serde(with = "rational::as_string")]
    pub gamma_prime: Rational,
    #[serde(with = "rational::as_string")]
    pub eta: Rational,
    #[serde(with = "rational::as_string")]
    pub eta_prime: Rational,
    pub k: u32,
    /// Bucket count exponent: `N = m^zeta`.
    #[serde(with = "rational::as_string")]
    pub zeta: Rational,
    /// `k_max = m^dirichlet_exp`.
    #[serde(with = "rational::as_string")]
    pub dirichlet_exp: Rational,
    /// Bucket radius `m^-radius_exp`.
    #[serde(with = "rational::as_string")]
    pub radius_exp: Rational,
    /// Approximation quality `eps = m^-approx_exp`.
    #[serde(with = "rational::as_string")]
    pub approx_exp: Rational,
    /// `n' = ceil(n^n_prime_exp)` for structure checks.
    #[serde(with = "rational::as_string")]
    pub n_prime_exp: Rational,
    /// `null` selects the literal exponents.
    pub desk: Option<DeskOverrides>,
    /// Survival probability of a coordinate in the line-law restriction.
    #[serde(with = "rational::as_string")]
    pub atom_keep: Rational,
    /// Stage-one restrictions keeping fewer live coordinates are ignored.
    pub min_live: usize,
    pub tester: TesterOptions,
    pub maximizer: MaximizerOptions,
    /// Restricted values `z` are enumerated when `3^|I|` is at most this, else sampled.
    pub z_cap: usize,
    pub z_samples: usize,
    /// Same for the uniform restriction of the uncollapsed coordinates.
    pub u_cap: usize,
    pub u_samples: usize,
    /// Sampled restrictions per stage of the increment step.
    pub chain_samples: usize,
    pub round_cap: usize,
    pub step_cap: usize,
    /// Uniformization stops when the partition grows past this many entries.
    pub max_entries: usize,
    /// Largest dimension at which the omega concentration is summed out.
    pub omega_max_n: usize,
    /// Largest number of terms for exact k-wise correlations.
    pub exact_budget: f64,
    pub mc_samples: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet {
            alpha: rat(1, 3),
            tau: rat(1, 10),
            tau_tilde: rat(1, 100),
            gamma: rat(3, 10),
            gamma_prime: rat(3, 10),
            eta: rat(1, 1000),
            eta_prime: rat(1, 2_000_000),
            k: 20,
            zeta: rat(1, 72),
            dirichlet_exp: rat(1, 12),
            radius_exp: rat(1, 6),
            approx_exp: rat(1, 36),
            n_prime_exp: rat(1, 4),
            desk: Some(DeskOverrides::default()),
            atom_keep: rat(1, 2),
            min_live: 1,
            tester: TesterOptions::default(),
            maximizer: MaximizerOptions::default(),
            z_cap: 59049,
            z_samples: 64,
            u_cap: 6561,
            u_samples: 243,
            chain_samples: 16,
            round_cap: 8,
            step_cap: 8,
            max_entries: 100_000,
            omega_max_n: 6,
            exact_budget: 1e7,
            mc_samples: 200_000,
        }
    }
}

/// Sizes used by one bucketing round on `m` live coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BucketParams {
    pub group_count: usize,
    pub group_size: usize,
    pub radius: f64,
    pub k_max: u32,
    pub eps: f64,
}

impl ParamSet {
    pub fn validate(&self) -> Result<(), IncrementError> {
        let zero = Rational::zero();
        let one = Rational::one();
        let open = |r: &Rational| r > &zero && r < &one;
        let bad = |what: &str| Err(IncrementError::Params(what.to_string()));
        if !open(&self.gamma) || !open(&self.gamma_prime) {
            return bad("gamma and gamma_prime must lie in (0,1)");
        }
        for (name, e) in [
            ("zeta", &self.zeta),
            ("dirichlet_exp", &self.dirichlet_exp),
            ("radius_exp", &self.radius_exp),
            ("approx_exp", &self.approx_exp),
            ("n_prime_exp", &self.n_prime_exp),
        ] {
            if !open(e) {
                return bad(&format!("{name} must lie in (0,1)"));
            }
        }
        if self.k == 0 || !self.eta_prime.is_positive() || !self.eta.is_positive() {
            return bad("K, eta and eta_prime must be positive");
        }
        if int(i64::from(self.k)) * &self.eta_prime * int(100) > self.eta {
            return bad("K * eta_prime must be at most eta / 100");
        }
        if self.alpha.is_negative() || self.alpha > one {
            return bad("alpha must lie in [0,1]");
        }
        if !self.tau.is_positive() || !self.tau_tilde.is_positive() {
            return bad("tau and tau_tilde must be positive");
        }
        if !self.atom_keep.is_positive() || self.atom_keep > one {
            return bad("atom_keep must lie in (0,1]");
        }
        if let Some(d) = &self.desk {
            if d.group_count == 0 || d.group_size == 0 || d.k_max == 0 {
                return bad("desk group_count, group_size and k_max must be positive");
            }
            if !d.radius.is_positive() || !d.eps.is_positive() {
                return bad("desk radius and eps must be positive");
            }
        }
        if self.z_samples == 0 || self.u_samples == 0 || self.chain_samples == 0 {
            return bad("sample counts must be positive");
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, IncrementError> {
        let p: ParamSet =
            serde_json::from_str(s).map_err(|e| IncrementError::Params(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// `ceil(n^n_prime_exp)`, at least 1 for `n >= 1`.
    pub fn n_prime(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let v = (n as f64).powf(f64_of(&self.n_prime_exp));
        ((v - 1e-9).ceil() as usize).clamp(1, n)
    }

    pub fn bucket_params(&self, m: usize) -> BucketParams {
        if let Some(d) = &self.desk {
            return BucketParams {
                group_count: d.group_count,
                group_size: d.group_size,
                radius: f64_of(&d.radius),
                k_max: d.k_max,
                eps: f64_of(&d.eps),
            };
        }
        let mf = (m.max(1)) as f64;
        BucketParams {
            group_count: (mf.powf(f64_of(&self.zeta)).ceil() as usize).max(1),
            group_size: ((mf.sqrt() / 2.0).ceil() as usize).max(1),
            radius: mf.powf(-f64_of(&self.radius_exp)),
            k_max: (mf.powf(f64_of(&self.dirichlet_exp)).ceil() as u32).max(1),
            eps: mf.powf(-f64_of(&self.approx_exp)),
        }
    }

    fn gamma_f64(&self) -> f64 {
        f64_of(&self.gamma)
    }
}

// ---------------------------------------------------------------------------
// triples

/// One step from a parent triple to a child.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Restrict(Restriction),
    Collapse(CollapseSpec),
    /// Replace `E1, E2` by these subsets and intersect `S` with their product.
    Refine { e1: CubeSet, e2: CubeSet },
}

/// `(S, E1, E2)` with cached uniform measures and provenance.
#[derive(Debug, Clone, Serialize)]
pub struct DensityTriple {
    pub s: CubeSet,
    pub e1: CubeSet,
    pub e2: CubeSet,
    #[serde(serialize_with = "ser_rat")]
    pub mu_s: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub mu_box: Rational,
    /// `μ(S) / μ(E1 ⊠ E2)`, zero for an empty box.
    #[serde(serialize_with = "ser_rat")]
    pub alpha: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub delta1: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub delta2: Rational,
    pub provenance: Vec<Step>,
    /// Words of this cube to words of the root cube.
    pub root_map: CoordMap,
}

fn measures(s: &CubeSet, e1: &CubeSet, e2: &CubeSet) -> Result<[Rational; 5], IncrementError> {
    let boxed = disjoint_product(e1, e2)?;
    if !s.is_subset(&boxed) {
        return Err(IncrementError::NotContained);
    }
    let mu_s = uniform_measure(s);
    let mu_box = uniform_measure(&boxed);
    let alpha = if mu_box.is_zero() {
        Rational::zero()
    } else {
        &mu_s / &mu_box
    };
    Ok([mu_s, mu_box, alpha, uniform_measure(e1), uniform_measure(e2)])
}

fn check_shape(s: &CubeSet, e1: &CubeSet, e2: &CubeSet) -> Result<(), IncrementError> {
    if s.side() != Side::Full
        || e1.side() != Side::ZeroOne
        || e2.side() != Side::ZeroTwo
        || s.n() != e1.n()
        || s.n() != e2.n()
    {
        return Err(IncrementError::Shape);
    }
    Ok(())
}

impl DensityTriple {
    pub fn new(s: CubeSet, e1: CubeSet, e2: CubeSet) -> Result<Self, IncrementError> {
        check_shape(&s, &e1, &e2)?;
        let [mu_s, mu_box, alpha, delta1, delta2] = measures(&s, &e1, &e2)?;
        let n = s.n();
        Ok(DensityTriple {
            s,
            e1,
            e2,
            mu_s,
            mu_box,
            alpha,
            delta1,
            delta2,
            provenance: vec![],
            root_map: CoordMap::identity(n),
        })
    }

    /// `(S0, {0,1}^n, {0,2}^n)`.
    pub fn root(s0: &CubeSet) -> Result<Self, IncrementError> {
        let n = s0.n();
        DensityTriple::new(s0.clone(), CubeSet::full(n, Side::ZeroOne)?, CubeSet::full(n, Side::ZeroTwo)?)
    }

    pub fn n(&self) -> usize {
        self.s.n()
    }

    /// `μ(E1)^2 + μ(E2)^2`.
    pub fn index_term(&self) -> Rational {
        &self.delta1 * &self.delta1 + &self.delta2 * &self.delta2
    }

    fn same_content(&self, other: &DensityTriple) -> bool {
        self.s == other.s && self.e1 == other.e1 && self.e2 == other.e2
    }

    fn content_key(&self) -> u64 {
        derive_seed(self.s.fingerprint(), &[self.e1.fingerprint(), self.e2.fingerprint()])
    }

    fn mapped(&self, map: &CoordMap, step: Step) -> Result<Self, IncrementError> {
        let s = crate::restrict::pull_set(&self.s, map);
        let e1 = crate::restrict::pull_set(&self.e1, map);
        let e2 = crate::restrict::pull_set(&self.e2, map);
        let mut t = DensityTriple::new(s, e1, e2)?;
        t.provenance = self.provenance.clone();
        t.provenance.push(step);
        t.root_map = self.root_map.then(map);
        Ok(t)
    }

    pub fn restrict(&self, r: &Restriction) -> Result<Self, IncrementError> {
        if r.n != self.n() {
            return Err(CubeError::DimensionMismatch(self.n(), r.n).into());
        }
        self.mapped(&r.coord_map(), Step::Restrict(r.clone()))
    }

    pub fn collapse(&self, spec: &CollapseSpec) -> Result<Self, IncrementError> {
        let all: Vec<usize> = spec.blocks.iter().flatten().copied().collect();
        if all.iter().any(|&c| c >= self.n()) {
            return Err(CubeError::DimensionMismatch(self.n(), all.iter().max().map_or(0, |m| m + 1)).into());
        }
        self.mapped(&spec.coord_map(self.n()), Step::Collapse(spec.clone()))
    }

    pub fn refine(&self, e1: &CubeSet, e2: &CubeSet) -> Result<Self, IncrementError> {
        check_shape(&self.s, e1, e2)?;
        let s = self.s.intersection(&disjoint_product(e1, e2)?)?;
        let mut t = DensityTriple::new(s, e1.clone(), e2.clone())?;
        t.provenance = self.provenance.clone();
        t.provenance.push(Step::Refine {
            e1: e1.clone(),
            e2: e2.clone(),
        });
        t.root_map = self.root_map.clone();
        Ok(t)
    }

    /// Applies this triple's provenance to `root`.
    pub fn replay(&self, root: &DensityTriple) -> Result<DensityTriple, IncrementError> {
        let mut t = root.clone();
        for step in &self.provenance {
            t = match step {
                Step::Restrict(r) => t.restrict(r)?,
                Step::Collapse(c) => t.collapse(c)?,
                Step::Refine { e1, e2 } => t.refine(e1, e2)?,
            };
        }
        Ok(t)
    }

    pub fn replays_from(&self, root: &DensityTriple) -> bool {
        self.replay(root).is_ok_and(|t| t.same_content(self))
    }

    pub fn lift_line(&self, t: &LineTemplate) -> LineTemplate {
        self.root_map.lift_template(t)
    }

    /// Measures and provenance length, without the sets.
    pub fn summary(&self) -> TripleSummary {
        TripleSummary {
            n: self.n(),
            size_s: self.s.len(),
            mu_s: rational::format(&self.mu_s),
            mu_box: rational::format(&self.mu_box),
            alpha: rational::format(&self.alpha),
            delta1: rational::format(&self.delta1),
            delta2: rational::format(&self.delta2),
            steps: self.provenance.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TripleSummary {
    pub n: usize,
    pub size_s: u64,
    pub mu_s: String,
    pub mu_box: String,
    pub alpha: String,
    pub delta1: String,
    pub delta2: String,
    pub steps: usize,
}

/// A weighted family of triples.
#[derive(Debug, Clone)]
pub struct PartitionState {
    pub entries: Vec<(Rational, DensityTriple)>,
    pub index: Rational,
}

/// `E_ξ[μ(E1')^2 + μ(E2')^2]`.
pub fn partition_index(ps: &PartitionState) -> Rational {
    ps.entries
        .iter()
        .fold(Rational::zero(), |acc, (w, t)| acc + w * t.index_term())
}

impl PartitionState {
    pub fn new(entries: Vec<(Rational, DensityTriple)>) -> Result<Self, IncrementError> {
        if entries.iter().any(|(w, _)| !w.is_positive()) {
            return Err(IncrementError::Precondition("partition weights must be positive".into()));
        }
        let total = entries.iter().fold(Rational::zero(), |a, (w, _)| a + w);
        if total != Rational::one() {
            return Err(IncrementError::Precondition(format!(
                "partition weights sum to {}",
                rational::format(&total)
            )));
        }
        let mut ps = PartitionState {
            entries,
            index: Rational::zero(),
        };
        ps.index = partition_index(&ps);
        Ok(ps)
    }

    pub fn single(t: DensityTriple) -> Self {
        let index = t.index_term();
        PartitionState {
            entries: vec![(Rational::one(), t)],
            index,
        }
    }

    pub fn total_weight(&self) -> Rational {
        self.entries.iter().fold(Rational::zero(), |a, (w, _)| a + w)
    }

    fn expectation(&self, f: impl Fn(&DensityTriple) -> &Rational) -> Rational {
        self.entries
            .iter()
            .fold(Rational::zero(), |a, (w, t)| a + w * f(t))
    }

    /// Sums the weights of triples with equal sets, keeping the first provenance.
    fn merged(entries: Vec<(Rational, DensityTriple)>) -> Vec<(Rational, DensityTriple)> {
        let mut out: Vec<(Rational, DensityTriple)> = Vec::new();
        let mut by_key: HashMap<u64, Vec<usize>> = HashMap::new();
        for (w, t) in entries {
            let slot = by_key.entry(t.content_key()).or_default();
            if let Some(&i) = slot.iter().find(|&&i| out[i].1.same_content(&t)) {
                out[i].0 += w;
            } else {
                slot.push(out.len());
                out.push((w, t));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// structure

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub n: usize,
    pub n_prime: usize,
    pub contained: bool,
    pub density_ok: bool,
    pub alpha_target: String,
    pub relative_density: String,
    pub e1: PseudoReport,
    pub e2: PseudoReport,
    /// Neither side was certified NOT pseudorandom.
    pub good: bool,
    /// Both sides tested PSEUDORANDOM.
    pub certified: bool,
    pub in_struct: bool,
}

impl StructureReport {
    /// The side and witness to partition on, E1 first.
    pub fn partition_witness(&self) -> Option<PartitionWitness> {
        [(Side::ZeroOne, &self.e1), (Side::ZeroTwo, &self.e2)]
            .into_iter()
            .find(|(_, r)| r.verdict == Verdict::Not)
            .and_then(|(side, r)| {
                r.witness.clone().map(|witness| PartitionWitness { side, witness })
            })
    }
}

fn test_side(e: &CubeSet, p: &ParamSet, seed: u64) -> Result<PseudoReport, IncrementError> {
    let delta = f64_of(&uniform_measure(e));
    let f = FnTable::indicator(e, delta);
    Ok(product_pseudorandom_test(
        &f,
        p.n_prime(e.n()),
        p.gamma_f64(),
        &uniform_coord(),
        &p.tester,
        seed,
    )?)
}

/// Membership in `Struct_alpha` for raw sets, reporting containment failures
/// instead of rejecting them.
pub fn check_structure_sets(
    s: &CubeSet,
    e1: &CubeSet,
    e2: &CubeSet,
    p: &ParamSet,
    seed: u64,
) -> Result<StructureReport, IncrementError> {
    check_shape(s, e1, e2)?;
    let boxed = disjoint_product(e1, e2)?;
    let contained = s.is_subset(&boxed);
    let mu_s = uniform_measure(s);
    let mu_box = uniform_measure(&boxed);
    let density_ok = mu_s >= &p.alpha * &mu_box;
    let rel = if mu_box.is_zero() {
        Rational::zero()
    } else {
        &mu_s / &mu_box
    };
    let (r1, r2) = rayon::join(
        || test_side(e1, p, derive_seed(seed, &[1])),
        || test_side(e2, p, derive_seed(seed, &[2])),
    );
    let (r1, r2) = (r1?, r2?);
    let good = r1.verdict != Verdict::Not && r2.verdict != Verdict::Not;
    let certified = r1.verdict == Verdict::Pseudorandom && r2.verdict == Verdict::Pseudorandom;
    Ok(StructureReport {
        n: s.n(),
        n_prime: p.n_prime(s.n()),
        contained,
        density_ok,
        alpha_target: rational::format(&p.alpha),
        relative_density: rational::format(&rel),
        e1: r1,
        e2: r2,
        good,
        certified,
        in_struct: contained && density_ok && certified,
    })
}

pub fn check_structure(t: &DensityTriple, p: &ParamSet, seed: u64) -> Result<StructureReport, IncrementError> {
    check_structure_sets(&t.s, &t.e1, &t.e2, p, seed)
}

// ---------------------------------------------------------------------------
// bucketing and Dirichlet approximation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Error)]
#[error("cannot form {requested_groups} groups of size {requested_size}: {achievable_groups} groups at that size, largest size for {requested_groups} groups is {achievable_size}")]
pub struct BucketShortfall {
    pub requested_groups: usize,
    pub requested_size: usize,
    pub achievable_groups: usize,
    /// Largest size still giving the requested number of groups; 0 if none.
    pub achievable_size: usize,
}

fn torus(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Snaps to a 1e-9 grid so values just below 1 land with 0.
fn unit_phase(x: f64) -> f64 {
    ((x * 1e9).round() / 1e9).rem_euclid(1.0)
}

/// Disjoint groups of phase vectors, each group inside one grid cell of width
/// `radius`, so pairwise torus distances are at most `radius`. Cells with more
/// vectors are used first; ties by cell position.
pub fn pigeonhole_buckets(
    phases: &[Vec<f64>],
    group_count: usize,
    group_size: usize,
    radius: f64,
) -> Result<Vec<Vec<usize>>, BucketShortfall> {
    let mut cells: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (j, v) in phases.iter().enumerate() {
        let key = v
            .iter()
            .map(|&x| (unit_phase(x) / radius).floor() as i64)
            .collect();
        cells.entry(key).or_default().push(j);
    }
    let mut cells: Vec<Vec<usize>> = cells.into_values().collect();
    cells.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let size = group_size.max(1);
    let available: usize = cells.iter().map(|c| c.len() / size).sum();
    if available < group_count {
        let achievable_size = (1..=size)
            .rev()
            .find(|&s| cells.iter().map(|c| c.len() / s).sum::<usize>() >= group_count)
            .unwrap_or(0);
        return Err(BucketShortfall {
            requested_groups: group_count,
            requested_size: size,
            achievable_groups: available,
            achievable_size,
        });
    }
    let mut out = Vec::with_capacity(group_count);
    'cells: for cell in &cells {
        for chunk in cell.chunks_exact(size) {
            if out.len() == group_count {
                break 'cells;
            }
            out.push(chunk.to_vec());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirichletHit {
    pub k: u32,
    pub norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Error)]
#[error("no k <= {k_max} brings the vector within the tolerance; best k = {best_k} with norm {best_norm}")]
pub struct NoK {
    pub k_max: u32,
    pub best_k: u32,
    pub best_norm: f64,
}

/// Smallest `k` in `1..=k_max` with `max_i |k v_i|_{R/Z} <= eps`.
pub fn dirichlet_k(v: &[f64], k_max: u32, eps: f64) -> Result<DirichletHit, NoK> {
    let mut best = (0u32, f64::INFINITY);
    for k in 1..=k_max.max(1) {
        let norm = v.iter().map(|&x| torus(k as f64 * x)).fold(0.0, f64::max);
        if norm <= eps + 1e-12 {
            return Ok(DirichletHit { k, norm });
        }
        if norm < best.1 {
            best = (k, norm);
        }
    }
    Err(NoK {
        k_max,
        best_k: best.0,
        best_norm: best.1,
    })
}

// ---------------------------------------------------------------------------
// one round

/// A certified failure of pseudorandomness on one side.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionWitness {
    pub side: Side,
    pub witness: Witness,
}

#[derive(Debug, Clone, Serialize)]
pub struct Drift {
    pub s: String,
    pub e1: String,
    pub e2: String,
    pub boxed: String,
    pub max_f64: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub side: Side,
    pub fixed: Vec<usize>,
    pub z_count: usize,
    pub z_sampled: bool,
    pub satisfying: usize,
    pub collapsed: usize,
    pub pieces: usize,
    pub bucket_params: BucketParams,
    #[serde(serialize_with = "ser_rat")]
    pub index_before: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub index_after: Rational,
    pub gain_f64: f64,
    /// The asymptotic `gamma^4 / 2`; at desk scale only a positive gain is required.
    pub gamma4_half: f64,
    pub gamma4_half_realized: bool,
    pub drift: Drift,
    pub diagnostics: Vec<String>,
}

fn all_words(len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..3u8).map(move |s| {
                    let mut w = w.clone();
                    w.push(s);
                    w
                })
            })
            .collect();
    }
    out
}

/// Words of `[3]^len` with equal weights: all of them when `3^len <= cap`, else `samples` draws.
fn word_family(len: usize, cap: usize, samples: usize, seed: u64) -> (Vec<Vec<u8>>, bool) {
    let count = 3f64.powi(len as i32);
    if count <= cap as f64 {
        return (all_words(len), false);
    }
    let mut rng = rng_from_seed(seed);
    let words = (0..samples)
        .map(|_| (0..len).map(|_| rng.gen_range(0..3u8)).collect())
        .collect();
    (words, true)
}

/// Normalized so the first symbol has phase 0.
fn relative_phases(p: &crate::corr::ProductFunction) -> Vec<Vec<f64>> {
    p.phases()
        .into_iter()
        .map(|v| {
            let base = v.first().copied().unwrap_or(0.0);
            v.iter().map(|&x| unit_phase(x - base)).collect()
        })
        .collect()
}

struct ZOutcome {
    pieces: Vec<(Rational, DensityTriple)>,
    satisfying: bool,
    collapsed: bool,
    diagnostics: Vec<String>,
}

fn refine_one_z(
    tz: DensityTriple,
    weight: Rational,
    side: Side,
    delta: f64,
    p: &ParamSet,
    seed: u64,
) -> Result<ZOutcome, IncrementError> {
    let e = if side == Side::ZeroOne { &tz.e1 } else { &tz.e2 };
    let f = FnTable::indicator(e, delta);
    let d = pushforward(&uniform_coord(), &f.alphabet)?;
    let rep = max_product_correlation(&f, &d, Method::Alternating, &p.maximizer, derive_seed(seed, &[0]))?;
    let mut diagnostics = Vec::new();
    if rep.abs < p.gamma_f64() {
        return Ok(ZOutcome {
            pieces: vec![(weight, tz)],
            satisfying: false,
            collapsed: false,
            diagnostics,
        });
    }
    let m = tz.n();
    let phases = rep.witness.as_ref().map(relative_phases).unwrap_or_default();
    let bp = p.bucket_params(m);
    let groups = match pigeonhole_buckets(&phases, bp.group_count, bp.group_size, bp.radius) {
        Ok(g) => g,
        Err(sf) => {
            diagnostics.push(sf.to_string());
            if sf.achievable_size >= 1 {
                pigeonhole_buckets(&phases, bp.group_count, sf.achievable_size, bp.radius)
                    .expect("achievable size")
            } else {
                pigeonhole_buckets(&phases, m, 1, bp.radius).unwrap_or_default()
            }
        }
    };
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let mut blocks = Vec::new();
    for g in &groups {
        let k_max = bp.k_max.min(g.len() as u32);
        match dirichlet_k(&phases[g[0]], k_max, bp.eps) {
            Ok(hit) => {
                let mut block: Vec<usize> = sample_indices(&mut rng, g.len(), hit.k as usize)
                    .into_iter()
                    .map(|i| g[i])
                    .collect();
                block.sort_unstable();
                blocks.push(block);
            }
            Err(nok) => diagnostics.push(format!("group {:?}: {nok}", g)),
        }
    }
    if blocks.is_empty() {
        diagnostics.push("no group admits a block; piece kept as restricted".into());
        return Ok(ZOutcome {
            pieces: vec![(weight, tz)],
            satisfying: true,
            collapsed: false,
            diagnostics,
        });
    }
    let spec = CollapseSpec::new(m, blocks.clone())?;
    let map = spec.coord_map(m);
    let tc = tz.collapse(&spec)?;
    let block_targets: Vec<usize> = blocks
        .iter()
        .map(|b| match map.slots[b[0]] {
            Slot::Var(k) => k,
            Slot::Fixed(_) => unreachable!("collapse maps never fix"),
        })
        .collect();
    let j: Vec<usize> = (0..tc.n()).filter(|c| !block_targets.contains(c)).collect();
    let (us, sampled) = word_family(j.len(), p.u_cap, p.u_samples, derive_seed(seed, &[2]));
    if sampled {
        diagnostics.push(format!("{} of 3^{} restrictions of the free coordinates sampled", us.len(), j.len()));
    }
    let w = weight / int(us.len() as i64);
    let pieces = us
        .into_iter()
        .map(|u| {
            let r = Restriction::new(tc.n(), j.clone(), u)?;
            Ok((w.clone(), tc.restrict(&r)?))
        })
        .collect::<Result<_, IncrementError>>()?;
    Ok(ZOutcome {
        pieces,
        satisfying: true,
        collapsed: true,
        diagnostics,
    })
}

/// One round of partitioning on a triple whose `side` set failed the tester.
///
/// Fix the witness coordinates `I`; for each `z` (all of `[3]^I`, or a sample),
/// if the restricted `1_E - δ` still correlates at level `γ` with a product
/// function, bucket its phase vectors, fuse a Dirichlet-sized subset of each
/// bucket, and restrict the remaining coordinates uniformly.
pub fn one_round_partition(
    t: &DensityTriple,
    w: &PartitionWitness,
    p: &ParamSet,
    seed: u64,
) -> Result<(PartitionState, RoundReport), IncrementError> {
    if w.side == Side::Full {
        return Err(IncrementError::Precondition("witness must concern E1 or E2".into()));
    }
    if w.witness.restriction.n != t.n() {
        return Err(IncrementError::Precondition(format!(
            "witness restriction has dimension {}, triple has {}",
            w.witness.restriction.n,
            t.n()
        )));
    }
    let delta = if w.side == Side::ZeroOne { &t.delta1 } else { &t.delta2 };
    let delta_f = f64_of(delta);
    let fixed = w.witness.restriction.coords.clone();
    let (zs, z_sampled) = word_family(fixed.len(), p.z_cap, p.z_samples, derive_seed(seed, &[0]));
    let wz = Rational::one() / int(zs.len() as i64);
    let outcomes: Vec<ZOutcome> = zs
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let r = Restriction::new(t.n(), fixed.clone(), z.clone())?;
            let tz = t.restrict(&r)?;
            refine_one_z(tz, wz.clone(), w.side, delta_f, p, derive_seed(seed, &[1, i as u64]))
        })
        .collect::<Result<_, IncrementError>>()?;
    let satisfying = outcomes.iter().filter(|o| o.satisfying).count();
    let collapsed = outcomes.iter().filter(|o| o.collapsed).count();
    let mut diagnostics: Vec<String> = Vec::new();
    if z_sampled {
        diagnostics.push(format!("{} of 3^{} restrictions sampled", zs.len(), fixed.len()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut entries = Vec::new();
    for o in outcomes {
        for d in o.diagnostics {
            if seen.insert(d.clone()) {
                diagnostics.push(d);
            }
        }
        entries.extend(o.pieces);
    }
    let pieces = entries.len();
    let state = PartitionState::new(PartitionState::merged(entries))?;
    let index_before = t.index_term();
    let index_after = state.index.clone();
    let gain = &index_after - &index_before;
    let g = p.gamma_f64();
    let gamma4_half = g.powi(4) / 2.0;
    let drift = drift_of(t, &state);
    Ok((
        state,
        RoundReport {
            side: w.side,
            fixed,
            z_count: zs.len(),
            z_sampled,
            satisfying,
            collapsed,
            pieces,
            bucket_params: p.bucket_params(t.n() - w.witness.restriction.coords.len()),
            gain_f64: f64_of(&gain),
            gamma4_half_realized: f64_of(&gain) >= gamma4_half,
            gamma4_half,
            index_before,
            index_after,
            drift,
            diagnostics,
        },
    ))
}

fn drift_of(t: &DensityTriple, ps: &PartitionState) -> Drift {
    let d = |e: Rational, v: &Rational| (e - v).abs();
    let s = d(ps.expectation(|x| &x.mu_s), &t.mu_s);
    let e1 = d(ps.expectation(|x| &x.delta1), &t.delta1);
    let e2 = d(ps.expectation(|x| &x.delta2), &t.delta2);
    let boxed = d(ps.expectation(|x| &x.mu_box), &t.mu_box);
    let max_f64 = [&s, &e1, &e2, &boxed].iter().map(|r| f64_of(r)).fold(0.0, f64::max);
    Drift {
        s: rational::format(&s),
        e1: rational::format(&e1),
        e2: rational::format(&e2),
        boxed: rational::format(&boxed),
        max_f64,
    }
}

// ---------------------------------------------------------------------------
// uniformization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UniformStatus {
    /// The input was already good; no rounds ran.
    AlreadyGood,
    /// The mass of not-good entries fell to the threshold.
    Terminated,
    /// Round cap, entry cap, or no accepted refinement.
    Nonterminated,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundSummary {
    pub round: usize,
    pub entries: usize,
    pub bad_entries: usize,
    #[serde(serialize_with = "ser_rat")]
    pub bad_mass: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub index: Rational,
    pub weights_sum_to_one: bool,
    pub refined: usize,
    pub rejected: usize,
    pub max_drift: f64,
    pub gamma4_half_realized: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformizeReport {
    pub status: UniformStatus,
    pub rounds: usize,
    #[serde(serialize_with = "ser_rats")]
    pub index_trajectory: Vec<Rational>,
    pub index_strictly_increasing: bool,
    pub weights_always_one: bool,
    #[serde(serialize_with = "ser_rat")]
    pub threshold: Rational,
    pub round_summaries: Vec<RoundSummary>,
    pub selected: TripleSummary,
    pub selected_good: bool,
    /// `μ(S') >= (α + τ/2) μ(E1' ⊠ E2')` for the selected entry.
    pub selected_meets_target: bool,
    pub note: Option<String>,
}

/// Tester verdicts memoized by set content.
#[derive(Default)]
struct Memo {
    reports: HashMap<CubeSet, PseudoReport>,
}

impl Memo {
    fn fill(&mut self, sets: Vec<&CubeSet>, p: &ParamSet, seed: u64) -> Result<(), IncrementError> {
        let mut todo: Vec<&CubeSet> = Vec::new();
        for s in sets {
            if !self.reports.contains_key(s) && !todo.contains(&s) {
                todo.push(s);
            }
        }
        let done: Vec<(CubeSet, PseudoReport)> = todo
            .par_iter()
            .map(|s| Ok(((*s).clone(), test_side(s, p, derive_seed(seed, &[s.fingerprint()]))?)))
            .collect::<Result<_, IncrementError>>()?;
        self.reports.extend(done);
        Ok(())
    }

    fn witness(&self, t: &DensityTriple) -> Option<PartitionWitness> {
        [(Side::ZeroOne, &t.e1), (Side::ZeroTwo, &t.e2)]
            .into_iter()
            .find_map(|(side, e)| {
                let r = &self.reports[e];
                (r.verdict == Verdict::Not)
                    .then(|| r.witness.clone().map(|witness| PartitionWitness { side, witness }))
                    .flatten()
            })
    }
}

/// Repeats [`one_round_partition`] on not-good entries until their mass is at
/// most `δτ/100` (with `δ = μ(E1 ⊠ E2)`), then returns a good entry meeting
/// `α + τ/2` when one exists.
pub fn uniformize(
    t: &DensityTriple,
    p: &ParamSet,
    round_cap: usize,
    seed: u64,
) -> Result<(DensityTriple, UniformizeReport), IncrementError> {
    if t.mu_s < (&p.alpha + &p.tau) * &t.mu_box || t.mu_box.is_zero() {
        return Err(IncrementError::Precondition(format!(
            "need μ(S) >= (α+τ) μ(E1 ⊠ E2); relative density is {}",
            rational::format(&t.alpha)
        )));
    }
    let threshold = &t.mu_box * &p.tau / int(100);
    let target = &p.alpha + &p.tau / int(2);
    let mut memo = Memo::default();
    let mut state = PartitionState::single(t.clone());
    let mut trajectory = vec![state.index.clone()];
    let mut summaries = Vec::new();
    let mut status = UniformStatus::Nonterminated;
    let mut note = None;
    let mut weights_always_one = true;
    let mut round = 0;
    loop {
        memo.fill(
            state.entries.iter().flat_map(|(_, e)| [&e.e1, &e.e2]).collect(),
            p,
            derive_seed(seed, &[0]),
        )?;
        let bad: Vec<usize> = (0..state.entries.len())
            .filter(|&i| memo.witness(&state.entries[i].1).is_some())
            .collect();
        let bad_mass = bad.iter().fold(Rational::zero(), |a, &i| a + &state.entries[i].0);
        if bad_mass <= threshold {
            status = if round == 0 {
                UniformStatus::AlreadyGood
            } else {
                UniformStatus::Terminated
            };
            break;
        }
        if round == round_cap {
            note = Some(format!("round cap {round_cap} reached"));
            break;
        }
        if state.entries.len() > p.max_entries {
            note = Some(format!("partition exceeded {} entries", p.max_entries));
            break;
        }
        round += 1;
        let results: Vec<(usize, Result<(PartitionState, RoundReport), IncrementError>)> = bad
            .par_iter()
            .map(|&i| {
                let w = memo.witness(&state.entries[i].1).expect("bad entry has a witness");
                let s = derive_seed(seed, &[round as u64, i as u64]);
                (i, one_round_partition(&state.entries[i].1, &w, p, s))
            })
            .collect();
        let mut replacement: HashMap<usize, PartitionState> = HashMap::new();
        let mut rejected = 0;
        let mut realized = 0;
        let mut max_drift: f64 = 0.0;
        let mut diagnostics = Vec::new();
        for (i, r) in results {
            let (sub, rep) = r?;
            max_drift = max_drift.max(rep.drift.max_f64);
            for d in rep.diagnostics {
                if !diagnostics.contains(&d) {
                    diagnostics.push(d);
                }
            }
            if sub.index > state.entries[i].1.index_term() {
                realized += usize::from(rep.gamma4_half_realized);
                replacement.insert(i, sub);
            } else {
                rejected += 1;
            }
        }
        let refined = replacement.len();
        let mut entries = Vec::new();
        for (i, (w, e)) in std::mem::take(&mut state.entries).into_iter().enumerate() {
            match replacement.remove(&i) {
                Some(sub) => entries.extend(sub.entries.into_iter().map(|(v, x)| (&w * v, x))),
                None => entries.push((w, e)),
            }
        }
        let before = trajectory.last().cloned().expect("trajectory starts nonempty");
        state = PartitionState::new(PartitionState::merged(entries))?;
        assert!(state.index >= before, "partition index decreased");
        let ok = state.total_weight() == Rational::one();
        weights_always_one &= ok;
        summaries.push(RoundSummary {
            round,
            entries: state.entries.len(),
            bad_entries: bad.len(),
            bad_mass,
            index: state.index.clone(),
            weights_sum_to_one: ok,
            refined,
            rejected,
            max_drift,
            gamma4_half_realized: realized,
            diagnostics,
        });
        trajectory.push(state.index.clone());
        if refined == 0 {
            note = Some("no refinement raised the index".into());
            break;
        }
    }
    let good = |e: &DensityTriple| {
        [&e.e1, &e.e2]
            .iter()
            .all(|s| memo.reports.get(*s).is_some_and(|r| r.verdict != Verdict::Not))
    };
    let meets = |e: &DensityTriple| !e.mu_box.is_zero() && e.mu_s >= &target * &e.mu_box;
    let best_of = |filter: &dyn Fn(&DensityTriple) -> bool| {
        state
            .entries
            .iter()
            .filter(|(_, e)| filter(e))
            .fold(None::<&DensityTriple>, |best, (_, e)| match best {
                Some(b) if b.alpha >= e.alpha => Some(b),
                _ => Some(e),
            })
    };
    let selected = match best_of(&|e| good(e) && meets(e)) {
        Some(e) => e.clone(),
        None => {
            note.get_or_insert_with(|| "no good entry meets α + τ/2; best entry returned".into());
            best_of(&|_| true).expect("partition is nonempty").clone()
        }
    };
    let strictly = trajectory.windows(2).all(|w| w[1] > w[0]);
    Ok((
        selected.clone(),
        UniformizeReport {
            status,
            rounds: round,
            index_strictly_increasing: strictly,
            index_trajectory: trajectory,
            weights_always_one,
            threshold,
            round_summaries: summaries,
            selected_good: good(&selected),
            selected_meets_target: meets(&selected),
            selected: selected.summary(),
            note,
        },
    ))
}

// ---------------------------------------------------------------------------
// increment step

/// A line of a derived cube and its lift to the root cube.
#[derive(Debug, Clone, Serialize)]
pub struct LineWitness {
    #[serde(serialize_with = "ser_template")]
    pub local: LineTemplate,
    #[serde(serialize_with = "ser_template")]
    pub lifted: LineTemplate,
    pub points: [Vec<u8>; 3],
}

fn ser_template<S: Serializer>(t: &LineTemplate, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_string())
}

impl LineWitness {
    fn new(t: &DensityTriple, local: LineTemplate) -> Self {
        let lifted = t.lift_line(&local);
        LineWitness {
            points: lifted.points(),
            local,
            lifted,
        }
    }

    /// Three distinct points of `s0` on the lifted line.
    pub fn verify(&self, s0: &CubeSet) -> bool {
        self.lifted.n() == s0.n()
            && self.lifted.wildcard_count() > 0
            && self.points.iter().all(|p| s0.contains(p))
    }
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    LineFound(LineWitness),
    NewTriple(DensityTriple),
    Diagnostic,
}

impl StepOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            StepOutcome::LineFound(_) => "LINE_FOUND",
            StepOutcome::NewTriple(_) => "NEW_TRIPLE",
            StepOutcome::Diagnostic => "DIAGNOSTIC",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub outcome: &'static str,
    pub input: TripleSummary,
    /// 1 for a density jump under the line-law restriction, 2 for the correlation branch.
    pub case: Option<u8>,
    pub details: Value,
    pub result: Option<TripleSummary>,
    pub line: Option<LineWitness>,
}

fn box_fn(t: &DensityTriple, alpha: f64) -> Result<FnTable, IncrementError> {
    let boxed = disjoint_product(&t.e1, &t.e2)?;
    Ok(FnTable::from_fn(t.n(), vec![0, 1, 2], |w| {
        let v = f64::from(u8::from(t.s.contains(w))) - alpha * f64::from(u8::from(boxed.contains(w)));
        Complex64::new(v, 0.0)
    }))
}

fn set_fn(s: &CubeSet) -> FnTable {
    FnTable::indicator(s, 0.0)
}

fn mode(p: &ParamSet) -> Mode {
    Mode::Auto {
        samples: p.mc_samples,
    }
}

/// `E|ω - δ1²δ2²|` over the `x`-columns of `mu2`, where `ω` averages
/// `E1(y)E1(y')E2(z)E2(z')` over the other columns given the `x`'s.
pub fn omega_deviation(e1: &CubeSet, e2: &CubeSet, mu2: &JointDist) -> Result<Rational, IncrementError> {
    let n = e1.n();
    let xs = mu2.coords(&["x", "x'", "x''", "x'''"])?;
    let ys = mu2.coords(&["y", "y'", "z", "z'"])?;
    let mut groups: BTreeMap<Vec<u8>, Vec<(Rational, Vec<u8>)>> = BTreeMap::new();
    for (row, p) in mu2.rows() {
        let key: Vec<u8> = xs.iter().map(|&c| row[c]).collect();
        groups
            .entry(key)
            .or_default()
            .push((p.clone(), ys.iter().map(|&c| row[c]).collect()));
    }
    // (marginal mass, conditional rows) per x-atom
    let atoms: Vec<(Rational, Vec<(Rational, Vec<u8>)>)> = groups
        .into_values()
        .map(|rows| {
            let total = rows.iter().fold(Rational::zero(), |a, (p, _)| a + p);
            let cond = rows.into_iter().map(|(p, r)| (p / &total, r)).collect();
            (total, cond)
        })
        .collect();
    let d1 = uniform_measure(e1);
    let d2 = uniform_measure(e2);
    let c = &d1 * &d1 * &d2 * &d2;
    let mut acc = Rational::zero();
    let mut choice = vec![0usize; n];
    let mut words = vec![vec![0u8; n]; 4];
    loop {
        let px = choice.iter().fold(Rational::one(), |a, &i| a * &atoms[i].0);
        let mut inner = Rational::zero();
        let mut pick = vec![0usize; n];
        loop {
            let mut w = Rational::one();
            for (pos, (&a, &r)) in choice.iter().zip(&pick).enumerate() {
                let (p, row) = &atoms[a].1[r];
                w *= p;
                for k in 0..4 {
                    words[k][pos] = row[k];
                }
            }
            if e1.contains_point(&words[0])
                && e1.contains_point(&words[1])
                && e2.contains_point(&words[2])
                && e2.contains_point(&words[3])
            {
                inner += w;
            }
            if !advance(&mut pick, |pos| atoms[choice[pos]].1.len()) {
                break;
            }
        }
        acc += px * (inner - &c).abs();
        if !advance(&mut choice, |_| atoms.len()) {
            break;
        }
    }
    Ok(acc)
}

fn advance(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for pos in (0..digits.len()).rev() {
        if digits[pos] + 1 < radix(pos) {
            digits[pos] += 1;
            return true;
        }
        digits[pos] = 0;
    }
    false
}

/// One increment step on a line-free triple: restrict under the line law, take
/// a density jump if one is measured (case 1), else follow the correlation
/// branch (case 2) through the four-wise average, the decomposition of its law,
/// and the `F1± / F2±` split, returning the sub-rectangle with the largest
/// exact relative density when it beats the input.
pub fn increment_step(t: &DensityTriple, p: &ParamSet, seed: u64) -> Result<(StepOutcome, StepReport), IncrementError> {
    let input = t.summary();
    let report = |outcome: &StepOutcome, case, details, result: Option<&DensityTriple>| StepReport {
        outcome: outcome.label(),
        input: input.clone(),
        case,
        details,
        result: result.map(DensityTriple::summary),
        line: match outcome {
            StepOutcome::LineFound(l) => Some(l.clone()),
            _ => None,
        },
    };
    if t.s.is_empty() {
        let o = StepOutcome::Diagnostic;
        let r = report(&o, None, json!({"reason": "empty S: zero density, no increment applies"}), None);
        return Ok((o, r));
    }
    if let Some(line) = find_line(&t.s) {
        let o = StepOutcome::LineFound(LineWitness::new(t, line));
        let r = report(&o, None, json!({"reason": "line found in the current set"}), None);
        return Ok((o, r));
    }
    let alpha = t.alpha.clone();
    let alpha_f = f64_of(&alpha);
    let nu = dhj_default();
    let case1_bar = &alpha + pow3(&alpha) * &p.tau_tilde / int(1000);
    let case2_bar = f64_of(&(pow3(&alpha) * &t.delta1 * &t.delta1 * &t.delta2 * &t.delta2 / int(4)));

    // stage 1: restriction under the line law
    let stage1: Vec<(Restriction, DensityTriple, f64)> = (0..p.chain_samples)
        .into_par_iter()
        .map(|i| {
            let rs = derive_seed(seed, &[1, i as u64]);
            let r = sample_restriction(t.n(), &p.atom_keep, &uniform_coord(), rs)?;
            let t1 = t.restrict(&r)?;
            let f = box_fn(&t1, alpha_f)?;
            let g = set_fn(&t1.s);
            let c = kwise_correlation(&[&f, &g, &g], &nu, mode(p), p.exact_budget, derive_seed(rs, &[1]))?;
            Ok((r, t1, c.value.re))
        })
        .collect::<Result<_, IncrementError>>()?;
    let samples1: Vec<Value> = stage1
        .iter()
        .map(|(r, t1, c)| {
            json!({
                "fixed": r.coords.len(),
                "n": t1.n(),
                "alpha": rational::format(&t1.alpha),
                "mu_box": rational::format(&t1.mu_box),
                "three_wise": c,
            })
        })
        .collect();
    let mut details = json!({
        "alpha": rational::format(&alpha),
        "case1_threshold": rational::format(&case1_bar),
        "case2_threshold": case2_bar,
        "stage1": samples1,
    });
    let best1 = stage1
        .iter()
        .filter(|(_, t1, _)| t1.n() >= p.min_live)
        .filter(|(_, t1, _)| !t1.mu_box.is_zero() && t1.alpha >= case1_bar)
        .fold(None::<&DensityTriple>, |b, (_, t1, _)| match b {
            Some(b) if b.alpha >= t1.alpha => Some(b),
            _ => Some(t1),
        });
    if let Some(t1) = best1 {
        let o = StepOutcome::NewTriple(t1.clone());
        let r = report(&o, Some(1), details, Some(t1));
        return Ok((o, r));
    }
    let best2 = stage1
        .iter()
        .filter(|(_, t1, c)| t1.n() >= p.min_live && *c >= case2_bar)
        .fold(None::<&(Restriction, DensityTriple, f64)>, |b, x| match b {
            Some(b) if b.2 >= x.2 => Some(b),
            _ => Some(x),
        });
    let Some((_, t1, _)) = best2 else {
        details["reason"] = json!("neither case hypothesis measured on the sampled restrictions");
        let o = StepOutcome::Diagnostic;
        let r = report(&o, None, details, None);
        return Ok((o, r));
    };

    // stage 2: four-wise average and the split
    let chain = Chain::new(&nu)?;
    let mu2x = chain.mu2.marginal_by_name(&["x", "x'", "x''", "x'''"])?;
    let f = box_fn(t1, alpha_f)?;
    let four = kwise_correlation(&[&f, &f, &f, &f], &mu2x, mode(p), p.exact_budget, derive_seed(seed, &[2]))?;
    let nu4 = JointDist::uniform_on(
        vec![vec![0, 1, 2]; 4],
        &[vec![0, 0, 0, 0], vec![0, 2, 0, 2], vec![0, 0, 1, 1]],
    )?;
    let dec = mu2x.decompose(&nu4)?;
    details["four_wise"] = json!({"value": four.value.re, "method": four.method});
    details["beta"] = json!(rational::format(&dec.beta));
    if t1.n() <= p.omega_max_n {
        let om = omega_deviation(&t1.e1, &t1.e2, &chain.mu2)?;
        details["omega_deviation"] = json!({"value": rational::format(&om), "f64": f64_of(&om)});
    }
    let Some(residual) = dec.residual.as_ref() else {
        details["reason"] = json!("the four-wise law is exactly the component; no restriction to take");
        let o = StepOutcome::Diagnostic;
        let r = report(&o, Some(2), details, None);
        return Ok((o, r));
    };
    let rows: Vec<(&Vec<u8>, f64)> = residual.rows().map(|(t, p)| (t, f64_of(p))).collect();
    let law = WeightedIndex::new(rows.iter().map(|r| r.1)).map_err(|e| IncrementError::Params(e.to_string()))?;
    let keep = f64_of(&dec.beta);
    let boxed1 = disjoint_product(&t1.e1, &t1.e2)?;
    let candidates: Vec<(usize, Vec<(String, DensityTriple)>, bool)> = (0..p.chain_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[3, i as u64]));
            let n1 = t1.n();
            let mut fixed = Vec::new();
            let mut zs: [Vec<u8>; 4] = Default::default();
            for c in 0..n1 {
                if rng.gen::<f64>() >= keep {
                    fixed.push(c);
                    let row = rows[law.sample(&mut rng)].0;
                    for k in 0..4 {
                        zs[k].push(row[k]);
                    }
                }
            }
            let with_zero = |z: &[u8]| {
                let mut w = vec![0u8; n1];
                for (&c, &v) in fixed.iter().zip(z) {
                    w[c] = v;
                }
                w
            };
            if !boxed1.contains(&with_zero(&zs[0])) {
                return Ok((fixed.len(), vec![], false));
            }
            let live: Vec<usize> = (0..n1).filter(|c| !fixed.contains(c)).collect();
            let m = live.len();
            let at = |z: &[u8], y: &[u8]| {
                let mut w = with_zero(z);
                for (&c, &v) in live.iter().zip(y) {
                    w[c] = v;
                }
                w
            };
            let t3 = t1.restrict(&Restriction::new(n1, fixed.clone(), zs[3].clone())?)?;
            let split = |z: &[u8], side: Side, plus: bool| {
                CubeSet::from_fn(m, side, |y| {
                    let w = at(z, y);
                    boxed1.contains(&w) && t1.s.contains(&w) == plus
                })
            };
            let f1 = [split(&zs[2], Side::ZeroOne, true)?, split(&zs[2], Side::ZeroOne, false)?];
            let f2 = [split(&zs[1], Side::ZeroTwo, true)?, split(&zs[1], Side::ZeroTwo, false)?];
            let mut out = Vec::new();
            for (a, g1) in f1.iter().enumerate() {
                for (b, g2) in f2.iter().enumerate() {
                    let e1 = g1.intersection(&t3.e1)?;
                    let e2 = g2.intersection(&t3.e2)?;
                    let label = format!("F1{} F2{}", ["+", "-"][a], ["+", "-"][b]);
                    out.push((label, t3.refine(&e1, &e2)?));
                }
            }
            Ok((fixed.len(), out, true))
        })
        .collect::<Result<_, IncrementError>>()?;
    let event_count = candidates.iter().filter(|c| c.2).count();
    let mut best: Option<(&String, &DensityTriple)> = None;
    for (_, cs, _) in &candidates {
        for (label, c) in cs {
            if c.mu_box.is_zero() || c.n() < p.min_live {
                continue;
            }
            if best.is_none_or(|(_, b)| c.alpha > b.alpha) {
                best = Some((label, c));
            }
        }
    }
    details["stage2_samples"] = json!(p.chain_samples);
    details["event_holds"] = json!(event_count);
    match best {
        Some((label, c)) if c.alpha > alpha => {
            details["split"] = json!(label);
            let o = StepOutcome::NewTriple(c.clone());
            let r = report(&o, Some(2), details, Some(c));
            Ok((o, r))
        }
        other => {
            if let Some((label, c)) = other {
                details["best_split"] = json!({"label": label, "triple": c.summary()});
            }
            details["reason"] = json!("no sub-rectangle beat the input relative density");
            let o = StepOutcome::Diagnostic;
            let r = report(&o, Some(2), details, None);
            Ok((o, r))
        }
    }
}

fn pow3(r: &Rational) -> Rational {
    r * r * r
}

// ---------------------------------------------------------------------------
// driver

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub op: &'static str,
    pub n: usize,
    pub alpha: String,
    pub delta1: String,
    pub delta2: String,
    pub index: String,
    pub outcome: String,
    pub diagnostics: Value,
}

impl TraceRecord {
    fn of(step: usize, op: &'static str, t: &DensityTriple, index: &Rational, outcome: &str, diagnostics: Value) -> Self {
        TraceRecord {
            step,
            op,
            n: t.n(),
            alpha: rational::format(&t.alpha),
            delta1: rational::format(&t.delta1),
            delta2: rational::format(&t.delta2),
            index: rational::format(index),
            outcome: outcome.to_string(),
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DriverOutcome {
    LineFound,
    Cap,
    Diagnostic,
    /// A reported line failed re-verification against the input set.
    LiftMismatch,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriverReport {
    pub outcome: DriverOutcome,
    pub steps: usize,
    pub line: Option<LineWitness>,
    pub verified: bool,
    pub trace: Vec<TraceRecord>,
}

impl DriverReport {
    /// One JSON object per trace record.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// Alternates [`increment_step`] and [`uniformize`] from the root triple of `s0`.
pub fn main_driver(s0: &CubeSet, p: &ParamSet, step_cap: usize, seed: u64) -> Result<DriverReport, IncrementError> {
    let root = DensityTriple::root(s0)?;
    let mut t = root.clone();
    let mut trace = vec![TraceRecord::of(0, "root", &t, &t.index_term(), "ROOT", Value::Null)];
    for step in 1..=step_cap {
        let (outcome, rep) = increment_step(&t, p, derive_seed(seed, &[step as u64, 0]))?;
        let details = serde_json::to_value(&rep.details).unwrap_or(Value::Null);
        match outcome {
            StepOutcome::LineFound(line) => {
                let verified = line.verify(s0);
                trace.push(TraceRecord::of(step, "increment", &t, &t.index_term(), "LINE_FOUND", json!({"line": &line, "verified": verified})));
                return Ok(DriverReport {
                    outcome: if verified {
                        DriverOutcome::LineFound
                    } else {
                        DriverOutcome::LiftMismatch
                    },
                    steps: step,
                    line: Some(line),
                    verified,
                    trace,
                });
            }
            StepOutcome::Diagnostic => {
                trace.push(TraceRecord::of(step, "increment", &t, &t.index_term(), "DIAGNOSTIC", details));
                return Ok(DriverReport {
                    outcome: DriverOutcome::Diagnostic,
                    steps: step,
                    line: None,
                    verified: false,
                    trace,
                });
            }
            StepOutcome::NewTriple(next) => {
                debug_assert!(next.replays_from(&root));
                trace.push(TraceRecord::of(step, "increment", &next, &next.index_term(), "NEW_TRIPLE", json!({"case": rep.case})));
                let mut q = p.clone();
                q.alpha = (&next.alpha - &p.tau).max(Rational::zero());
                let (sel, urep) = uniformize(&next, &q, p.round_cap, derive_seed(seed, &[step as u64, 1]))?;
                let index = urep.index_trajectory.last().cloned().unwrap_or_else(|| sel.index_term());
                trace.push(TraceRecord::of(
                    step,
                    "uniformize",
                    &sel,
                    &index,
                    &serde_json::to_value(urep.status)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    json!({"rounds": urep.rounds, "note": urep.note, "selected_good": urep.selected_good}),
                ));
                t = sel;
            }
        }
    }
    Ok(DriverReport {
        outcome: DriverOutcome::Cap,
        steps: step_cap,
        line: None,
        verified: false,
        trace,
    })
}
