//! Machine-checked reproductions of the finite claims behind the increment
//! argument: table supports from Cauchy-Schwarz duplication, connectivity of
//! the derived supports, the factor-reduction identity, marginals, and the
//! exact chain bounds.
//!
//! Transcribed rows live in `data/tables.json`; nothing here restates them.

use crate::connect::{
    check_all_k_minus_1_projections, is_pairwise_connected,
    projection_connected, ConnectivityReport,
};
use crate::corr::{composition_counts, weighted_count_sum, TesterOptions, Verdict};
use crate::cube::{disjoint_product, uniform_coord, uniform_measure, CubeSet, Side};
use crate::dist::{
    chain_pair, check_pair_bounds, dhj_default, ChainParams, DistError, JointDist, SymbolMap,
};
use crate::rational::{self, int, Rational};
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

const BUILTIN: &str = include_str!("../data/tables.json");
pub const DATA_FILE: &str = "tables.json";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("cannot read data file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad data file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("data file lacks {0}")]
    Missing(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowSource {
    pub row: Vec<u8>,
    /// One-based row numbers in the source table.
    pub from: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimedSupport {
    pub alphabets: Vec<Vec<u8>>,
    pub rows: Vec<Vec<u8>>,
    #[serde(default)]
    pub connected_projections: Vec<Vec<usize>>,
    #[serde(default)]
    pub sources: Vec<RowSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorReduction {
    pub table: String,
    pub e1: Vec<String>,
    pub e2: Vec<String>,
}

/// The transcribed tables and claimed supports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimData {
    pub tables: BTreeMap<String, Table>,
    pub factor_reduction: FactorReduction,
    pub row_sources: BTreeMap<String, Vec<RowSource>>,
    pub supports: BTreeMap<String, ClaimedSupport>,
}

impl ClaimData {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("checked-in data parses")
    }

    /// Reads `tables.json` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, VerifyError> {
        let text = std::fs::read_to_string(dir.join(DATA_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn table(&self, name: &str) -> Result<&Table, VerifyError> {
        self.tables
            .get(name)
            .ok_or_else(|| VerifyError::Missing(format!("table {name}")))
    }

    pub fn support(&self, name: &str) -> Result<&ClaimedSupport, VerifyError> {
        self.supports
            .get(name)
            .ok_or_else(|| VerifyError::Missing(format!("support {name}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClaimReport {
    pub claim_id: String,
    pub status: Status,
    pub certificate: Value,
}

fn claim(id: &str, ok: bool, certificate: Value) -> ClaimReport {
    ClaimReport {
        claim_id: id.to_string(),
        status: Status::from_bool(ok),
        certificate,
    }
}

/// Claim reports keyed by id.
#[derive(Debug, Clone, Serialize, Default)]
pub struct VerifyReport {
    pub claims: BTreeMap<String, ClaimReport>,
}

impl VerifyReport {
    pub fn push(&mut self, c: ClaimReport) {
        self.claims.insert(c.claim_id.clone(), c);
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = ClaimReport>) {
        for c in cs {
            self.push(c);
        }
    }

    pub fn all_pass(&self) -> bool {
        self.claims.values().all(|c| c.status != Status::Fail)
    }

    pub fn status(&self, id: &str) -> Option<Status> {
        self.claims.get(id).map(|c| c.status)
    }
}

fn rows_json(d: &JointDist) -> Value {
    Value::Array(
        d.rows()
            .map(|(t, p)| json!({"t": t, "p": rational::format(p)}))
            .collect(),
    )
}

fn set_diff(computed: &[Vec<u8>], claimed: &[Vec<u8>]) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let a: BTreeSet<&Vec<u8>> = computed.iter().collect();
    let b: BTreeSet<&Vec<u8>> = claimed.iter().collect();
    (
        b.difference(&a).map(|t| (*t).clone()).collect(),
        a.difference(&b).map(|t| (*t).clone()).collect(),
    )
}

/// The duplication chain seeded by a 3-ary law with coordinates named x, y, z.
pub struct Chain {
    pub mu1: JointDist,
    pub mu2: JointDist,
    /// `mu2` duplicated over its x's, before projection.
    pub dup3: JointDist,
    /// Projected onto `(pi1 of the y's, pi2 of the z's)`.
    pub mu3: JointDist,
}

pub const MU3_COLUMNS: [&str; 8] = ["y", "y'", "y''", "y'''", "z", "z'", "z''", "z'''"];

impl Chain {
    pub fn new(base: &JointDist) -> Result<Self, DistError> {
        let mu1 = base.cs_duplicate_by_name(&["z"])?;
        let mu2 = mu1.cs_duplicate_by_name(&["y", "y'"])?;
        let dup3 = mu2.cs_duplicate_by_name(&["x", "x'", "x''", "x'''"])?;
        let maps: Vec<SymbolMap> = (0..8)
            .map(|i| if i < 4 { SymbolMap::Pi1 } else { SymbolMap::Pi2 })
            .collect();
        let mu3 = dup3.marginal_by_name(&MU3_COLUMNS)?.project_symbols(&maps)?;
        Ok(Chain {
            mu1,
            mu2,
            dup3,
            mu3,
        })
    }

    /// `mu4`: duplicate `mu3` keeping all but `pi1(y), pi1(y'')`, then take
    /// `(pi1(y), pi1(y''), copy of pi1(y), copy of pi1(y''))`.
    pub fn mu4(&self) -> Result<JointDist, DistError> {
        let y = self.mu3.coord("pi1(y)")?;
        let y2 = self.mu3.coord("pi1(y'')")?;
        let keep: Vec<usize> = (0..self.mu3.arity()).filter(|&c| c != y && c != y2).collect();
        let k = self.mu3.arity();
        let dup = self.mu3.cs_duplicate(&keep)?;
        dup.marginal(&[y, y2, k, k + 1])
    }
}

fn in_table_order(d: &JointDist, t: &Table) -> Result<JointDist, DistError> {
    let cols: Vec<&str> = t.columns.iter().map(|s| s.as_str()).collect();
    d.marginal_by_name(&cols)
}

fn support_claim(id: &str, computed: &JointDist, table: &Table) -> Result<ClaimReport, VerifyError> {
    let ordered = in_table_order(computed, table)?;
    let support = ordered.support();
    let (missing, extra) = set_diff(&support, &table.rows);
    let ok = missing.is_empty() && extra.is_empty() && computed.total() == int(1);
    Ok(claim(
        id,
        ok,
        json!({
            "columns": table.columns,
            "computed_rows": support.len(),
            "claimed_rows": table.rows.len(),
            "missing": missing,
            "extra": extra,
            "rows": rows_json(&ordered),
        }),
    ))
}

/// Pairs of `mu1` table rows whose duplication over `(y, y')` yields each `mu2` row.
fn mu2_sources(data: &ClaimData) -> Result<BTreeMap<Vec<u8>, Vec<[usize; 2]>>, VerifyError> {
    let t1 = data.table("mu1")?;
    let t2 = data.table("mu2")?;
    let c1 = |name: &str| t1.columns.iter().position(|c| c == name);
    let col = |name: &str| c1(name).ok_or_else(|| VerifyError::Missing(format!("mu1 column {name}")));
    let (x, y, xp, yp, z) = (col("x")?, col("y")?, col("x'")?, col("y'")?, col("z")?);
    let mut out: BTreeMap<Vec<u8>, Vec<[usize; 2]>> = BTreeMap::new();
    for (i, a) in t1.rows.iter().enumerate() {
        for (j, b) in t1.rows.iter().enumerate() {
            if a[y] != b[y] || a[yp] != b[yp] {
                continue;
            }
            // x, y, z, x', y' from a; the copies x'', z', x''' from b
            let named: BTreeMap<&str, u8> = [
                ("x", a[x]),
                ("x'", a[xp]),
                ("x''", b[x]),
                ("x'''", b[xp]),
                ("y", a[y]),
                ("y'", a[yp]),
                ("z", a[z]),
                ("z'", b[z]),
            ]
            .into_iter()
            .collect();
            let row: Vec<u8> = t2.columns.iter().map(|c| named[c.as_str()]).collect();
            out.entry(row).or_default().push([i + 1, j + 1]);
        }
    }
    Ok(out)
}

/// Supports of the three tables from the chain seeded by `base`, plus the
/// recorded row-source notes for `mu2`.
pub fn verify_table_supports_from(base: &JointDist, data: &ClaimData) -> Result<Vec<ClaimReport>, VerifyError> {
    let chain = Chain::new(base)?;
    let mut out = vec![
        support_claim("mu1_support", &chain.mu1, data.table("mu1")?)?,
        support_claim("mu2_support", &chain.mu2, data.table("mu2")?)?,
        support_claim("mu3_support", &chain.mu3, data.table("mu3")?)?,
    ];
    let sources = mu2_sources(data)?;
    let notes = data.row_sources.get("mu2").cloned().unwrap_or_default();
    let checked: Vec<Value> = notes
        .iter()
        .map(|n| {
            let found = sources.get(&n.row).cloned().unwrap_or_default();
            let ok = found.contains(&n.from) || found.contains(&[n.from[1], n.from[0]]);
            json!({"row": n.row, "claimed_from": n.from, "found_from": found, "ok": ok})
        })
        .collect();
    let ok = checked.iter().all(|c| c["ok"] == json!(true));
    out.push(claim("mu2_row_sources", ok, json!({ "notes": checked })));
    Ok(out)
}

pub fn verify_table_supports(data: &ClaimData) -> Result<Vec<ClaimReport>, VerifyError> {
    verify_table_supports_from(&dhj_default(), data)
}

fn connectivity_json(r: &ConnectivityReport) -> Value {
    serde_json::to_value(r).expect("reports serialize")
}

/// Law of the listed `(coordinate name, side)` projections.
fn projected(d: &JointDist, cols: &[(&str, Side)]) -> Result<JointDist, DistError> {
    let idx: Vec<(usize, Side)> = cols
        .iter()
        .map(|&(n, side)| d.coord(n).map(|c| (c, side)))
        .collect::<Result<_, _>>()?;
    let mut rows: BTreeMap<Vec<u8>, Rational> = BTreeMap::new();
    for (t, p) in d.rows() {
        let key = idx.iter().map(|&(c, side)| side.project(t[c])).collect();
        *rows.entry(key).or_insert_with(Rational::zero) += p;
    }
    JointDist::new(idx.iter().map(|&(_, side)| side.symbols().to_vec()).collect(), rows)
}

fn split_pair(d: &JointDist, a: &str, b: &str) -> Result<JointDist, DistError> {
    projected(d, &[(a, Side::ZeroOne), (a, Side::ZeroTwo), (b, Side::ZeroOne), (b, Side::ZeroTwo)])
}

fn compare_support(computed: &[Vec<u8>], claimed: &ClaimedSupport) -> Value {
    let (missing, extra) = set_diff(computed, &claimed.rows);
    json!({
        "computed": computed,
        "claimed": claimed.rows,
        "missing_from_computed": missing,
        "extra_in_computed": extra,
        "match": missing.is_empty() && extra.is_empty(),
    })
}

/// The six connectivity claims, each run on the support computed from the
/// duplication chain (with the transcribed list compared alongside).
pub fn verify_connectivity_claims(data: &ClaimData) -> Result<Vec<ClaimReport>, VerifyError> {
    let dhj = dhj_default();
    let chain = Chain::new(&dhj)?;
    let mut out = Vec::new();

    // (pi1 y, pi2 y, pi1 z, pi2 z) under the line law
    let yz = split_pair(&dhj, "y", "z")?;
    let claimed = data.support("yz_projections")?;
    let support = yz.support();
    let projections: Vec<Value> = claimed
        .connected_projections
        .iter()
        .map(|coords| {
            let r = projection_connected(&support, coords);
            json!({"coords": coords, "connected": r.connected, "certificate": connectivity_json(&r)})
        })
        .collect();
    let cmp = compare_support(&support, claimed);
    let ok = cmp["match"] == json!(true)
        && !projections.is_empty()
        && projections.iter().all(|p| p["connected"] == json!(true));
    out.push(claim(
        "yz_projections_connected",
        ok,
        json!({"support": cmp, "projections": projections}),
    ));

    // (pi1 y, pi2 y, pi1 y', pi2 y') under mu1; the listed rows are compared, not assumed
    let yy = split_pair(&chain.mu1, "y", "y'")?;
    let support = yy.support();
    let pw = is_pairwise_connected(&yy);
    let proj = check_all_k_minus_1_projections(&support);
    let cmp = compare_support(&support, data.support("y_y_prime")?);
    out.push(claim(
        "y_y_prime_connected",
        pw.pairwise_connected && proj.all_connected,
        json!({"support": cmp, "pairwise": pw, "projections": proj}),
    ));

    // mu4 projections
    let mu4 = chain.mu4()?;
    let support = mu4.support();
    let proj = check_all_k_minus_1_projections(&support);
    let cmp = compare_support(&support, data.support("mu4")?);
    out.push(claim(
        "mu4_projections_connected",
        proj.all_connected,
        json!({"support": cmp, "projections": proj}),
    ));

    // (pi1 x, pi2 x, x''') under mu2
    let three = projected(&chain.mu2, &[("x", Side::ZeroOne), ("x", Side::ZeroTwo), ("x'''", Side::Full)])?;
    let support = three.support();
    let pw = is_pairwise_connected(&three);
    let cmp = compare_support(&support, data.support("x_xppp_3")?);
    out.push(claim(
        "x_xppp_pairwise_connected",
        pw.pairwise_connected && cmp["match"] == json!(true),
        json!({"support": cmp, "pairwise": pw}),
    ));

    // (pi1 x, pi2 x, pi1 x''', pi2 x''') under mu2
    let four = split_pair(&chain.mu2, "x", "x'''")?;
    let support = four.support();
    let proj = check_all_k_minus_1_projections(&support);
    let cmp = compare_support(&support, data.support("x_xppp_4")?);
    out.push(claim(
        "x_xppp_projections_connected",
        proj.all_connected && cmp["match"] == json!(true),
        json!({"support": cmp, "projections": proj}),
    ));

    // the line law itself is not pairwise connected
    let pw = is_pairwise_connected(&dhj);
    out.push(claim(
        "dhj_not_pairwise_connected",
        !pw.pairwise_connected,
        json!({ "pairwise": pw }),
    ));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorSweep {
    pub checks: u64,
    pub counterexample: Option<Value>,
}

/// Checks, over all pairs of support rows (a two-coordinate tensor power) and
/// all Boolean `e1` on `{0,1}^2` and `e2` on `{0,2}^2`, that the product of
/// `E1(u) E2(u)` over every column equals the reduced product.
pub fn factor_reduction_sweep(rows: &[Vec<u8>], columns: &[String], e1: &[String], e2: &[String]) -> FactorSweep {
    let pos = |names: &[String]| -> Vec<usize> {
        names
            .iter()
            .map(|n| columns.iter().position(|c| c == n).expect("reduced column present"))
            .collect()
    };
    let e1c = pos(e1);
    let e2c = pos(e2);
    let mut checks = 0u64;
    for (ia, a) in rows.iter().enumerate() {
        for (ib, b) in rows.iter().enumerate() {
            // word index of pi1 / pi2 projections of column c over the two coordinates
            let w1 = |c: usize| 2 * usize::from(a[c] == 1) + usize::from(b[c] == 1);
            let w2 = |c: usize| 2 * usize::from(a[c] == 2) + usize::from(b[c] == 2);
            for m1 in 0u32..16 {
                for m2 in 0u32..16 {
                    let e1f = |c: usize| (m1 >> w1(c)) & 1 == 1;
                    let e2f = |c: usize| (m2 >> w2(c)) & 1 == 1;
                    let lhs = (0..columns.len()).all(|c| e1f(c) && e2f(c));
                    let rhs = e1c.iter().all(|&c| e1f(c)) && e2c.iter().all(|&c| e2f(c));
                    checks += 1;
                    if lhs != rhs {
                        return FactorSweep {
                            checks,
                            counterexample: Some(json!({
                                "rows": [ia + 1, ib + 1],
                                "e1_truth_table": m1,
                                "e2_truth_table": m2,
                                "full_product": lhs,
                                "reduced_product": rhs,
                            })),
                        };
                    }
                }
            }
        }
    }
    FactorSweep {
        checks,
        counterexample: None,
    }
}

pub fn verify_factor_reduction(data: &ClaimData) -> Result<ClaimReport, VerifyError> {
    let fr = &data.factor_reduction;
    let t = data.table(&fr.table)?;
    let sweep = factor_reduction_sweep(&t.rows, &t.columns, &fr.e1, &fr.e2);
    // negative control: one symbol flipped in one row must break the identity
    let mut bent = t.rows.clone();
    let xp = t.columns.iter().position(|c| c == "x'").unwrap_or(1);
    let target = bent.iter().position(|r| r[xp] == 2).unwrap_or(0);
    bent[target][xp] = 1;
    let control = factor_reduction_sweep(&bent, &t.columns, &fr.e1, &fr.e2);
    let ok = sweep.counterexample.is_none() && control.counterexample.is_some();
    Ok(claim(
        "factor_reduction",
        ok,
        json!({
            "reduced_e1": fr.e1,
            "reduced_e2": fr.e2,
            "checks": sweep.checks,
            "counterexample": sweep.counterexample,
            "negative_control": {"row": target + 1, "column": t.columns[xp], "new_symbol": 1, "counterexample": control.counterexample},
        }),
    ))
}

/// Each of `x, x', x'', x'''` has the same law under `mu2` as `x` under the seed law.
pub fn verify_mu2_marginals() -> Result<ClaimReport, VerifyError> {
    let dhj = dhj_default();
    let chain = Chain::new(&dhj)?;
    let mu_x = dhj.marginal_by_name(&["x"])?;
    let per: Vec<Value> = ["x", "x'", "x''", "x'''"]
        .iter()
        .map(|v| {
            let m = chain.mu2.marginal_by_name(&[v]).expect("column exists");
            json!({"var": v, "law": rows_json(&m), "equal": m.same_law(&mu_x)})
        })
        .collect();
    let ok = per.iter().all(|p| p["equal"] == json!(true));
    Ok(claim("mu2_marginals", ok, json!({"mu_x": rows_json(&mu_x), "marginals": per})))
}

/// The six listed 4-tuples have positive mass under `mu4`, and the noted row
/// sources of `mu3` produce them.
pub fn verify_mu4_support(data: &ClaimData) -> Result<ClaimReport, VerifyError> {
    let chain = Chain::new(&dhj_default())?;
    let mu4 = chain.mu4()?;
    let claimed = data.support("mu4")?;
    let t3 = data.table("mu3")?;
    let col = |n: &str| t3.columns.iter().position(|c| c == n).ok_or_else(|| VerifyError::Missing(format!("mu3 column {n}")));
    let (y, y2) = (col("pi1(y)")?, col("pi1(y'')")?);
    let kept: Vec<usize> = (0..t3.columns.len()).filter(|&c| c != y && c != y2).collect();
    let mut found: BTreeMap<Vec<u8>, Vec<[usize; 2]>> = BTreeMap::new();
    for (i, a) in t3.rows.iter().enumerate() {
        for (j, b) in t3.rows.iter().enumerate() {
            if kept.iter().all(|&c| a[c] == b[c]) {
                found.entry(vec![a[y], a[y2], b[y], b[y2]]).or_default().push([i + 1, j + 1]);
            }
        }
    }
    let tuples: Vec<Value> = claimed
        .rows
        .iter()
        .map(|t| {
            let p = mu4.prob(t);
            let note = claimed.sources.iter().find(|s| &s.row == t);
            let sources = found.get(t).cloned().unwrap_or_default();
            let note_ok = note.is_none_or(|n| sources.contains(&n.from));
            json!({
                "tuple": t,
                "mass": rational::format(&p),
                "positive": p > Rational::zero(),
                "row_sources": sources,
                "noted_source": note.map(|n| n.from),
                "note_ok": note_ok,
            })
        })
        .collect();
    let ok = tuples.iter().all(|t| t["positive"] == json!(true) && t["note_ok"] == json!(true))
        && mu4.total() == int(1);
    Ok(claim(
        "mu4_support",
        ok,
        json!({"tuples": tuples, "total": rational::format(&mu4.total()), "support": mu4.support()}),
    ))
}

/// One grid point for the chain pair bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsPoint {
    pub n: u64,
    pub k: u32,
    #[serde(with = "rational::as_string")]
    pub eta: Rational,
    #[serde(with = "rational::as_string")]
    pub eta_prime: Rational,
}

/// Twenty grid points, all with `K eta' <= eta / 100`.
pub fn default_obs_grid() -> Vec<ObsPoint> {
    let mut out = Vec::new();
    for &n in &[4u64, 100, 10_000, 12_345, 1_000_000] {
        for (t, &k) in [1u32, 5, 20, 100].iter().enumerate() {
            let eta = rational::rat(1, 1000);
            // alternate between the boundary K eta' = eta/100 and half of it
            let slack = if t % 2 == 0 { 100 } else { 200 };
            let eta_prime = &eta / int(slack * k as i64);
            out.push(ObsPoint { n, k, eta, eta_prime });
        }
    }
    out
}

/// Both chain pair bounds for every pair `i < j <= K` at every grid point.
pub fn verify_obs_joint(grid: &[ObsPoint]) -> ClaimReport {
    let points: Vec<Value> = grid
        .par_iter()
        .map(|g| match ChainParams::new(g.n, g.k, g.eta.clone(), g.eta_prime.clone()) {
            Err(e) => json!({"point": g, "status": "SKIPPED", "reason": e.to_string()}),
            Ok(params) => {
                let mut pairs = 0u64;
                let mut fails = Vec::new();
                for j in 1..=g.k {
                    for i in 0..j {
                        pairs += 1;
                        let b = check_pair_bounds(&params, i, j).expect("valid pair");
                        if !(b.cross_mass_ok && b.diagonal_ok) {
                            fails.push(json!(b));
                        }
                    }
                }
                let uniform0 = crate::dist::chain_marginal(&params, 0).expect("step 0")
                    == uniform_coord();
                json!({
                    "point": g,
                    "p": rational::format(&params.p),
                    "pairs": pairs,
                    "failures": fails,
                    "uniform_start": uniform0,
                    "status": if fails.is_empty() && uniform0 { "PASS" } else { "FAIL" },
                })
            }
        })
        .collect();
    let checked = points.iter().filter(|p| p["status"] != json!("SKIPPED")).count();
    let ok = checked > 0 && points.iter().all(|p| p["status"] != json!("FAIL"));
    claim("chain_pair_bounds", ok, json!({"checked_points": checked, "points": points}))
}

#[derive(Debug, Clone, Serialize)]
pub struct MainTerm {
    pub n: usize,
    pub k: u32,
    #[serde(serialize_with = "ser_rat")]
    pub density: Rational,
    pub best_pair: (u32, u32),
    #[serde(serialize_with = "ser_rat")]
    pub best_value: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub bound: Rational,
    pub holds: bool,
    pub pairs_meeting_bound: usize,
}

fn ser_rat<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}

/// `max_{i<j} E_{(y,z) ~ ξ^(ij) ⊗ n}[1_S(y) 1_S(z)]` against `μ(S)^2 - 6η - μ(S)/K`, exactly.
/// Ties go to the lexicographically first pair.
pub fn mainterm(s: &CubeSet, k: u32, eta: &Rational, eta_prime: &Rational) -> Result<MainTerm, VerifyError> {
    let n = s.n();
    let params = ChainParams::new(n.max(1) as u64, k, eta.clone(), eta_prime.clone())?;
    let atoms: Vec<Vec<u8>> = vec![vec![0, 0], vec![1, 1], vec![2, 2], vec![1, 2]];
    let counts = composition_counts(s, &atoms);
    let pairs: Vec<(u32, u32)> = (0..=k).flat_map(|i| (i + 1..=k).map(move |j| (i, j))).collect();
    let values: Vec<Rational> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let xi = chain_pair(&params, i, j).expect("valid pair");
            let w: Vec<Rational> = atoms.iter().map(|a| xi.prob(a)).collect();
            weighted_count_sum(&counts, &w)
        })
        .collect();
    let density = uniform_measure(s);
    let bound = &density * &density - int(6) * eta - &density / int(k as i64);
    let mut best = 0;
    for (t, v) in values.iter().enumerate() {
        if v > &values[best] {
            best = t;
        }
    }
    Ok(MainTerm {
        n,
        k,
        best_pair: pairs[best],
        best_value: values[best].clone(),
        holds: values[best] >= bound,
        pairs_meeting_bound: values.iter().filter(|v| **v >= bound).count(),
        density,
        bound,
    })
}

pub fn verify_mainterm(s: &CubeSet, k: u32, eta: &Rational, eta_prime: &Rational) -> Result<ClaimReport, VerifyError> {
    let m = mainterm(s, k, eta, eta_prime)?;
    Ok(claim("mainterm", m.holds, serde_json::to_value(&m)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductDiscrepancy {
    #[serde(serialize_with = "ser_rat")]
    pub product_measure: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub delta1: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub delta2: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub discrepancy: Rational,
    pub discrepancy_f64: f64,
    pub verdict1: Verdict,
    pub verdict2: Verdict,
}

/// Exact `|μ(E1 ⊠ E2) - μ(E1) μ(E2)|` next to the tester's verdicts for both sets.
pub fn me1e2(e1: &CubeSet, e2: &CubeSet, n_prime: usize, gamma: f64, opts: &TesterOptions, seed: u64) -> Result<ProductDiscrepancy, VerifyError> {
    let prod = disjoint_product(e1, e2).map_err(|e| VerifyError::Missing(e.to_string()))?;
    let pm = uniform_measure(&prod);
    let d1 = uniform_measure(e1);
    let d2 = uniform_measure(e2);
    let disc = (&pm - &d1 * &d2).abs();
    let verdict = |e: &CubeSet, s: u64| {
        let f = crate::corr::FnTable::indicator(e, rational::to_f64(&uniform_measure(e)));
        crate::corr::product_pseudorandom_test(&f, n_prime, gamma, &uniform_coord(), opts, s)
            .map(|r| r.verdict)
            .unwrap_or(Verdict::Inconclusive)
    };
    Ok(ProductDiscrepancy {
        verdict1: verdict(e1, crate::rng::derive_seed(seed, &[1])),
        verdict2: verdict(e2, crate::rng::derive_seed(seed, &[2])),
        discrepancy_f64: rational::to_f64(&disc),
        product_measure: pm,
        delta1: d1,
        delta2: d2,
        discrepancy: disc,
    })
}


/// Implication check only: if both sets test pseudorandom the discrepancy is
/// reported next to `2 sqrt(gamma)`; no converse is asserted.
pub fn verify_me1e2(e1: &CubeSet, e2: &CubeSet, n_prime: usize, gamma: f64, opts: &TesterOptions, seed: u64) -> Result<ClaimReport, VerifyError> {
    let r = me1e2(e1, e2, n_prime, gamma, opts, seed)?;
    let both = r.verdict1 == Verdict::Pseudorandom && r.verdict2 == Verdict::Pseudorandom;
    let bound = 2.0 * gamma.sqrt();
    let ok = !both || r.discrepancy_f64 <= bound;
    let mut cert = serde_json::to_value(&r)?;
    cert["both_pseudorandom"] = json!(both);
    cert["bound"] = json!(bound);
    Ok(claim("product_discrepancy", ok, cert))
}

/// Every finite claim with its default inputs. The main-term and discrepancy
/// checks run on fixed seeded instances.
pub fn verify_all(data: &ClaimData, seed: u64) -> Result<VerifyReport, VerifyError> {
    let mut rep = VerifyReport::default();
    rep.extend(verify_table_supports(data)?);
    rep.extend(verify_connectivity_claims(data)?);
    rep.push(verify_factor_reduction(data)?);
    rep.push(verify_mu2_marginals()?);
    rep.push(verify_mu4_support(data)?);
    rep.push(verify_obs_joint(&default_obs_grid()));
    let s = random_set(8, Side::Full, 1, 2, seed);
    rep.push(verify_mainterm(&s, 20, &rational::rat(1, 1000), &rational::rat(1, 2_000_000))?);
    let e1 = CubeSet::from_fn(6, Side::ZeroOne, |w| w[0] == 1).expect("small");
    let e2 = CubeSet::from_fn(6, Side::ZeroTwo, |w| w[0] == 2).expect("small");
    rep.push(verify_me1e2(&e1, &e2, 2, 0.3, &TesterOptions::default(), seed)?);
    Ok(rep)
}

/// Each cell is kept independently with probability `num/den`.
pub fn random_set(n: usize, side: Side, num: u64, den: u64, seed: u64) -> CubeSet {
    use rand::Rng;
    let mut rng = crate::rng::rng_from_seed(seed);
    CubeSet::from_fn(n, side, |_| rng.gen_range(0..den) < num).expect("dimension within limits")
}
