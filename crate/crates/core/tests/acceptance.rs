//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Derived quantities are recomputed here by small independent oracles
//! (brute force, direct Markov products, naive loops) rather than by
//! calling back into the code under test.

use dhjlab::corr::{
    max_product_correlation, max_product_correlation_traced, product_pseudorandom_test, pushforward, FnTable,
    MaximizerOptions, Method, ProductFunction, TesterOptions, Verdict,
};
use dhjlab::cube::{enumerate_lines, lines_in_set, uniform_coord, uniform_measure, CubeSet, LineTemplate, Side};
use dhjlab::dist::{dhj_default, dhj_distribution, ChainParams};
use dhjlab::extremal::max_line_free;
use dhjlab::increment::{main_driver, uniformize, DensityTriple, DriverOutcome, ParamSet, UniformStatus};
use dhjlab::rational::{int, rat, Rational};
use dhjlab::restrict::{collapse_eq, restrict_set, tv_of_collapse, CollapseSpec, Restriction};
use dhjlab::rng::rng_from_seed;
use dhjlab::verify::{
    default_obs_grid, mainterm, random_set, verify_connectivity_claims, verify_factor_reduction,
    verify_mu2_marginals, verify_obs_joint, verify_table_supports, Chain, ClaimData, Status,
};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// shared oracles

fn words(n: usize, base: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|w: Vec<u8>| {
                (0..base).map(move |s| {
                    let mut w = w.clone();
                    w.push(s);
                    w
                })
            })
            .collect();
    }
    out
}

/// Points of a template word over `{0,1,2,3}` with 3 as the wildcard.
fn template_points(t: &[u8]) -> [Vec<u8>; 3] {
    [0u8, 1, 2].map(|s| t.iter().map(|&c| if c == 3 { s } else { c }).collect())
}

fn parse_template(t: &LineTemplate) -> Vec<u8> {
    t.to_string()
        .chars()
        .map(|c| match c {
            '*' => 3,
            d => d.to_digit(10).expect("template digit") as u8,
        })
        .collect()
}

fn is_line(a: &[u8], b: &[u8], c: &[u8]) -> bool {
    let mut moving = false;
    for i in 0..a.len() {
        match (a[i], b[i], c[i]) {
            (x, y, z) if x == y && y == z => {}
            (0, 1, 2) => moving = true,
            _ => return false,
        }
    }
    moving
}

// ---------------------------------------------------------------------------
// criteria

fn support_oracle(rows: &[Vec<u8>], names: &[String], keep: &[&str]) -> (Vec<Vec<u8>>, Vec<String>) {
    let keep_idx: Vec<usize> = keep.iter().map(|k| names.iter().position(|n| n == k).unwrap()).collect();
    let rest: Vec<usize> = (0..names.len()).filter(|i| !keep_idx.contains(i)).collect();
    let mut new_names = names.to_vec();
    for &r in &rest {
        let base: String = names[r].trim_end_matches('\'').to_string();
        let mut cand = base.clone();
        while new_names.contains(&cand) {
            cand.push('\'');
        }
        new_names.push(cand);
    }
    let mut out = BTreeSet::new();
    for a in rows {
        for b in rows {
            if keep_idx.iter().all(|&k| a[k] == b[k]) {
                let mut r = a.clone();
                r.extend(rest.iter().map(|&i| b[i]));
                out.insert(r);
            }
        }
    }
    (out.into_iter().collect(), new_names)
}

fn reorder(rows: &[Vec<u8>], names: &[String], target: &[String]) -> BTreeSet<Vec<u8>> {
    let idx: Vec<usize> = target.iter().map(|t| names.iter().position(|n| n == t).unwrap()).collect();
    rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect()
}

fn tables(data: &ClaimData) -> Outcome {
    let t0 = Instant::now();
    let reports = verify_table_supports(data).unwrap();
    let chain = Chain::new(&dhj_default()).unwrap();
    let elapsed = t0.elapsed();
    // support-level duplication from the four line atoms
    let atoms = vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2], vec![0, 1, 2]];
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let (s1, n1) = support_oracle(&atoms, &names, &["z"]);
    let (s2, n2) = support_oracle(&s1, &n1, &["y", "y'"]);
    let (s3, n3) = support_oracle(&s2, &n2, &["x", "x'", "x''", "x'''"]);
    let proj: Vec<Vec<u8>> = s3
        .iter()
        .map(|r| {
            dhjlab::verify::MU3_COLUMNS
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let v = r[n3.iter().position(|n| n == c).unwrap()];
                    if k < 4 {
                        u8::from(v == 1)
                    } else {
                        2 * u8::from(v == 2)
                    }
                })
                .collect()
        })
        .collect();
    let mu3_names: Vec<String> = data.table("mu3").unwrap().columns.clone();
    let mut ok = reports.iter().all(|r| r.status == Status::Pass);
    let mut sizes = Vec::new();
    for (name, rows, rn) in [("mu1", &s1, &n1), ("mu2", &s2, &n2)] {
        let t = data.table(name).unwrap();
        let oracle = reorder(rows, rn, &t.columns);
        let claimed: BTreeSet<Vec<u8>> = t.rows.iter().cloned().collect();
        ok &= oracle == claimed;
        sizes.push(claimed.len());
    }
    let t3 = data.table("mu3").unwrap();
    let oracle3: BTreeSet<Vec<u8>> = proj.into_iter().collect();
    let claimed3: BTreeSet<Vec<u8>> = t3.rows.iter().cloned().collect();
    ok &= oracle3 == claimed3 && t3.columns == mu3_names;
    sizes.push(claimed3.len());
    ok &= sizes == [6, 8, 10];
    for d in [&chain.mu1, &chain.mu2, &chain.mu3] {
        ok &= d.total() == Rational::one() && d.rows().all(|(_, p)| p.is_positive());
    }
    ok &= chain.mu1.len() == 6 && chain.mu2.len() == 8 && chain.mu3.len() == 10;
    ok &= elapsed < Duration::from_secs(1);
    outcome(ok, format!("rows {sizes:?}, set equality with support oracle, masses exact, {elapsed:.2?}"))
}

fn uf_find(p: &mut Vec<usize>, x: usize) -> usize {
    if p[x] != x {
        let r = uf_find(p, p[x]);
        p[x] = r;
    }
    p[x]
}

/// Tuples joined when they differ in exactly one coordinate.
fn connected_oracle(rows: &[Vec<u8>]) -> bool {
    let mut p: Vec<usize> = (0..rows.len()).collect();
    for i in 0..rows.len() {
        for j in 0..i {
            if rows[i].iter().zip(&rows[j]).filter(|(a, b)| a != b).count() == 1 {
                let (a, b) = (uf_find(&mut p, i), uf_find(&mut p, j));
                p[a] = b;
            }
        }
    }
    let r0 = if rows.is_empty() { 0 } else { uf_find(&mut p, 0) };
    (0..rows.len()).all(|i| uf_find(&mut p, i) == r0)
}

/// Every two-coordinate support is connected as a bipartite graph on the symbols used.
fn pairwise_oracle(rows: &[Vec<u8>]) -> bool {
    let k = rows.first().map_or(0, Vec::len);
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let edges: BTreeSet<(u8, u8)> = rows.iter().map(|r| (r[a], r[b])).collect();
            let nodes: Vec<(u8, u8)> = edges.iter().flat_map(|&(x, y)| [(0, x), (1, y)]).collect::<BTreeSet<_>>().into_iter().collect();
            let id = |n: (u8, u8)| nodes.iter().position(|&m| m == n).unwrap();
            let mut p: Vec<usize> = (0..nodes.len()).collect();
            for &(x, y) in &edges {
                let (u, v) = (uf_find(&mut p, id((0, x))), uf_find(&mut p, id((1, y))));
                p[u] = v;
            }
            let r0 = uf_find(&mut p, 0);
            if (0..nodes.len()).any(|i| uf_find(&mut p, i) != r0) {
                return false;
            }
        }
    }
    true
}

fn connectivity(data: &ClaimData) -> Outcome {
    let t0 = Instant::now();
    let reports = verify_connectivity_claims(data).unwrap();
    let elapsed = t0.elapsed();
    let fails: Vec<&str> = reports
        .iter()
        .filter(|r| r.status != Status::Pass)
        .map(|r| r.claim_id.as_str())
        .collect();
    let mut ok = reports.len() == 6 && fails.is_empty();
    for name in ["yz_projections", "y_y_prime", "mu4", "x_xppp_3", "x_xppp_4"] {
        let s = data.support(name).unwrap();
        for coords in &s.connected_projections {
            let proj: Vec<Vec<u8>> = s
                .rows
                .iter()
                .map(|r| coords.iter().map(|&c| r[c]).collect())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            ok &= connected_oracle(&proj);
        }
    }
    ok &= pairwise_oracle(&data.support("x_xppp_3").unwrap().rows);
    ok &= !pairwise_oracle(&[vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2], vec![0, 1, 2]]);
    ok &= elapsed < Duration::from_secs(1);
    outcome(ok, format!("{} claims, {} failing {fails:?}, {elapsed:.2?}", reports.len(), fails.len()))
}

fn factor_reduction(data: &ClaimData) -> Outcome {
    let t0 = Instant::now();
    let rep = verify_factor_reduction(data).unwrap();
    let elapsed = t0.elapsed();
    // naive recount over pairs of rows and all subsets of {0,1}^2 and {0,2}^2
    let t = data.table("mu2").unwrap();
    let col = |n: &str| t.columns.iter().position(|c| c == n).unwrap();
    let e1c: Vec<usize> = data.factor_reduction.e1.iter().map(|n| col(n)).collect();
    let e2c: Vec<usize> = data.factor_reduction.e2.iter().map(|n| col(n)).collect();
    let subsets = |bit: u8| -> Vec<Vec<Vec<u8>>> {
        let pts: Vec<Vec<u8>> = words(2, 2).into_iter().map(|w| w.iter().map(|&b| b * bit).collect()).collect();
        (0..16u32)
            .map(|m| (0..4).filter(|i| m >> i & 1 == 1).map(|i| pts[i].clone()).collect())
            .collect()
    };
    let e1s = subsets(1);
    let e2s = subsets(2);
    let mut checks = 0u64;
    let mut bad = 0u64;
    for a in &t.rows {
        for b in &t.rows {
            let p1 = |c: usize| vec![u8::from(a[c] == 1), u8::from(b[c] == 1)];
            let p2 = |c: usize| vec![2 * u8::from(a[c] == 2), 2 * u8::from(b[c] == 2)];
            for e1 in &e1s {
                for e2 in &e2s {
                    let full = (0..t.columns.len()).all(|c| e1.contains(&p1(c)) && e2.contains(&p2(c)));
                    let red = e1c.iter().all(|&c| e1.contains(&p1(c))) && e2c.iter().all(|&c| e2.contains(&p2(c)));
                    checks += 1;
                    bad += u64::from(full != red);
                }
            }
        }
    }
    let cert = &rep.certificate;
    let control_fails = !cert["negative_control"]["counterexample"].is_null();
    let ok = rep.status == Status::Pass
        && bad == 0
        && cert["checks"] == serde_json::json!(checks)
        && control_fails
        && elapsed < Duration::from_secs(1);
    outcome(ok, format!("{checks} exact checks, {bad} mismatches, perturbed control fails: {control_fails}, {elapsed:.2?}"))
}

fn mu2_marginals() -> Outcome {
    let rep = verify_mu2_marginals().unwrap();
    let mut ok = rep.status == Status::Pass;
    let mut laws = Vec::new();
    // the default seed law has uniform x; a skewed one makes the identity non-trivial
    let third = rat(1, 3);
    let cases = [
        (dhj_default(), vec![third.clone(), third.clone(), third]),
        (
            dhj_distribution(rat(1, 3), rat(1, 3), rat(1, 6), rat(1, 6)).unwrap(),
            vec![rat(1, 2), rat(1, 3), rat(1, 6)],
        ),
    ];
    for (seed_law, want) in &cases {
        let chain = Chain::new(seed_law).unwrap();
        let names = chain.mu2.names().to_vec();
        for v in ["x", "x'", "x''", "x'''"] {
            let c = names.iter().position(|n| n == v).unwrap();
            let mut law = vec![Rational::zero(); 3];
            for (row, p) in chain.mu2.rows() {
                law[row[c] as usize] += p;
            }
            ok &= &law == want;
            laws.push(law.iter().map(dhjlab::rational::format).collect::<Vec<_>>().join(","));
        }
    }
    outcome(
        ok,
        format!("x, x', x'', x''' laws [{}] match the seed x-law (uniform, then 1/2,1/3,1/6)", laws.join("] [")),
    )
}

fn line_counts() -> Outcome {
    let mut ok = true;
    let mut got = Vec::new();
    for n in 1..=8usize {
        let c = enumerate_lines(n).count() as u64;
        ok &= c == 4u64.pow(n as u32) - 3u64.pow(n as u32);
        got.push(c);
    }
    // brute force over unordered triples for small n
    for n in 1..=3usize {
        let pts = words(n, 3);
        let mut c = 0u64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                for k in j + 1..pts.len() {
                    let (a, b, d) = (&pts[i], &pts[j], &pts[k]);
                    let perms = [(a, b, d), (a, d, b), (b, a, d), (b, d, a), (d, a, b), (d, b, a)];
                    c += u64::from(perms.iter().any(|(x, y, z)| is_line(x, y, z)));
                }
            }
        }
        ok &= c == got[n - 1];
    }
    let full2 = lines_in_set(&CubeSet::full(2, Side::Full).unwrap(), 0).count;
    ok &= full2 == 7;
    outcome(ok, format!("counts n=1..8 {got:?} = 4^n - 3^n, full [3]^2 has {full2}"))
}

/// Include/exclude search bounded by at most two points from each line along the last coordinate.
fn extremal_oracle(n: usize) -> usize {
    let pts = words(n, 3);
    let idx: HashMap<Vec<u8>, usize> = pts.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut lines: Vec<[usize; 3]> = Vec::new();
    for t in words(n, 4) {
        if t.contains(&3) {
            let [a, b, c] = template_points(&t);
            lines.push([idx[&a], idx[&b], idx[&c]]);
        }
    }
    let mut through: Vec<Vec<[usize; 2]>> = vec![vec![]; pts.len()];
    for l in &lines {
        for k in 0..3 {
            through[l[k]].push([l[(k + 1) % 3], l[(k + 2) % 3]]);
        }
    }
    fn go(v: usize, chosen: &mut Vec<bool>, size: usize, best: &mut usize, through: &[Vec<[usize; 2]>]) {
        let total = chosen.len();
        if v == total {
            *best = (*best).max(size);
            return;
        }
        // rows of three consecutive indices form lines; each contributes at most 2
        let row_start = v - v % 3;
        let in_row = (row_start..v).filter(|&u| chosen[u]).count();
        let bound = size + (2 - in_row.min(2)).min(row_start + 3 - v) + 2 * ((total - row_start) / 3 - 1);
        if bound <= *best {
            return;
        }
        if through[v].iter().all(|[a, b]| !(*a < v && *b < v && chosen[*a] && chosen[*b])) {
            chosen[v] = true;
            go(v + 1, chosen, size + 1, best, through);
            chosen[v] = false;
        }
        go(v + 1, chosen, size, best, through);
    }
    let mut best = 0;
    go(0, &mut vec![false; pts.len()], 0, &mut best, &through);
    best
}

fn extremal() -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut sizes = Vec::new();
    for n in 1..=3 {
        let r = max_line_free(n, None, 0).unwrap();
        let oracle = extremal_oracle(n);
        let free = r.witness.iter_points().collect::<Vec<_>>();
        let mut clean = true;
        for t in words(n, 4).into_iter().filter(|t| t.contains(&3)) {
            clean &= !template_points(&t).iter().all(|p| free.contains(p));
        }
        ok &= r.optimal && r.size as usize == oracle && clean;
        sizes.push((r.size, oracle));
    }
    ok &= sizes.iter().map(|s| s.0).collect::<Vec<_>>() == [2, 6, 18];
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    let n4 = if std::env::var_os("DHJLAB_ACCEPT_N4").is_some() {
        let r = max_line_free(4, Some(Duration::from_secs(3600)), 0).unwrap();
        format!("n=4 size {} (optimal: {})", r.size, r.optimal)
    } else {
        "n=4 optional, not run (set DHJLAB_ACCEPT_N4)".to_string()
    };
    outcome(ok, format!("(solver, oracle) sizes {sizes:?}; {n4}; {elapsed:.2?}"))
}

type IMat = [[BigInt; 3]; 3];

fn mat_mul(a: &IMat, b: &IMat) -> IMat {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).fold(BigInt::zero(), |s, k| s + &a[i][k] * &b[k][j])))
}

/// `A^0, …, A^k` where the chain step moving 1 to 2 with probability `p = a/b` is `A / b`.
fn step_powers(p: &Rational, k: u32) -> Vec<IMat> {
    let (a, b) = (p.numer().clone(), p.denom().clone());
    let z = BigInt::zero();
    let step: IMat = [
        [b.clone(), z.clone(), z.clone()],
        [z.clone(), &b - &a, a],
        [z.clone(), z.clone(), b],
    ];
    let id: IMat = std::array::from_fn(|r| std::array::from_fn(|c| BigInt::from(u8::from(r == c))));
    let mut out = vec![id];
    for t in 0..k as usize {
        let next = mat_mul(&out[t], &step);
        out.push(next);
    }
    out
}

/// Joint law of `(y_i, y_j)` with `y_0` uniform and `y_{t+1} = y_t M`, as integer
/// numerators over the returned denominator `3 b^j`.
fn chain_pair_oracle(powers: &[IMat], p: &Rational, i: u32, j: u32) -> (IMat, BigInt) {
    let (m_i, m_ij) = (&powers[i as usize], &powers[(j - i) as usize]);
    let nu_i: Vec<BigInt> = (0..3).map(|c| (0..3).fold(BigInt::zero(), |s, r| s + &m_i[r][c])).collect();
    let x = std::array::from_fn(|r| std::array::from_fn(|c| &nu_i[r] * &m_ij[r][c]));
    (x, BigInt::from(3) * p.denom().pow(j))
}

fn obs_grid() -> Outcome {
    let grid = default_obs_grid();
    let rep = verify_obs_joint(&grid);
    let mut ok = rep.status == Status::Pass && grid.len() == 20;
    let mut pairs = 0;
    for g in &grid {
        ok &= int(g.k as i64) * &g.eta_prime * int(100) <= g.eta;
        let p = ChainParams::new(g.n, g.k, g.eta.clone(), g.eta_prime.clone()).unwrap().p;
        // p never exceeds eta'/sqrt(n)
        ok &= &p * &p * int(g.n as i64) <= &g.eta_prime * &g.eta_prime;
        let n = BigInt::from(g.n);
        let (e, f) = (g.eta_prime.numer(), g.eta_prime.denom());
        let (h, l) = (g.eta.numer(), g.eta.denom());
        let powers = step_powers(&p, g.k);
        for j in 1..=g.k {
            for i in 0..j {
                let (x, den) = chain_pair_oracle(&powers, &p, i, j);
                // (10 x12 / den)^2 n >= (e/f)^2
                ok &= BigInt::from(100) * &x[1][2] * &x[1][2] * &n * f * f >= &den * &den * e * e;
                for t in 0..3 {
                    // (x_tt / den - 1/3)^2 n <= (h/l)^2, times 9 den^2 l^2
                    let d = BigInt::from(3) * &x[t][t] - &den;
                    ok &= &d * &d * &n * l * l <= BigInt::from(9) * &den * &den * h * h;
                }
                pairs += 1;
            }
        }
    }
    outcome(ok, format!("{} grid points, {pairs} pairs, both items hold exactly", grid.len()))
}

fn mainterm_check() -> Outcome {
    let (k, eta, eta_prime) = (20u32, rat(1, 1000), rat(1, 2_000_000));
    let mut violations = 0;
    let mut mismatches = 0;
    for seed in 0..50u64 {
        let s = random_set(8, Side::Full, 1 + seed % 9, 10, seed);
        let m = mainterm(&s, k, &eta, &eta_prime).unwrap();
        let mu = uniform_measure(&s);
        let bound = &mu * &mu - rat(6, 1) * &eta - &mu / int(k as i64);
        let p = ChainParams::new(8, k, eta.clone(), eta_prime.clone()).unwrap().p;
        // composition counts over the atoms (0,0),(1,1),(2,2),(1,2)
        let atoms = [(0u8, 0u8), (1, 1), (2, 2), (1, 2)];
        let mut counts: HashMap<[u32; 4], u64> = HashMap::new();
        for w in words(8, 4) {
            let y: Vec<u8> = w.iter().map(|&a| atoms[a as usize].0).collect();
            let z: Vec<u8> = w.iter().map(|&a| atoms[a as usize].1).collect();
            if s.contains(&y) && s.contains(&z) {
                let mut c = [0u32; 4];
                for &a in &w {
                    c[a as usize] += 1;
                }
                *counts.entry(c).or_default() += 1;
            }
        }
        let powers = step_powers(&p, k);
        let mut best = Rational::zero();
        for j in 1..=k {
            for i in 0..j {
                let (x, den) = chain_pair_oracle(&powers, &p, i, j);
                let table: Vec<Vec<BigInt>> =
                    [&x[0][0], &x[1][1], &x[2][2], &x[1][2]].iter().map(|w| (0..=8u32).map(|e| w.pow(e)).collect()).collect();
                // every composition has 8 parts
                let total = counts.iter().fold(BigInt::zero(), |acc, (c, &cnt)| {
                    let mut t = BigInt::from(cnt);
                    for a in 0..4 {
                        t *= &table[a][c[a] as usize];
                    }
                    acc + t
                });
                let v = Rational::new(total, den.pow(8));
                if v > best {
                    best = v;
                }
            }
        }
        mismatches += usize::from(best != m.best_value || bound != m.bound);
        violations += usize::from(best < bound || !m.holds);
    }
    outcome(violations == 0 && mismatches == 0, format!("50 sets at n=8: {violations} violations, {mismatches} oracle mismatches"))
}

/// `max |sum_{a,b} F(a,b) P(a) Q(b)|` at `n = 2`: grid over the free phases of `P`,
/// optimal `Q` in closed form, then a local refinement.
fn grid_oracle(fw: &[Complex64], b: usize, res: usize) -> f64 {
    let eval = |th: &[f64]| -> f64 {
        let p: Vec<Complex64> = std::iter::once(Complex64::new(1.0, 0.0))
            .chain(th.iter().map(|&t| Complex64::from_polar(1.0, t)))
            .collect();
        (0..b)
            .map(|q| (0..b).map(|a| fw[a * b + q] * p[a]).sum::<Complex64>().norm())
            .sum()
    };
    let step = 2.0 * std::f64::consts::PI / res as f64;
    let free = b - 1;
    let mut best = (f64::NEG_INFINITY, vec![0.0; free]);
    let mut digits = vec![0usize; free];
    loop {
        let th: Vec<f64> = digits.iter().map(|&d| d as f64 * step).collect();
        let v = eval(&th);
        if v > best.0 {
            best = (v, th);
        }
        let mut pos = free;
        loop {
            if pos == 0 {
                let (mut v, mut th) = best;
                let mut h = step;
                while h > 1e-9 {
                    let mut moved = false;
                    for i in 0..free {
                        for sgn in [-1.0, 1.0] {
                            let mut t2 = th.clone();
                            t2[i] += sgn * h;
                            let v2 = eval(&t2);
                            if v2 > v {
                                v = v2;
                                th = t2;
                                moved = true;
                            }
                        }
                    }
                    if !moved {
                        h /= 2.0;
                    }
                }
                return v;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < res {
                break;
            }
            digits[pos] = 0;
        }
    }
}

fn maximizer() -> Outcome {
    let opts = MaximizerOptions::default();
    let mut decreases = 0;
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(seed);
        let n = 2 + (seed % 4) as usize;
        let alphabet = if seed % 2 == 0 { vec![0, 1, 2] } else { vec![0, 1] };
        let f = FnTable::from_fn(n, alphabet.clone(), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let d = pushforward(&uniform_coord(), &alphabet).unwrap();
        let (_, traces) = max_product_correlation_traced(&f, &d, &opts, seed);
        for t in traces {
            decreases += t.objectives.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
        }
    }
    let mut worst_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let alphabet = if seed % 2 == 0 { vec![0, 1, 2] } else { vec![0, 2] };
        let f = FnTable::from_fn(2, alphabet.clone(), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let d = pushforward(&uniform_coord(), &alphabet).unwrap();
        let b = alphabet.len();
        let fw: Vec<Complex64> = (0..b * b).map(|i| f.values[i] * d[i / b] * d[i % b]).collect();
        let oracle = grid_oracle(&fw, b, 1024);
        let rep = max_product_correlation(&f, &d, Method::Alternating, &opts, seed).unwrap();
        worst_gap = worst_gap.max((rep.abs - oracle).abs());
    }
    let mut worst_product: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(2000 + seed);
        let n = 1 + (seed % 5) as usize;
        let phases: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let f = ProductFunction::from_phases(vec![0, 1, 2], &phases).table();
        let d = pushforward(&uniform_coord(), &[0, 1, 2]).unwrap();
        let rep = max_product_correlation(&f, &d, Method::Alternating, &opts, seed).unwrap();
        worst_product = worst_product.max((rep.abs - 1.0).abs());
    }
    let ok = decreases == 0 && worst_gap <= 1e-3 && worst_product <= 1e-9;
    outcome(
        ok,
        format!("{decreases} decreases over 100 runs; max |alt - grid| {worst_gap:.2e} on 20; product inputs within {worst_product:.1e} of 1"),
    )
}

fn restricted_value(f: &FnTable, r: &Restriction, p: &ProductFunction) -> f64 {
    let live = r.surviving();
    let d = pushforward(&uniform_coord(), &f.alphabet).unwrap();
    let pos = |s: u8| f.alphabet.iter().position(|&a| a == s).unwrap();
    let mut acc = Complex64::new(0.0, 0.0);
    for w in words(live.len(), f.alphabet.len() as u8) {
        let local: Vec<u8> = w.iter().map(|&i| f.alphabet[i as usize]).collect();
        let mut full = vec![0u8; f.n];
        for (&c, &z) in r.coords.iter().zip(&r.z) {
            full[c] = z;
        }
        for (&c, &s) in live.iter().zip(&local) {
            full[c] = s;
        }
        let prob: f64 = local.iter().map(|&s| d[pos(s)]).product();
        acc += f.get(&full).unwrap() * p.eval(&local) * prob;
    }
    acc.norm()
}

fn tester() -> Outcome {
    let opts = TesterOptions::default();
    let mut dict_ok = 0;
    let mut min_witness = f64::INFINITY;
    for seed in 0..20u64 {
        let n = 10;
        let c = (seed % n as u64) as usize;
        let e = CubeSet::from_fn(n, Side::ZeroOne, |w| w[c] == 1).unwrap();
        let delta = dhjlab::rational::to_f64(&uniform_measure(&e));
        let f = FnTable::indicator(&e, delta);
        let r = product_pseudorandom_test(&f, 2, 0.3, &uniform_coord(), &opts, seed).unwrap();
        if let (Verdict::Not, Some(w)) = (r.verdict, r.witness.as_ref()) {
            let v = restricted_value(&f, &w.restriction, &w.product);
            min_witness = min_witness.min(v);
            dict_ok += usize::from(v >= 0.5 && (v - w.value).abs() < 1e-9);
        }
    }
    let mut pseudo = 0;
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(10_000 + seed);
        let f = FnTable::from_fn(12, vec![0, 1, 2], |_| Complex64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0));
        let r = product_pseudorandom_test(&f, 8, 0.3, &uniform_coord(), &opts, seed).unwrap();
        pseudo += usize::from(r.verdict == Verdict::Pseudorandom);
    }
    outcome(
        dict_ok == 20 && pseudo >= 95,
        format!("dictators NOT with verified witness {dict_ok}/20 (min value {min_witness:.4}); random ±1 at n=12 PSEUDORANDOM {pseudo}/100"),
    )
}

fn uniformization() -> Outcome {
    let p = ParamSet {
        alpha: rat(1, 2),
        ..ParamSet::default()
    };
    let n = 12;
    let e1 = CubeSet::from_fn(n, Side::ZeroOne, |w| w[0] == 1).unwrap();
    let e2 = CubeSet::full(n, Side::ZeroTwo).unwrap();
    let s = dhjlab::cube::disjoint_product(&e1, &e2).unwrap();
    let t = DensityTriple::new(s, e1, e2).unwrap();
    let (_, rep) = uniformize(&t, &p, p.round_cap, 7).unwrap();
    let traj = &rep.index_trajectory;
    let strictly = traj.windows(2).all(|w| w[1] > w[0]);
    // the dictator's set is E1 full on a third of the pieces and empty elsewhere
    let expected_start = rat(1, 9) + int(1);
    let expected_end = rat(1, 3) + int(1);
    let ok = rep.status == UniformStatus::Terminated
        && strictly
        && rep.weights_always_one
        && rep.round_summaries.iter().all(|r| r.weights_sum_to_one)
        && traj.first() == Some(&expected_start)
        && traj.last() == Some(&expected_end);
    let shown: Vec<String> = traj.iter().map(dhjlab::rational::format).collect();
    outcome(ok, format!("status {:?}, index {}, weights exact", rep.status, shown.join(" -> ")))
}

fn driver() -> Outcome {
    let p = ParamSet::default();
    let mut found = 0;
    let mut false_pos = 0;
    for seed in 0..100u64 {
        let s0 = random_set(8, Side::Full, 9, 10, seed);
        let r = main_driver(&s0, &p, p.step_cap, seed).unwrap();
        if r.outcome == DriverOutcome::LineFound {
            found += 1;
            let line = r.line.as_ref().unwrap();
            let t = parse_template(&line.lifted);
            let pts = template_points(&t);
            let good = t.len() == 8 && t.contains(&3) && is_line(&pts[0], &pts[1], &pts[2]) && pts.iter().all(|q| s0.contains(q));
            false_pos += usize::from(!good);
        } else {
            false_pos += usize::from(r.outcome == DriverOutcome::LiftMismatch);
        }
    }
    let mut free_reports = 0;
    let mut free_runs = 0;
    for n in 1..=3 {
        let free = max_line_free(n, None, 0).unwrap().witness;
        for seed in 0..5u64 {
            free_runs += 1;
            let r = main_driver(&free, &p, 3, seed).unwrap();
            free_reports += usize::from(matches!(r.outcome, DriverOutcome::LineFound | DriverOutcome::LiftMismatch));
        }
    }
    outcome(
        false_pos == 0 && free_reports == 0,
        format!("{found}/100 dense runs found lines, {false_pos} unverified; {free_reports}/{free_runs} line-free runs reported a line"),
    )
}

fn restriction_soundness() -> Outcome {
    let n = 4;
    let sets: Vec<CubeSet> = (0..6u64)
        .map(|seed| random_set(n, Side::Full, 1 + seed, 8, seed))
        .chain([CubeSet::full(n, Side::Full).unwrap(), double(&max_line_free(3, None, 0).unwrap().witness)])
        .collect();
    let lines_of = |m: usize| -> Vec<Vec<u8>> { words(m, 4).into_iter().filter(|t| t.contains(&3)).collect() };
    let mut checked = 0u64;
    let mut unsound = 0u64;
    for s in &sets {
        // every restriction: choose the fixed coordinates and their values
        for mask in 0u32..16 {
            let coords: Vec<usize> = (0..n).filter(|c| mask >> c & 1 == 1).collect();
            for z in words(coords.len(), 3) {
                let r = Restriction::new(n, coords.clone(), z.clone()).unwrap();
                let derived = restrict_set(s, &r).unwrap();
                let live: Vec<usize> = (0..n).filter(|c| mask >> c & 1 == 0).collect();
                for t in lines_of(live.len()) {
                    if template_points(&t).iter().all(|q| derived.contains(q)) {
                        checked += 1;
                        let mut lifted = vec![0u8; n];
                        for (&c, &v) in coords.iter().zip(&z) {
                            lifted[c] = v;
                        }
                        for (&c, &v) in live.iter().zip(&t) {
                            lifted[c] = v;
                        }
                        unsound += u64::from(!template_points(&lifted).iter().all(|q| s.contains(q)));
                    }
                }
            }
        }
        // every collapse: set partitions of the coordinates
        for blocks in set_partitions(n) {
            let spec = CollapseSpec::new(n, blocks.clone()).unwrap();
            let derived = collapse_eq(s, &spec).unwrap();
            let mut order = blocks.clone();
            order.sort_by_key(|b| b[0]);
            for t in lines_of(order.len()) {
                if template_points(&t).iter().all(|q| derived.contains(q)) {
                    checked += 1;
                    let mut lifted = vec![0u8; n];
                    for (b, &v) in order.iter().zip(&t) {
                        for &c in b {
                            lifted[c] = v;
                        }
                    }
                    unsound += u64::from(!template_points(&lifted).iter().all(|q| s.contains(q)));
                }
            }
        }
    }
    outcome(unsound == 0 && checked > 0, format!("{} sets, {checked} derived lines lifted, {unsound} absent from the source", sets.len()))
}

fn double(s: &CubeSet) -> CubeSet {
    CubeSet::from_fn(s.n() + 1, Side::Full, |w| w[s.n()] != 2 && s.contains(&w[..s.n()])).unwrap()
}

fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = vec![vec![]];
    for c in 0..n {
        let mut next = Vec::new();
        for p in out {
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i].push(c);
                next.push(q);
            }
            let mut q = p.clone();
            q.push(vec![c]);
            next.push(q);
        }
        out = next;
    }
    out
}

/// Exact TV by enumerating every word of the designated coordinates and every block.
fn tv_oracle(s: usize, k: usize) -> Rational {
    let subsets: Vec<Vec<usize>> = (0u32..1 << s)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..s).filter(|i| m >> i & 1 == 1).collect())
        .collect();
    let total_w = words(s, 3).len();
    let mut tv = Rational::zero();
    for w in words(s, 3) {
        let hits = subsets.iter().filter(|t| t.iter().all(|&i| w[i] == w[t[0]])).count();
        // law: pick T, one symbol for T, uniform elsewhere
        let p = Rational::new(BigInt::from(hits), BigInt::from(subsets.len()))
            * Rational::new(BigInt::one(), BigInt::from(3u64.pow((s - k + 1) as u32)));
        tv += (p - Rational::new(BigInt::one(), BigInt::from(total_w))).abs();
    }
    tv / int(2)
}

fn tv_bound() -> Outcome {
    let n = 6;
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for s in 1..=n {
        for k in 1..=3.min(s) {
            let r = tv_of_collapse(n, s, k).unwrap();
            let oracle = tv_oracle(s, k);
            ok &= r.tv == oracle && r.within_bound;
            // tv <= 10k/sqrt(s), compared squared
            ok &= &oracle * &oracle * int(s as i64) <= int(100 * (k * k) as i64);
            worst = worst.max(r.tv_f64 / r.bound_f64);
            cases += 1;
        }
    }
    outcome(ok, format!("{cases} (s,k) cases at n=6 match the brute-force TV; max tv/bound {worst:.3}"))
}

fn main() {
    let data = ClaimData::builtin();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("table_supports", Box::new(|| tables(&data))),
        ("connectivity_suite", Box::new(|| connectivity(&data))),
        ("factor_reduction", Box::new(|| factor_reduction(&data))),
        ("mu2_marginals", Box::new(mu2_marginals)),
        ("line_counts", Box::new(line_counts)),
        ("extremal_sizes", Box::new(extremal)),
        ("chain_pair_bounds", Box::new(obs_grid)),
        ("pair_main_term", Box::new(mainterm_check)),
        ("product_maximizer", Box::new(maximizer)),
        ("pseudorandom_tester", Box::new(tester)),
        ("uniformization", Box::new(uniformization)),
        ("driver_soundness", Box::new(driver)),
        ("restriction_soundness", Box::new(restriction_soundness)),
        ("collapse_tv_bound", Box::new(tv_bound)),
    ];
    let mut failed = 0;
    for (id, run) in &criteria {
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] {id}: {} ({:.2?})", o.detail, t0.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
