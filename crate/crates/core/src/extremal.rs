//! Maximum line-free subsets of `[3]^n` by branch and bound over the line hypergraph.

use crate::cube::{enumerate_lines, is_line_free, pow3, CubeSet, Side};
use crate::rng::rng_from_seed;
use rand::Rng;
use serde::Serialize;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Bit masks hold one bit per point, so `3^n <= 128`.
pub const MAX_EXACT_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtremalError {
    #[error("branch and bound supports n <= {MAX_EXACT_DIM}, got {0}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtremalResult {
    pub n: usize,
    pub size: u64,
    pub witness: CubeSet,
    pub optimal: bool,
    pub nodes: u64,
}

struct Hypergraph {
    n: usize,
    verts: usize,
    lines: Vec<u128>,
    /// For each vertex, the other two points of every line through it.
    through: Vec<Vec<(usize, usize)>>,
    /// `slices[c][a]`: points with coordinate `c` equal to `a`.
    slices: Vec<[u128; 3]>,
}

impl Hypergraph {
    fn new(n: usize) -> Self {
        let verts = pow3(n) as usize;
        let mut lines = Vec::new();
        let mut through = vec![Vec::new(); verts];
        for t in enumerate_lines(n) {
            let [a, b, c] = t.indices().map(|i| i as usize);
            lines.push(bit(a) | bit(b) | bit(c));
            through[a].push((b, c));
            through[b].push((a, c));
            through[c].push((a, b));
        }
        let slices = (0..n)
            .map(|c| {
                let mut m = [0u128; 3];
                for v in 0..verts {
                    let digit = (v / 3usize.pow((n - 1 - c) as u32)) % 3;
                    m[digit] |= bit(v);
                }
                m
            })
            .collect();
        Hypergraph {
            n,
            verts,
            lines,
            through,
            slices,
        }
    }
}

#[inline]
fn bit(v: usize) -> u128 {
    1u128 << v
}

struct Search<'a> {
    g: &'a Hypergraph,
    order: Vec<usize>,
    /// Optimum one dimension down, for the slice bound.
    prev: Option<u32>,
    best: u128,
    best_size: u32,
    nodes: u64,
    deadline: Option<Instant>,
    timed_out: bool,
}

impl Search<'_> {
    fn bound(&self, inc: u128, avail: u128) -> u32 {
        let mut used = 0u128;
        let mut cut = 0;
        for &l in &self.g.lines {
            if l & avail == l && l & used == 0 {
                used |= l;
                cut += 1;
            }
        }
        for &l in &self.g.lines {
            let a = l & avail & !used;
            if a.count_ones() == 2 && (l & inc).count_ones() == 1 {
                used |= a;
                cut += 1;
            }
        }
        let mut b = (inc | avail).count_ones() - cut;
        if let Some(prev) = self.prev {
            let open = inc | avail;
            for s in &self.g.slices {
                let per: u32 = s.iter().map(|m| (open & m).count_ones().min(prev)).sum();
                b = b.min(per);
            }
        }
        b
    }

    fn run(&mut self, k: usize, inc: u128, forb: u128) {
        if self.timed_out {
            return;
        }
        self.nodes += 1;
        if self.nodes & 0xfff == 0 {
            if let Some(d) = self.deadline {
                if Instant::now() > d {
                    self.timed_out = true;
                    return;
                }
            }
        }
        let size = inc.count_ones();
        if size > self.best_size {
            self.best_size = size;
            self.best = inc;
        }
        let mut k = k;
        while k < self.order.len() && forb & bit(self.order[k]) != 0 {
            k += 1;
        }
        if k == self.order.len() {
            return;
        }
        let undecided: u128 = self.order[k..].iter().fold(0, |m, &v| m | bit(v));
        let avail = undecided & !forb;
        if self.bound(inc, avail) <= self.best_size {
            return;
        }
        let v = self.order[k];
        let mut f = forb;
        for &(a, b) in &self.g.through[v] {
            if inc & bit(a) != 0 {
                f |= bit(b);
            }
            if inc & bit(b) != 0 {
                f |= bit(a);
            }
        }
        self.run(k + 1, inc | bit(v), f);
        self.run(k + 1, inc, forb | bit(v));
    }
}

fn greedy(g: &Hypergraph, order: &[usize]) -> u128 {
    let mut inc = 0u128;
    for &v in order {
        let blocked = g.through[v]
            .iter()
            .any(|&(a, b)| inc & bit(a) != 0 && inc & bit(b) != 0);
        if !blocked {
            inc |= bit(v);
        }
    }
    inc
}

/// Largest line-free subset of `[3]^n`. `budget` bounds the wall time of the
/// top-level search; on expiry the best set found is returned with `optimal = false`.
pub fn max_line_free(n: usize, budget: Option<Duration>, seed: u64) -> Result<ExtremalResult, ExtremalError> {
    if n > MAX_EXACT_DIM {
        return Err(ExtremalError::TooLarge(n));
    }
    let start = Instant::now();
    let (prev, prev_optimal) = if n >= 2 {
        let r = max_line_free(n - 1, budget, seed)?;
        (Some(r.size as u32), r.optimal)
    } else {
        (None, true)
    };
    let g = Hypergraph::new(n);
    let mut rng = rng_from_seed(seed);
    let jitter: Vec<u64> = (0..g.verts).map(|_| rng.gen()).collect();
    let mut order: Vec<usize> = (0..g.verts).collect();
    // most constrained first; seeded jitter breaks degree ties
    order.sort_by_key(|&v| (std::cmp::Reverse(g.through[v].len()), jitter[v], v));
    let init = greedy(&g, &order);
    let mut search = Search {
        g: &g,
        order,
        prev: prev.filter(|_| prev_optimal),
        best: init,
        best_size: init.count_ones(),
        nodes: 0,
        deadline: budget.map(|b| start + b),
        timed_out: false,
    };
    search.run(0, 0, 0);
    let witness = CubeSet::from_fn(n, Side::Full, {
        let mut idx = 0usize;
        let best = search.best;
        move |_| {
            let hit = best & bit(idx) != 0;
            idx += 1;
            hit
        }
    })
    .expect("small dimension");
    debug_assert!(is_line_free(&witness));
    Ok(ExtremalResult {
        n: g.n,
        size: witness.len(),
        witness,
        optimal: !search.timed_out,
        nodes: search.nodes,
    })
}

/// `|S| = claimed` and `S` has no line.
pub fn verify_certificate(s: &CubeSet, claimed: u64) -> bool {
    s.len() == claimed && is_line_free(s)
}

/// `S × {0,1}`: line-free whenever `S` is, with twice the size.
pub fn double(s: &CubeSet) -> CubeSet {
    CubeSet::from_fn(s.n() + 1, Side::Full, |w| w[s.n()] != 2 && s.contains(&w[..s.n()]))
        .expect("dimension stays small")
}
