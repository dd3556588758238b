//! Connectivity of supports: the one-coordinate-move graph on tuples, and the
//! bipartite two-coordinate graphs behind pairwise connectedness.

use crate::dist::JointDist;
use serde::Serialize;
use std::collections::BTreeSet;

/// Why a support is (or is not) connected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Edges of a spanning tree; each joins tuples differing in exactly one coordinate.
    SpanningTree { edges: Vec<(Vec<u8>, Vec<u8>)> },
    /// A component and its complement, with no one-coordinate move between them.
    Bipartition {
        side_a: Vec<Vec<u8>>,
        side_b: Vec<Vec<u8>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub certificate: Certificate,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn dedup(support: &[Vec<u8>]) -> Vec<Vec<u8>> {
    support.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Connectivity of the graph whose edges join tuples at Hamming distance one.
pub fn is_connected(support: &[Vec<u8>]) -> ConnectivityReport {
    let tuples = dedup(support);
    let m = tuples.len();
    let mut uf = UnionFind::new(m);
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if hamming(&tuples[a], &tuples[b]) == 1 && uf.union(a, b) {
                edges.push((tuples[a].clone(), tuples[b].clone()));
            }
        }
    }
    if m > 0 && edges.len() == m - 1 {
        return ConnectivityReport {
            connected: true,
            certificate: Certificate::SpanningTree { edges },
        };
    }
    let root = if m > 0 { uf.find(0) } else { 0 };
    let (side_a, side_b): (Vec<_>, Vec<_>) =
        (0..m).partition(|&i| uf.find(i) == root);
    ConnectivityReport {
        connected: false,
        certificate: Certificate::Bipartition {
            side_a: side_a.into_iter().map(|i| tuples[i].clone()).collect(),
            side_b: side_b.into_iter().map(|i| tuples[i].clone()).collect(),
        },
    }
}

/// Re-checks a certificate against the support it claims to describe.
pub fn certificate_valid(support: &[Vec<u8>], report: &ConnectivityReport) -> bool {
    let tuples = dedup(support);
    match (&report.certificate, report.connected) {
        (Certificate::SpanningTree { edges }, true) => {
            let index = |t: &Vec<u8>| tuples.iter().position(|u| u == t);
            let mut uf = UnionFind::new(tuples.len());
            let mut merged = 0;
            for (a, b) in edges {
                match (index(a), index(b)) {
                    (Some(i), Some(j)) if hamming(a, b) == 1 => {
                        if uf.union(i, j) {
                            merged += 1;
                        }
                    }
                    _ => return false,
                }
            }
            !tuples.is_empty() && merged == tuples.len() - 1
        }
        (Certificate::Bipartition { side_a, side_b }, false) => {
            let a: BTreeSet<&Vec<u8>> = side_a.iter().collect();
            let b: BTreeSet<&Vec<u8>> = side_b.iter().collect();
            let all: BTreeSet<&Vec<u8>> = tuples.iter().collect();
            let covers = a.is_disjoint(&b) && a.union(&b).copied().collect::<BTreeSet<_>>() == all;
            let nonempty = tuples.is_empty() || (!a.is_empty() && !b.is_empty());
            covers && nonempty && a.iter().all(|x| b.iter().all(|y| hamming(x, y) != 1))
        }
        _ => false,
    }
}

/// Connectivity of the projection of `support` onto `coords`.
pub fn projection_connected(support: &[Vec<u8>], coords: &[usize]) -> ConnectivityReport {
    let projected: Vec<Vec<u8>> = support
        .iter()
        .map(|t| coords.iter().map(|&c| t[c]).collect())
        .collect();
    is_connected(&projected)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairFailure {
    pub i: usize,
    pub j: usize,
    /// Vertices `(coordinate, symbol)` reachable from the first vertex of `Σ_i`.
    pub component: Vec<(usize, u8)>,
    /// The remaining vertices of `Σ_i ⊎ Σ_j`.
    pub rest: Vec<(usize, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairwiseReport {
    pub pairwise_connected: bool,
    pub failing_pair: Option<PairFailure>,
}

/// For every `i < j`, the graph on `Σ_i ⊎ Σ_j` with an edge per support pair is connected.
pub fn is_pairwise_connected_support(alphabets: &[Vec<u8>], support: &[Vec<u8>]) -> PairwiseReport {
    let k = alphabets.len();
    for i in 0..k {
        for j in i + 1..k {
            let si = &alphabets[i];
            let sj = &alphabets[j];
            let mut uf = UnionFind::new(si.len() + sj.len());
            for t in support {
                if let (Some(a), Some(b)) = (
                    si.iter().position(|&s| s == t[i]),
                    sj.iter().position(|&s| s == t[j]),
                ) {
                    uf.union(a, si.len() + b);
                }
            }
            let root = uf.find(0);
            let vertex = |v: usize| {
                if v < si.len() {
                    (i, si[v])
                } else {
                    (j, sj[v - si.len()])
                }
            };
            let (comp, rest): (Vec<usize>, Vec<usize>) =
                (0..si.len() + sj.len()).partition(|&v| uf.find(v) == root);
            if !rest.is_empty() {
                return PairwiseReport {
                    pairwise_connected: false,
                    failing_pair: Some(PairFailure {
                        i,
                        j,
                        component: comp.into_iter().map(vertex).collect(),
                        rest: rest.into_iter().map(vertex).collect(),
                    }),
                };
            }
        }
    }
    PairwiseReport {
        pairwise_connected: true,
        failing_pair: None,
    }
}

pub fn is_pairwise_connected(d: &JointDist) -> PairwiseReport {
    is_pairwise_connected_support(d.alphabets(), &d.support())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionReport {
    pub coords: Vec<usize>,
    pub report: ConnectivityReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionsReport {
    pub all_connected: bool,
    pub projections: Vec<ProjectionReport>,
}

/// `is_connected` on every projection that drops exactly one coordinate.
pub fn check_all_k_minus_1_projections(support: &[Vec<u8>]) -> ProjectionsReport {
    let k = support.first().map_or(0, |t| t.len());
    let projections: Vec<ProjectionReport> = (0..k)
        .rev()
        .map(|drop| {
            let coords: Vec<usize> = (0..k).filter(|&c| c != drop).collect();
            let report = projection_connected(support, &coords);
            ProjectionReport { coords, report }
        })
        .collect();
    ProjectionsReport {
        all_connected: k >= 2 && projections.iter().all(|p| p.report.connected),
        projections,
    }
}
