//! Degree, eigenvector and PageRank centralities.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::graph::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralityMethod {
    Eigenvector,
    PageRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub method: CentralityMethod,
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Leading eigenvalue estimate; `None` for PageRank.
    pub eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degrees {
    pub in_degree: usize,
    pub out_degree: usize,
    pub total: usize,
}

/// Per-node connection counts. Undirected graphs report the same count in
/// all three fields.
pub fn total_degrees(g: &Graph) -> Vec<Degrees> {
    g.nodes()
        .map(|n| {
            if g.is_directed() {
                let (i, o) = (g.in_degree(n), g.out_degree(n));
                Degrees { in_degree: i, out_degree: o, total: i + o }
            } else {
                let d = g.out_degree(n);
                Degrees { in_degree: d, out_degree: d, total: d }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenvectorParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenvectorParams {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000 }
    }
}

/// `y = A x` with `A[i][j]` the weight of the arc `i -> j`.
fn adjacency_apply(g: &Graph, x: &[f64], y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let (t, w) = g.out_row(NodeId(i as u32));
        *yi = t.iter().zip(w).map(|(j, wj)| wj * x[j.index()]).sum();
    }
}

fn has_cycle(g: &Graph) -> bool {
    // Kahn's algorithm: a DAG drains completely
    let n = g.node_count();
    let mut indeg: Vec<usize> = g.nodes().map(|v| g.in_degree(v)).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut drained = 0;
    while let Some(i) = stack.pop() {
        drained += 1;
        for t in g.out_row(NodeId(i as u32)).0 {
            indeg[t.index()] -= 1;
            if indeg[t.index()] == 0 {
                stack.push(t.index());
            }
        }
    }
    drained < n
}

/// Right leading eigenvector of the adjacency matrix by power iteration.
///
/// Iterates on `A + I`, which has the same eigenvectors and a strictly
/// dominant leading eigenvalue even on bipartite graphs, and stops once
/// `‖Ax − λx‖∞ ≤ tol·λ`. Scores are max-normalized to 1.
pub fn eigenvector_centrality(g: &Graph, params: EigenvectorParams) -> Result<CentralityScores, FeatureError> {
    if g.edge_count() == 0 {
        return Err(FeatureError::NoEdges);
    }
    if g.is_directed() && !has_cycle(g) {
        return Err(FeatureError::ZeroSpectralRadius);
    }
    let n = g.node_count();
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=params.max_iter {
        adjacency_apply(g, &x, &mut y);
        let lambda = y.iter().copied().fold(0.0, f64::max);
        residual = y.iter().zip(&x).map(|(yi, xi)| (yi - lambda * xi).abs()).fold(0.0, f64::max);
        if lambda > 0.0 && residual <= params.tol * lambda {
            return Ok(CentralityScores {
                method: CentralityMethod::Eigenvector,
                scores: x,
                iterations: it,
                residual,
                eigenvalue: Some(lambda),
            });
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi += yi;
        }
        let top = x.iter().copied().fold(0.0, f64::max);
        x.iter_mut().for_each(|v| *v /= top);
    }
    Err(FeatureError::NotConverged { method: "eigenvector", iterations: params.max_iter, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        Self { damping: 0.85, tol: 1e-10, max_iter: 200 }
    }
}

/// Weighted PageRank by power iteration. Mass of dangling nodes is spread
/// uniformly every step; convergence is measured in L1.
pub fn pagerank(g: &Graph, params: PageRankParams) -> Result<CentralityScores, FeatureError> {
    let n = g.node_count();
    if n == 0 {
        return Err(FeatureError::EmptyGraph);
    }
    let d = params.damping;
    let out_weight: Vec<f64> = g.nodes().map(|v| g.out_row(v).1.iter().sum()).collect();
    let inv = 1.0 / n as f64;
    let mut x = vec![inv; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=params.max_iter {
        let dangling: f64 = x.iter().zip(&out_weight).filter(|(_, &w)| w == 0.0).map(|(xi, _)| xi).sum();
        let base = (1.0 - d) * inv + d * dangling * inv;
        for (i, ni) in next.iter_mut().enumerate() {
            let (src, w) = g.in_row(NodeId(i as u32));
            let pulled: f64 = src.iter().zip(w).map(|(j, wj)| x[j.index()] * wj / out_weight[j.index()]).sum();
            *ni = base + d * pulled;
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < params.tol {
            let total: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= total);
            return Ok(CentralityScores {
                method: CentralityMethod::PageRank,
                scores: x,
                iterations: it,
                residual,
                eigenvalue: None,
            });
        }
    }
    Err(FeatureError::NotConverged { method: "pagerank", iterations: params.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, GraphSpec, NodeKind};

    fn undirected(edges: &[(&str, &str)]) -> Graph {
        let e: Vec<Edge> = edges.iter().map(|(s, d)| Edge::new(*s, *d, 1.0)).collect();
        Graph::build(&e, &GraphSpec { directed: false, ..GraphSpec::p2p() }).unwrap()
    }

    fn directed(edges: &[(&str, &str)]) -> Graph {
        let e: Vec<Edge> = edges.iter().map(|(s, d)| Edge::new(*s, *d, 1.0)).collect();
        Graph::build(&e, &GraphSpec::p2p()).unwrap()
    }

    #[test]
    fn degrees_directed_cycle() {
        let g = directed(&[("a", "b"), ("b", "c"), ("c", "a")]);
        for d in total_degrees(&g) {
            assert_eq!(d, Degrees { in_degree: 1, out_degree: 1, total: 2 });
        }
    }

    #[test]
    fn degrees_star() {
        let g = undirected(&[("c", "x"), ("c", "y"), ("c", "z")]);
        let c = g.lookup(NodeKind::User, "c").unwrap();
        assert_eq!(total_degrees(&g)[c.index()].total, 3);
    }

    #[test]
    fn four_cycle_is_uniform() {
        let g = undirected(&[("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")]);
        let s = eigenvector_centrality(&g, EigenvectorParams::default()).unwrap();
        for v in &s.scores {
            assert!((v - 1.0).abs() < 1e-8);
        }
        assert!(s.residual <= 1e-8 * s.eigenvalue.unwrap());
    }

    #[test]
    fn star_ratio_is_sqrt_three() {
        // leading eigenpair of K_{1,3}: λ = √3, x = (√3, 1, 1, 1)
        let g = undirected(&[("c", "x"), ("c", "y"), ("c", "z")]);
        let s = eigenvector_centrality(&g, EigenvectorParams::default()).unwrap();
        let c = g.lookup(NodeKind::User, "c").unwrap().index();
        let leaf = g.lookup(NodeKind::User, "x").unwrap().index();
        assert!((s.scores[c] / s.scores[leaf] - 3f64.sqrt()).abs() < 1e-7);
        assert!((s.eigenvalue.unwrap() - 3f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn dag_is_rejected() {
        let g = directed(&[("a", "b"), ("b", "c")]);
        assert!(matches!(
            eigenvector_centrality(&g, EigenvectorParams::default()),
            Err(FeatureError::ZeroSpectralRadius)
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = undirected(&[("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")]);
        match eigenvector_centrality(&g, EigenvectorParams { tol: 1e-12, max_iter: 2 }) {
            Err(FeatureError::NotConverged { iterations: 2, residual, .. }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pagerank_cycle_is_uniform() {
        let g = directed(&[("a", "b"), ("b", "c"), ("c", "a")]);
        let s = pagerank(&g, PageRankParams::default()).unwrap();
        for v in &s.scores {
            assert!((v - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pagerank_two_nodes_with_dangling() {
        // x_a = (1-d)/2 + d x_b / 2, x_b = (1-d)/2 + d x_a + d x_b / 2
        let d = 0.85;
        let x_a = 1.0 / (2.0 + d);
        let g = directed(&[("a", "b")]);
        let s = pagerank(&g, PageRankParams::default()).unwrap();
        assert!((s.scores[0] - x_a).abs() < 1e-9);
        assert!((s.scores[1] - (1.0 - x_a)).abs() < 1e-9);
    }
}
