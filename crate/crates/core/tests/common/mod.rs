//! Independent oracles shared by the component tests and the acceptance
//! suite. Each `*_error` function returns the worst deviation it measured.

#![allow(dead_code, clippy::needless_range_loop)]

use graphscore::features::{
    eigenvector_centrality, louvain, pagerank, EigenvectorParams, FeatureError, PageRankParams,
};
use graphscore::gnn::{
    gat_forward, gcn_forward, gradient_check, sage_forward, tagcn_forward, Activation, GnnArch, GnnGraph, LayerKind,
};
use graphscore::graph::{Edge, Graph, GraphSpec, NodeKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn undirected_spec() -> GraphSpec {
    GraphSpec { directed: false, ..GraphSpec::p2p() }
}

pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Edge> {
    (0..m)
        .filter_map(|_| {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            (a != b).then(|| Edge::new(format!("v{a}"), format!("v{b}"), rng.random_range(1..4) as f64))
        })
        .collect()
}

/// Dense weighted adjacency indexed by graph node ids, rebuilt from the raw
/// edge list.
pub fn dense_adjacency(g: &Graph, edges: &[Edge], directed: bool) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let mut a = vec![vec![0.0; n]; n];
    for e in edges {
        let s = g.lookup(NodeKind::User, &e.src).unwrap().index();
        let t = g.lookup(NodeKind::User, &e.dst).unwrap().index();
        a[s][t] += e.weight;
        if !directed {
            a[t][s] += e.weight;
        }
    }
    a
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

/// Stationary vector of the damped walk with uniform teleport and dangling
/// mass spread uniformly, from `(I - d Pᵀ - d/n · 1 δᵀ) x = (1 - d)/n · 1`.
pub fn pagerank_oracle(a: &[Vec<f64>], d: f64) -> Vec<f64> {
    let n = a.len();
    let inv = 1.0 / n as f64;
    let out: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] += 1.0;
        for j in 0..n {
            let step = if out[j] > 0.0 { a[j][i] / out[j] } else { inv };
            m[i][j] -= d * step;
        }
    }
    solve(m, vec![(1.0 - d) * inv; n])
}

/// Max-abs PageRank error against the dense solve over 20 random graphs of
/// at most 200 nodes, alternating directed and undirected.
pub fn pagerank_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.random_range(5..=200);
        let m = rng.random_range(n..4 * n);
        let directed = trial % 2 == 0;
        let edges = random_edges(&mut rng, n, m);
        let spec = if directed { GraphSpec::p2p() } else { undirected_spec() };
        let g = Graph::build(&edges, &spec).unwrap();
        let pr = pagerank(&g, PageRankParams::default()).unwrap();
        assert!((pr.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let oracle = pagerank_oracle(&dense_adjacency(&g, &edges, directed), 0.85);
        let err = pr.scores.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    worst
}

pub fn eigen_residual(a: &[Vec<f64>], x: &[f64], lambda: f64) -> f64 {
    a.iter()
        .zip(x)
        .map(|(row, xi)| (row.iter().zip(x).map(|(w, xj)| w * xj).sum::<f64>() - lambda * xi).abs())
        .fold(0.0, f64::max)
}

/// Worst `‖Ax − λx‖∞ / λ` over 20 random graphs of at most 200 nodes.
/// Directed graphs without a cycle have no leading eigenvector and are
/// skipped.
pub fn eigen_relative_residual() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = EigenvectorParams { tol: 1e-8, max_iter: 100_000 };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.random_range(5..=200);
        let edges = random_edges(&mut rng, n, 3 * n);
        let directed = trial % 2 == 1;
        let spec = if directed { GraphSpec::p2p() } else { undirected_spec() };
        let g = Graph::build(&edges, &spec).unwrap();
        let ev = match eigenvector_centrality(&g, params) {
            Ok(ev) => ev,
            Err(FeatureError::ZeroSpectralRadius) if directed => continue,
            Err(e) => panic!("trial {trial}: {e}"),
        };
        let lambda = ev.eigenvalue.unwrap();
        let r = eigen_residual(&dense_adjacency(&g, &edges, directed), &ev.scores, lambda);
        worst = worst.max(r / lambda);
    }
    worst
}

/// `Q = 1/2m Σ_ij (A_ij − k_i k_j / 2m) δ(c_i, c_j)` on an undirected graph.
pub fn modularity_oracle(a: &[Vec<f64>], c: &[usize]) -> f64 {
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if c[i] == c[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as a restricted growth string.
pub fn for_each_partition(n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(c: &mut Vec<usize>, n: usize, max: usize, f: &mut impl FnMut(&[usize])) {
        if c.len() == n {
            f(c);
            return;
        }
        for b in 0..=max + 1 {
            c.push(b);
            rec(c, n, max.max(b), f);
            c.pop();
        }
    }
    let mut c = vec![0];
    rec(&mut c, n, 0, f);
}

/// Two 5-cliques `v0..v4` and `v5..v9` joined by the edge `v4 – v5`.
pub fn two_cliques_graph() -> (Graph, Vec<Edge>) {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for i in 0..5 {
            for j in i + 1..5 {
                edges.push(Edge::new(format!("v{}", base + i), format!("v{}", base + j), 1.0));
            }
        }
    }
    edges.push(Edge::new("v4", "v5", 1.0));
    (Graph::build(&edges, &undirected_spec()).unwrap(), edges)
}

pub struct LouvainCheck {
    pub partitions: usize,
    pub best: f64,
    /// Modularity of the Louvain partition under the oracle, per seed.
    pub found: Vec<f64>,
    /// Modularity reported by Louvain itself, per seed.
    pub reported: Vec<f64>,
    pub n_communities: Vec<usize>,
    pub cliques_recovered: bool,
}

/// Louvain over five seeds against exhaustive search of all partitions of
/// the 10-node two-clique graph.
pub fn louvain_check() -> LouvainCheck {
    let (g, edges) = two_cliques_graph();
    let a = dense_adjacency(&g, &edges, false);
    let mut partitions = 0usize;
    let mut best = f64::NEG_INFINITY;
    for_each_partition(10, &mut |c| {
        partitions += 1;
        best = best.max(modularity_oracle(&a, c));
    });
    let mut out = LouvainCheck {
        partitions,
        best,
        found: Vec::new(),
        reported: Vec::new(),
        n_communities: Vec::new(),
        cliques_recovered: true,
    };
    for seed in 0..5 {
        let r = louvain(&g, 1.0, seed);
        out.found.push(modularity_oracle(&a, &r.community));
        out.reported.push(r.modularity);
        out.n_communities.push(r.n_communities);
        let side = |k: &str| r.community[g.lookup(NodeKind::User, k).unwrap().index()];
        out.cliques_recovered &= (0..5).all(|i| side(&format!("v{i}")) == side("v0"))
            && (5..10).all(|i| side(&format!("v{i}")) == side("v9"))
            && side("v0") != side("v9");
    }
    out
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                e.push((i, j));
            }
        }
    }
    e
}

pub fn dense_adj(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for &(i, j) in edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v.max(0.0))
}

/// Dense `D̃^{-1/2}(A+I)D̃^{-1/2}` built entry by entry.
pub fn dense_renorm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let at = a + &Array2::<f64>::eye(n);
    let d: Vec<f64> = (0..n).map(|i| at.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| at[[i, j]] / (d[i] * d[j]).sqrt())
}

pub fn dense_sym(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| if a[[i, j]] == 0.0 { 0.0 } else { a[[i, j]] / (d[i] * d[j]).sqrt() })
}

/// Random instances of 2 to 20 nodes.
fn small_instances(seed: u64) -> Vec<(usize, Vec<(usize, usize)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![(2, vec![(0, 1)]), (4, vec![(0, 1), (1, 2), (2, 0), (2, 3)])];
    for n in [7, 12, 20] {
        out.push((n, random_graph(n, 0.3, &mut rng)));
    }
    out
}

/// GCN against `ReLU(Â X W)` with `Â` built densely.
pub fn gcn_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for (n, edges) in small_instances(11) {
        let g = GnnGraph::from_edges(n, &edges);
        let x = random_matrix(n, 3, &mut rng);
        let w = random_matrix(3, 4, &mut rng);
        let expected = relu(&dense_renorm(&dense_adj(n, &edges)).dot(&x).dot(&w));
        let got = gcn_forward(&w, x.view(), &g.gcn, Activation::Relu).unwrap();
        worst = worst.max(max_abs_diff(&got, &expected));
    }
    worst
}

/// GraphSage against a per-node loop: concatenate self and neighbor mean,
/// project, ReLU, scale to unit length.
pub fn sage_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (n, edges) in small_instances(12) {
        let g = GnnGraph::from_edges(n, &edges);
        let adj = dense_adj(n, &edges);
        let x = random_matrix(n, 3, &mut rng);
        let w = random_matrix(6, 5, &mut rng);
        let got = sage_forward(&w, x.view(), &g.mean, Activation::Relu, true).unwrap();
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| adj[[i, j]] > 0.0).collect();
            let mut c = [0.0; 6];
            for k in 0..3 {
                c[k] = x[[i, k]];
                if !nbrs.is_empty() {
                    c[3 + k] = nbrs.iter().map(|&j| x[[j, k]]).sum::<f64>() / nbrs.len() as f64;
                }
            }
            let h: Vec<f64> = (0..5).map(|o| (0..6).map(|r| c[r] * w[[r, o]]).sum::<f64>().max(0.0)).collect();
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            for o in 0..5 {
                let e = if norm > 0.0 { h[o] / norm } else { 0.0 };
                worst = worst.max((got[[i, o]] - e).abs());
            }
        }
    }
    worst
}

/// GAT against a double loop over each node's closed neighborhood with
/// LeakyReLU scores and a softmax.
pub fn gat_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for (n, edges) in small_instances(13) {
        let g = GnnGraph::from_edges(n, &edges);
        let adj = dense_adj(n, &edges);
        let x = random_matrix(n, 3, &mut rng);
        let w = random_matrix(3, 2, &mut rng);
        let a = random_matrix(4, 1, &mut rng);
        let got = gat_forward(&w, &a, x.view(), &g.attention, 0.2, Activation::Identity).unwrap();
        let z = x.dot(&w);
        for i in 0..n {
            let members: Vec<usize> = (0..n).filter(|&j| j == i || adj[[i, j]] > 0.0).collect();
            let e: Vec<f64> = members
                .iter()
                .map(|&j| {
                    let v =
                        a[[0, 0]] * z[[i, 0]] + a[[1, 0]] * z[[i, 1]] + a[[2, 0]] * z[[j, 0]] + a[[3, 0]] * z[[j, 1]];
                    if v > 0.0 {
                        v
                    } else {
                        0.2 * v
                    }
                })
                .collect();
            let denom: f64 = e.iter().map(|v| v.exp()).sum();
            for o in 0..2 {
                let h: f64 = members.iter().zip(&e).map(|(&j, v)| v.exp() / denom * z[[j, o]]).sum();
                worst = worst.max((got[[i, o]] - h).abs());
            }
        }
    }
    worst
}

/// TAGCN against the explicit polynomial `Σ_k S^k X W_k` with `K = 2`.
pub fn tagcn_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for (n, edges) in small_instances(14) {
        let g = GnnGraph::from_edges(n, &edges);
        let s = dense_sym(&dense_adj(n, &edges));
        let x = random_matrix(n, 3, &mut rng);
        let coeffs: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(3, 2, &mut rng)).collect();
        let got = tagcn_forward(&coeffs, x.view(), &g.sym, Activation::Identity).unwrap();
        let expected = x.dot(&coeffs[0]) + s.dot(&x).dot(&coeffs[1]) + s.dot(&s).dot(&x).dot(&coeffs[2]);
        worst = worst.max(max_abs_diff(&got, &expected));
    }
    worst
}

pub fn forward_error(kind: LayerKind) -> f64 {
    match kind {
        LayerKind::Gcn => gcn_error(),
        LayerKind::Sage => sage_error(),
        LayerKind::Gat => gat_error(),
        LayerKind::Tagcn => tagcn_error(),
    }
}

/// Twelve random nodes with five features and labels `i % 3 == 0`.
pub fn toy_instance(seed: u64) -> (GnnGraph, Array2<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let edges = random_graph(n, 0.35, &mut rng);
    let g = GnnGraph::from_edges(n, &edges);
    let x = random_matrix(n, 5, &mut rng);
    let y: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    (g, x, y)
}

/// Finite-difference check of a two-layer network, with two heads for GAT.
pub fn gradient_error(kind: LayerKind) -> f64 {
    let heads: &[usize] = if kind == LayerKind::Gat { &[1, 2] } else { &[1] };
    let (g, x, y) = toy_instance(12);
    let mask: Vec<usize> = (0..10).collect();
    heads
        .iter()
        .map(|&heads| {
            let arch = GnnArch { hidden: 6, heads, k: 2, ..GnnArch::new(kind) };
            gradient_check(&arch, &g, &x, &y, &mask, [0.8, 1.7], 3, 1e-5).unwrap()
        })
        .fold(0.0, f64::max)
}
