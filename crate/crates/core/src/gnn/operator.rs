//! Sparse propagation operators over the symmetrized node graph.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}` with `D̃` the degrees of `A+I`.
    GcnRenorm,
    /// `D^{-1/2} A D^{-1/2}`; isolated nodes get zero rows.
    SymNorm,
    /// `D^{-1} A`: the mean over neighbors; isolated nodes get zero rows.
    RowStochastic,
    /// `A` itself.
    Raw,
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    pub mode: NormMode,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl PropagationOperator {
    fn from_rows(mode: NormMode, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self { mode, offsets, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// `self · x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), x.ncols()));
        for i in 0..self.n() {
            let mut o = out.row_mut(i);
            for (j, v) in self.row(i) {
                o.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    /// `selfᵀ · x`.
    pub fn apply_t(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), x.ncols()));
        for i in 0..self.n() {
            let xi = x.row(i);
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &xi);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n(), self.n()));
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                d[[i, j]] += v;
            }
        }
        d
    }
}

/// Symmetrized weighted adjacency rows, sorted by column, without self-loops.
fn adjacency(g: &Graph) -> Vec<Vec<(usize, f64)>> {
    let sym = g.symmetrized();
    sym.nodes()
        .map(|v| {
            let (t, w) = sym.out_row(v);
            let mut row: Vec<(usize, f64)> = t.iter().map(|x| x.index()).zip(w.iter().copied()).collect();
            row.sort_by_key(|p| p.0);
            row
        })
        .collect()
}

fn inv_sqrt(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

/// Builds the operator of `mode` from `g`. Directed graphs are symmetrized
/// with summed weights first.
pub fn normalize_adjacency(g: &Graph, mode: NormMode) -> PropagationOperator {
    operator_from_rows(adjacency(g), mode)
}

pub(crate) fn operator_from_rows(adj: Vec<Vec<(usize, f64)>>, mode: NormMode) -> PropagationOperator {
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().map(|p| p.1).sum()).collect();
    let rows = match mode {
        NormMode::Raw => adj,
        NormMode::RowStochastic => adj
            .into_iter()
            .zip(&deg)
            .map(|(r, &d)| r.into_iter().map(|(j, w)| (j, if d > 0.0 { w / d } else { 0.0 })).collect())
            .collect(),
        NormMode::SymNorm => adj
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_iter().map(|(j, w)| (j, w * inv_sqrt(deg[i] * deg[j]))).collect())
            .collect(),
        NormMode::GcnRenorm => adj
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row: Vec<(usize, f64)> =
                    r.into_iter().map(|(j, w)| (j, w * inv_sqrt((deg[i] + 1.0) * (deg[j] + 1.0)))).collect();
                let at = row.partition_point(|p| p.0 < i);
                row.insert(at, (i, 1.0 / (deg[i] + 1.0)));
                row
            })
            .collect(),
    };
    PropagationOperator::from_rows(mode, rows)
}

/// Attention neighborhoods `N_i ∪ {i}`: each node first, then its distinct
/// neighbors in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Neighborhoods {
    pub fn from_graph(g: &Graph) -> Self {
        Self::from_rows(&adjacency(g))
    }

    pub(crate) fn from_rows(adj: &[Vec<(usize, f64)>]) -> Self {
        let mut offsets = vec![0];
        let mut members = Vec::new();
        for (i, row) in adj.iter().enumerate() {
            members.push(i);
            members.extend(row.iter().map(|p| p.0).filter(|&j| j != i));
            offsets.push(members.len());
        }
        Self { offsets, members }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Every structure the four layer types propagate over, built once per graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnGraph {
    pub gcn: PropagationOperator,
    pub sym: PropagationOperator,
    pub mean: PropagationOperator,
    pub attention: Neighborhoods,
}

impl GnnGraph {
    pub fn new(g: &Graph) -> Self {
        Self::from_adjacency(adjacency(g))
    }

    /// From symmetric weighted adjacency rows (no self-loops).
    pub fn from_adjacency(adj: Vec<Vec<(usize, f64)>>) -> Self {
        Self {
            attention: Neighborhoods::from_rows(&adj),
            gcn: operator_from_rows(adj.clone(), NormMode::GcnRenorm),
            sym: operator_from_rows(adj.clone(), NormMode::SymNorm),
            mean: operator_from_rows(adj, NormMode::RowStochastic),
        }
    }

    pub fn n(&self) -> usize {
        self.gcn.n()
    }

    /// Undirected graph on `n` nodes from an edge list, for toy instances.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].push((b, 1.0));
                adj[b].push((a, 1.0));
            }
        }
        for row in &mut adj {
            row.sort_by_key(|p: &(usize, f64)| p.0);
            row.dedup_by_key(|p| p.0);
        }
        Self::from_adjacency(adj)
    }
}
