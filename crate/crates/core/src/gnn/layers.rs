//! The four layer types with hand-derived reverse-mode gradients.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::operator::{GnnGraph, Neighborhoods, PropagationOperator};
use super::GnnError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gat,
    Tagcn,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gat, LayerKind::Tagcn];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Sage => "sage",
            LayerKind::Gat => "gat",
            LayerKind::Tagcn => "tagcn",
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

fn activate(z: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Relu => z.mapv(|v| v.max(0.0)),
        Activation::Identity => z.clone(),
    }
}

fn activate_back(z: &Array2<f64>, d: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Relu => {
            let mut out = d.clone();
            out.zip_mut_with(z, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
            out
        }
        Activation::Identity => d.clone(),
    }
}

fn check_shape(what: &'static str, got: (usize, usize), expected: (usize, usize)) -> Result<(), GnnError> {
    if got != expected {
        return Err(GnnError::Shape { what, got, expected });
    }
    Ok(())
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let u = Uniform::new_inclusive(-s, s).expect("finite bounds");
    Array2::from_shape_fn((rows, cols), |_| u.sample(rng))
}

/// One graph layer: kind, shape, activation and parameters.
///
/// Parameter layout: GCN `[W]`; GraphSAGE `[W]` acting on `[x_i, mean_j x_j]`;
/// GAT `[W_h, a_h]` per head with `a_h = [a_src; a_dst]`; TAGCN `[G_0..G_K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_dim: usize,
    /// Width of each attention head, and of the layer for other kinds.
    pub head_dim: usize,
    pub activation: Activation,
    /// Unit ℓ² rows after activation (GraphSAGE).
    pub l2_normalize: bool,
    pub heads: usize,
    /// Concatenate heads (otherwise average them).
    pub concat_heads: bool,
    /// TAGCN filter degree.
    pub k: usize,
    pub leaky_slope: f64,
    pub params: Vec<Array2<f64>>,
}

pub(crate) enum Cache {
    Gcn { p: Array2<f64>, z: Array2<f64> },
    Sage { c: Array2<f64>, z: Array2<f64>, out: Array2<f64>, norms: Array1<f64> },
    Gat { x: Array2<f64>, heads: Vec<HeadCache>, z: Array2<f64> },
    Tagcn { ps: Vec<Array2<f64>>, z: Array2<f64> },
}

pub(crate) struct HeadCache {
    z: Array2<f64>,
    pre: Vec<f64>,
    alpha: Vec<f64>,
}

impl Layer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: LayerKind,
        in_dim: usize,
        head_dim: usize,
        activation: Activation,
        heads: usize,
        concat_heads: bool,
        k: usize,
        leaky_slope: f64,
        rng: &mut Rng,
    ) -> Self {
        let params = match kind {
            LayerKind::Gcn => vec![glorot(in_dim, head_dim, rng)],
            LayerKind::Sage => vec![glorot(2 * in_dim, head_dim, rng)],
            LayerKind::Gat => {
                (0..heads).flat_map(|_| [glorot(in_dim, head_dim, rng), glorot(2 * head_dim, 1, rng)]).collect()
            }
            LayerKind::Tagcn => (0..=k).map(|_| glorot(in_dim, head_dim, rng)).collect(),
        };
        Self {
            kind,
            in_dim,
            head_dim,
            activation,
            l2_normalize: false,
            heads: if kind == LayerKind::Gat { heads } else { 1 },
            concat_heads,
            k,
            leaky_slope,
            params,
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.kind == LayerKind::Gat && self.concat_heads {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    fn check_params(&self) -> Result<(), GnnError> {
        let expect: Vec<(usize, usize)> = match self.kind {
            LayerKind::Gcn => vec![(self.in_dim, self.head_dim)],
            LayerKind::Sage => vec![(2 * self.in_dim, self.head_dim)],
            LayerKind::Gat => {
                (0..self.heads).flat_map(|_| [(self.in_dim, self.head_dim), (2 * self.head_dim, 1)]).collect()
            }
            LayerKind::Tagcn => vec![(self.in_dim, self.head_dim); self.k + 1],
        };
        if expect.len() != self.params.len() {
            return Err(GnnError::InvalidConfig(format!(
                "{} layer has {} parameter blocks, expected {}",
                self.kind,
                self.params.len(),
                expect.len()
            )));
        }
        for (p, e) in self.params.iter().zip(expect) {
            check_shape("layer parameter", p.dim(), e)?;
        }
        Ok(())
    }

    pub(crate) fn forward(&self, g: &GnnGraph, x: &Array2<f64>) -> Result<(Array2<f64>, Cache), GnnError> {
        self.check_params()?;
        check_shape("layer input", x.dim(), (g.n(), self.in_dim))?;
        Ok(match self.kind {
            LayerKind::Gcn => {
                let p = g.gcn.apply(x.view());
                let z = p.dot(&self.params[0]);
                (activate(&z, self.activation), Cache::Gcn { p, z })
            }
            LayerKind::Sage => {
                let c = concatenate![Axis(1), x.view(), g.mean.apply(x.view())];
                let z = c.dot(&self.params[0]);
                let mut out = activate(&z, self.activation);
                let mut norms = Array1::zeros(out.nrows());
                if self.l2_normalize {
                    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter_mut()) {
                        *n = row.dot(&row).sqrt();
                        if *n > 0.0 {
                            row /= *n;
                        }
                    }
                }
                (out.clone(), Cache::Sage { c, z, out, norms })
            }
            LayerKind::Gat => {
                let n = g.n();
                let mut z = Array2::zeros((n, self.out_dim()));
                let mut heads = Vec::with_capacity(self.heads);
                for h in 0..self.heads {
                    let (o, hc) =
                        gat_head(&self.params[2 * h], &self.params[2 * h + 1], x, &g.attention, self.leaky_slope);
                    if self.concat_heads {
                        z.slice_mut(s![.., h * self.head_dim..(h + 1) * self.head_dim]).assign(&o);
                    } else {
                        z.scaled_add(1.0 / self.heads as f64, &o);
                    }
                    heads.push(hc);
                }
                (activate(&z, self.activation), Cache::Gat { x: x.clone(), heads, z })
            }
            LayerKind::Tagcn => {
                let mut ps = Vec::with_capacity(self.k + 1);
                ps.push(x.clone());
                for j in 1..=self.k {
                    let next = g.sym.apply(ps[j - 1].view());
                    ps.push(next);
                }
                let mut z = Array2::zeros((g.n(), self.head_dim));
                for (p, gj) in ps.iter().zip(&self.params) {
                    z += &p.dot(gj);
                }
                (activate(&z, self.activation), Cache::Tagcn { ps, z })
            }
        })
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub(crate) fn backward(&self, g: &GnnGraph, cache: &Cache, d_out: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        match cache {
            Cache::Gcn { p, z } => {
                let dz = activate_back(z, d_out, self.activation);
                let w = &self.params[0];
                let dw = p.t().dot(&dz);
                let dx = g.gcn.apply_t(dz.dot(&w.t()).view());
                (vec![dw], dx)
            }
            Cache::Sage { c, z, out, norms } => {
                let mut dr = d_out.clone();
                if self.l2_normalize {
                    for i in 0..dr.nrows() {
                        let n = norms[i];
                        let mut row = dr.row_mut(i);
                        if n > 0.0 {
                            let proj = out.row(i).dot(&row);
                            row.scaled_add(-proj, &out.row(i));
                            row /= n;
                        } else {
                            row.fill(0.0);
                        }
                    }
                }
                let dz = activate_back(z, &dr, self.activation);
                let w = &self.params[0];
                let dw = c.t().dot(&dz);
                let dc = dz.dot(&w.t());
                let d = self.in_dim;
                let mut dx = dc.slice(s![.., ..d]).to_owned();
                dx += &g.mean.apply_t(dc.slice(s![.., d..]));
                (vec![dw], dx)
            }
            Cache::Gat { x, heads, z } => {
                let dz = activate_back(z, d_out, self.activation);
                let mut grads = Vec::with_capacity(2 * self.heads);
                let mut dx = Array2::zeros(x.dim());
                for (h, hc) in heads.iter().enumerate() {
                    let d_head = if self.concat_heads {
                        dz.slice(s![.., h * self.head_dim..(h + 1) * self.head_dim]).to_owned()
                    } else {
                        &dz / self.heads as f64
                    };
                    let (dw, da, dxh) = gat_head_back(
                        &self.params[2 * h],
                        &self.params[2 * h + 1],
                        x,
                        &g.attention,
                        self.leaky_slope,
                        hc,
                        &d_head,
                    );
                    grads.push(dw);
                    grads.push(da);
                    dx += &dxh;
                }
                (grads, dx)
            }
            Cache::Tagcn { ps, z } => {
                let dz = activate_back(z, d_out, self.activation);
                let grads = ps.iter().map(|p| p.t().dot(&dz)).collect();
                // Horner: dX = Σ_j (Sᵀ)^j dZ G_jᵀ
                let mut q = dz.dot(&self.params[self.k].t());
                for j in (0..self.k).rev() {
                    q = g.sym.apply_t(q.view());
                    q += &dz.dot(&self.params[j].t());
                }
                (grads, q)
            }
        }
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

fn gat_head(
    w: &Array2<f64>,
    a: &Array2<f64>,
    x: &Array2<f64>,
    nb: &Neighborhoods,
    slope: f64,
) -> (Array2<f64>, HeadCache) {
    let d = w.ncols();
    let z: Array2<f64> = x.dot(w);
    let src: Array1<f64> = z.dot(&a.slice(s![..d, 0]));
    let dst: Array1<f64> = z.dot(&a.slice(s![d.., 0]));
    let mut out = Array2::zeros(z.dim());
    let mut pre = Vec::new();
    let mut alpha = Vec::new();
    for i in 0..nb.n() {
        let start = pre.len();
        for &j in nb.of(i) {
            pre.push(src[i] + dst[j]);
        }
        let e: Vec<f64> = pre[start..].iter().map(|&p| leaky(p, slope)).collect();
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = ex.iter().sum();
        let mut o = out.row_mut(i);
        for (&j, v) in nb.of(i).iter().zip(ex) {
            let a_ij = v / sum;
            o.scaled_add(a_ij, &z.row(j));
            alpha.push(a_ij);
        }
    }
    (out, HeadCache { z, pre, alpha })
}

#[allow(clippy::type_complexity)]
fn gat_head_back(
    w: &Array2<f64>,
    a: &Array2<f64>,
    x: &Array2<f64>,
    nb: &Neighborhoods,
    slope: f64,
    c: &HeadCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = w.ncols();
    let n = nb.n();
    let mut dz = Array2::zeros(c.z.dim());
    let mut ds = Array1::<f64>::zeros(n);
    let mut dt = Array1::<f64>::zeros(n);
    let mut at = 0;
    for i in 0..n {
        let members = nb.of(i);
        let alpha = &c.alpha[at..at + members.len()];
        let pre = &c.pre[at..at + members.len()];
        let d_alpha: Vec<f64> = members.iter().map(|&j| d_out.row(i).dot(&c.z.row(j))).collect();
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, b)| a * b).sum();
        for (k, &j) in members.iter().enumerate() {
            dz.row_mut(j).scaled_add(alpha[k], &d_out.row(i));
            let de = alpha[k] * (d_alpha[k] - mean);
            let dp = if pre[k] > 0.0 { de } else { slope * de };
            ds[i] += dp;
            dt[j] += dp;
        }
        at += members.len();
    }
    let a_src = a.slice(s![..d, 0]);
    let a_dst = a.slice(s![d.., 0]);
    let mut da = Array2::zeros((2 * d, 1));
    da.slice_mut(s![..d, 0]).assign(&c.z.t().dot(&ds));
    da.slice_mut(s![d.., 0]).assign(&c.z.t().dot(&dt));
    for i in 0..n {
        dz.row_mut(i).scaled_add(ds[i], &a_src);
        dz.row_mut(i).scaled_add(dt[i], &a_dst);
    }
    let dw = x.t().dot(&dz);
    let dx = dz.dot(&w.t());
    (dw, da, dx)
}

/// `σ(Â X W)` with `op` the renormalized adjacency.
pub fn gcn_forward(
    w: &Array2<f64>,
    x: ArrayView2<'_, f64>,
    op: &PropagationOperator,
    act: Activation,
) -> Result<Array2<f64>, GnnError> {
    check_shape("gcn input", x.dim(), (op.n(), w.nrows()))?;
    Ok(activate(&op.apply(x).dot(w), act))
}

/// `σ([X, M X] W)` with `mean_op` the neighbor-mean operator, rows scaled to
/// unit ℓ² norm when `normalize` is set.
pub fn sage_forward(
    w: &Array2<f64>,
    x: ArrayView2<'_, f64>,
    mean_op: &PropagationOperator,
    act: Activation,
    normalize: bool,
) -> Result<Array2<f64>, GnnError> {
    check_shape("sage input", (x.nrows(), 2 * x.ncols()), (mean_op.n(), w.nrows()))?;
    let c = concatenate![Axis(1), x, mean_op.apply(x)];
    let mut out = activate(&c.dot(w), act);
    if normalize {
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
    }
    Ok(out)
}

/// Single-head attention layer `σ(Σ_j α_ij W x_j)` over `N_i ∪ {i}`.
pub fn gat_forward(
    w: &Array2<f64>,
    a: &Array2<f64>,
    x: ArrayView2<'_, f64>,
    nb: &Neighborhoods,
    slope: f64,
    act: Activation,
) -> Result<Array2<f64>, GnnError> {
    check_shape("gat input", x.dim(), (nb.n(), w.nrows()))?;
    check_shape("gat attention vector", a.dim(), (2 * w.ncols(), 1))?;
    let (out, _) = gat_head(w, a, &x.to_owned(), nb, slope);
    Ok(activate(&out, act))
}

/// Attention coefficients `α_ij`, one vector per node in neighborhood order.
pub fn gat_attention(
    w: &Array2<f64>,
    a: &Array2<f64>,
    x: ArrayView2<'_, f64>,
    nb: &Neighborhoods,
    slope: f64,
) -> Result<Vec<Vec<f64>>, GnnError> {
    check_shape("gat input", x.dim(), (nb.n(), w.nrows()))?;
    check_shape("gat attention vector", a.dim(), (2 * w.ncols(), 1))?;
    let (_, c) = gat_head(w, a, &x.to_owned(), nb, slope);
    let mut at = 0;
    Ok((0..nb.n())
        .map(|i| {
            let k = nb.of(i).len();
            at += k;
            c.alpha[at - k..at].to_vec()
        })
        .collect())
}

/// `σ(Σ_{j=0..K} S^j X G_j)` by repeated sparse products, `K = coeffs.len() - 1`.
pub fn tagcn_forward(
    coeffs: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    op: &PropagationOperator,
    act: Activation,
) -> Result<Array2<f64>, GnnError> {
    let Some(first) = coeffs.first() else {
        return Err(GnnError::InvalidConfig("TAGCN needs at least one coefficient matrix".into()));
    };
    check_shape("tagcn input", x.dim(), (op.n(), first.nrows()))?;
    let mut p = x.to_owned();
    let mut z = p.dot(first);
    for gj in &coeffs[1..] {
        check_shape("tagcn coefficient", gj.dim(), first.dim())?;
        p = op.apply(p.view());
        z += &p.dot(gj);
    }
    Ok(activate(&z, act))
}
