//! Two-layer semi-supervised graph neural networks (GCN, GraphSAGE, GAT,
//! TAGCN) trained with class-weighted cross-entropy by full-batch gradient
//! descent. Gradients are derived by hand and checked against central
//! finite differences.

mod layers;
mod operator;

pub use layers::{gat_attention, gat_forward, gcn_forward, sage_forward, tagcn_forward, Activation, Layer, LayerKind};
pub use operator::{normalize_adjacency, GnnGraph, Neighborhoods, NormMode, PropagationOperator};

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{auc, CostFields, EvalError};
use crate::gbdt::{repeated_split_experiment, ExperimentResult, GbdtError, Protocol};
use crate::rng;

/// Version of the JSON checkpoint layout.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("{what}: shape {got:?}, expected {expected:?}")]
    Shape { what: &'static str, got: (usize, usize), expected: (usize, usize) },
    #[error("training mask is empty")]
    EmptyMask,
    #[error("node {0} appears in both masks")]
    OverlappingMasks(usize),
    #[error("mask node {0} is out of range")]
    MaskOutOfRange(usize),
    #[error("label of node {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("class {0} is absent from the training mask")]
    MissingClass(u8),
    #[error("class weights sum to zero over the mask")]
    ZeroWeight,
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint schema version {0}")]
    SchemaVersion(u32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Experiment(#[from] GbdtError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnArch {
    pub layer: LayerKind,
    pub hidden: usize,
    pub out: usize,
    /// TAGCN filter degree.
    pub k: usize,
    /// GAT attention heads.
    pub heads: usize,
    /// GAT LeakyReLU slope.
    pub leaky_slope: f64,
}

impl Default for GnnArch {
    fn default() -> Self {
        Self { layer: LayerKind::Gcn, hidden: 16, out: 2, k: 3, heads: 1, leaky_slope: 0.2 }
    }
}

impl GnnArch {
    pub fn new(layer: LayerKind) -> Self {
        Self { layer, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.hidden == 0 || self.out == 0 || self.heads == 0 {
            return Err(GnnError::InvalidConfig("layer widths and head count must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(GnnError::InvalidConfig("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Per-class loss weights; inverse class frequency on the training mask
    /// when absent.
    pub class_weights: Option<[f64; 2]>,
    pub seed: u64,
    /// Heavy-ball momentum; 0 is plain gradient descent.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.02, epochs: 200, class_weights: None, seed: 0, momentum: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GnnError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GnnError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(GnnError::InvalidConfig("class weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Train and test node indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Masks {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    pub fn validate(&self, n: usize) -> Result<(), GnnError> {
        if self.train.is_empty() {
            return Err(GnnError::EmptyMask);
        }
        let mut seen = vec![false; n];
        for &i in &self.train {
            if i >= n {
                return Err(GnnError::MaskOutOfRange(i));
            }
            seen[i] = true;
        }
        for &i in &self.test {
            if i >= n {
                return Err(GnnError::MaskOutOfRange(i));
            }
            if seen[i] {
                return Err(GnnError::OverlappingMasks(i));
            }
        }
        Ok(())
    }
}

/// Class-weighted cross-entropy over `mask`, normalized by the total weight
/// of the masked nodes.
pub fn weighted_cross_entropy(
    logits: &Array2<f64>,
    labels: &[u8],
    class_weights: &[f64],
    mask: &[usize],
) -> Result<f64, GnnError> {
    Ok(cross_entropy_with_grad(logits, labels, class_weights, mask, false)?.0)
}

fn cross_entropy_with_grad(
    logits: &Array2<f64>,
    labels: &[u8],
    class_weights: &[f64],
    mask: &[usize],
    want_grad: bool,
) -> Result<(f64, Array2<f64>), GnnError> {
    if mask.is_empty() {
        return Err(GnnError::EmptyMask);
    }
    let c = logits.ncols();
    if class_weights.len() != c {
        return Err(GnnError::Shape { what: "class weights", got: (class_weights.len(), 1), expected: (c, 1) });
    }
    let mut total_w = 0.0;
    for &i in mask {
        let y = *labels.get(i).ok_or(GnnError::MaskOutOfRange(i))? as usize;
        if y >= c {
            return Err(GnnError::BadLabel(i));
        }
        total_w += class_weights[y];
    }
    if total_w <= 0.0 {
        return Err(GnnError::ZeroWeight);
    }
    let mut loss = 0.0;
    let mut grad = if want_grad { Array2::zeros(logits.dim()) } else { Array2::zeros((0, 0)) };
    for &i in mask {
        let y = labels[i] as usize;
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let w = class_weights[y] / total_w;
        loss += w * (lse - row[y]);
        if want_grad {
            let mut g = grad.row_mut(i);
            for k in 0..c {
                g[k] = w * ((row[k] - lse).exp() - if k == y { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((loss, grad))
}

/// Per-layer lists of parameter gradients, shaped like the parameters.
pub type Gradients = Vec<Vec<Array2<f64>>>;

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// The two-layer stack of `arch`: a ReLU hidden layer (unit-norm rows for
    /// GraphSAGE, concatenated heads for GAT) and a linear output layer
    /// (averaged heads for GAT).
    pub fn two_layer(arch: &GnnArch, in_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "gnn/init");
        let mut hidden = Layer::new(
            arch.layer,
            in_dim,
            arch.hidden,
            Activation::Relu,
            arch.heads,
            true,
            arch.k,
            arch.leaky_slope,
            &mut r,
        );
        hidden.l2_normalize = arch.layer == LayerKind::Sage;
        let output = Layer::new(
            arch.layer,
            hidden.out_dim(),
            arch.out,
            Activation::Identity,
            arch.heads,
            false,
            arch.k,
            arch.leaky_slope,
            &mut r,
        );
        Self { layers: vec![hidden, output] }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn forward(&self, g: &GnnGraph, x: &Array2<f64>) -> Result<Array2<f64>, GnnError> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(g, &h)?.0;
        }
        Ok(h)
    }

    /// Loss and parameter gradients, layer by layer.
    pub fn loss_and_grad(
        &self,
        g: &GnnGraph,
        x: &Array2<f64>,
        labels: &[u8],
        class_weights: &[f64],
        mask: &[usize],
    ) -> Result<(f64, Gradients), GnnError> {
        let (loss, grads, _) = self.forward_backward(g, x, labels, class_weights, mask)?;
        Ok((loss, grads))
    }

    #[allow(clippy::type_complexity)]
    fn forward_backward(
        &self,
        g: &GnnGraph,
        x: &Array2<f64>,
        labels: &[u8],
        class_weights: &[f64],
        mask: &[usize],
    ) -> Result<(f64, Gradients, Array2<f64>), GnnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let (out, c) = l.forward(g, &h)?;
            caches.push(c);
            h = out;
        }
        let (loss, mut d) = cross_entropy_with_grad(&h, labels, class_weights, mask, true)?;
        let mut grads = vec![Vec::new(); self.layers.len()];
        for (k, l) in self.layers.iter().enumerate().rev() {
            let (gp, dx) = l.backward(g, &caches[k], &d);
            grads[k] = gp;
            d = dx;
        }
        Ok((loss, grads, h))
    }

    pub fn loss(
        &self,
        g: &GnnGraph,
        x: &Array2<f64>,
        labels: &[u8],
        class_weights: &[f64],
        mask: &[usize],
    ) -> Result<f64, GnnError> {
        weighted_cross_entropy(&self.forward(g, x)?, labels, class_weights, mask)
    }

    /// Largest relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
    /// gradients `a` and central differences `n` with step `epsilon`, over
    /// every parameter.
    pub fn gradient_check(
        &self,
        g: &GnnGraph,
        x: &Array2<f64>,
        labels: &[u8],
        class_weights: &[f64],
        mask: &[usize],
        epsilon: f64,
    ) -> Result<f64, GnnError> {
        let (_, grads) = self.loss_and_grad(g, x, labels, class_weights, mask)?;
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for (li, layer_grads) in grads.iter().enumerate() {
            for (pi, grad) in layer_grads.iter().enumerate() {
                for (idx, &analytic) in grad.indexed_iter() {
                    let orig = self.layers[li].params[pi][idx];
                    probe.layers[li].params[pi][idx] = orig + epsilon;
                    let up = probe.loss(g, x, labels, class_weights, mask)?;
                    probe.layers[li].params[pi][idx] = orig - epsilon;
                    let down = probe.loss(g, x, labels, class_weights, mask)?;
                    probe.layers[li].params[pi][idx] = orig;
                    let numeric = (up - down) / (2.0 * epsilon);
                    let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(err);
                }
            }
        }
        Ok(worst)
    }
}

/// Column means and standard deviations fitted on the training nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows`, ignoring missing values. Constant columns keep unit scale.
    pub fn fit(x: &Array2<f64>, rows: &[usize]) -> Self {
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let vals: Vec<f64> = rows.iter().map(|&i| col[i]).filter(|v| !v.is_nan()).collect();
            let n = vals.len() as f64;
            let m = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / n };
            let var = if vals.is_empty() { 0.0 } else { vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n };
            mean.push(m);
            sd.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, sd }
    }

    /// Standardized copy; missing values become 0 (the training mean).
    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| if v.is_nan() { 0.0 } else { (v - self.mean[j]) / self.sd[j] });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Absent when the training mask holds a single class.
    pub train_auc: Option<f64>,
}

/// Trained network with its preprocessing and training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub schema_version: u32,
    pub arch: GnnArch,
    pub train: TrainConfig,
    pub class_weights: [f64; 2],
    pub standardizer: Standardizer,
    pub network: Network,
    /// Training loss before each update and after the last one.
    pub loss_history: Vec<f64>,
}

impl GnnModel {
    /// Probability of class 1 per node.
    pub fn predict(&self, g: &GnnGraph, x: &Array2<f64>) -> Result<Vec<f64>, GnnError> {
        let logits = self.network.forward(g, &self.standardizer.transform(x))?;
        Ok(softmax_positive(&logits))
    }

    pub fn to_json(&self) -> Result<String, GnnError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, GnnError> {
        let m: Self = serde_json::from_str(s)?;
        if m.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(GnnError::SchemaVersion(m.schema_version));
        }
        Ok(m)
    }
}

fn softmax_positive(logits: &Array2<f64>) -> Vec<f64> {
    logits
        .axis_iter(Axis(0))
        .map(|r| {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = r.iter().map(|v| (v - m).exp()).sum();
            (r[1] - m).exp() / s
        })
        .collect()
}

/// Inverse-frequency weights `n / (2 n_c)` over the labels of `mask`.
pub fn inverse_frequency_weights(labels: &[u8], mask: &[usize]) -> Result<[f64; 2], GnnError> {
    let pos = mask.iter().filter(|&&i| labels[i] == 1).count();
    let neg = mask.len() - pos;
    if neg == 0 {
        return Err(GnnError::MissingClass(0));
    }
    if pos == 0 {
        return Err(GnnError::MissingClass(1));
    }
    let n = mask.len() as f64;
    Ok([n / (2.0 * neg as f64), n / (2.0 * pos as f64)])
}

/// Outcome of [`train_gnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: GnnModel,
    pub history: Vec<EpochLog>,
}

/// Trains a fresh two-layer network on the training mask of `masks`.
pub fn train_gnn(
    g: &GnnGraph,
    x: &Array2<f64>,
    labels: &[u8],
    masks: &Masks,
    arch: &GnnArch,
    cfg: &TrainConfig,
) -> Result<Trained, GnnError> {
    arch.validate()?;
    cfg.validate()?;
    if x.nrows() != g.n() || labels.len() != g.n() {
        return Err(GnnError::Shape { what: "node features", got: x.dim(), expected: (g.n(), x.ncols()) });
    }
    masks.validate(g.n())?;
    if let Some(&i) = masks.train.iter().find(|&&i| labels[i] > 1) {
        return Err(GnnError::BadLabel(i));
    }
    let class_weights = match cfg.class_weights {
        Some(w) => w,
        None => inverse_frequency_weights(labels, &masks.train)?,
    };

    let standardizer = Standardizer::fit(x, &masks.train);
    let xs = standardizer.transform(x);
    let mut net = Network::two_layer(arch, x.ncols(), cfg.seed);
    let mut velocity: Gradients =
        net.layers.iter().map(|l| l.params.iter().map(|p| Array2::zeros(p.dim())).collect()).collect();
    let train_labels: Vec<u8> = masks.train.iter().map(|&i| labels[i]).collect();

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (loss, grads, logits) = net.forward_backward(g, &xs, labels, &class_weights, &masks.train)?;
        if !loss.is_finite() {
            return Err(GnnError::Diverged { epoch });
        }
        let p = softmax_positive(&logits);
        let train_scores: Vec<f64> = masks.train.iter().map(|&i| p[i]).collect();
        history.push(EpochLog { epoch, loss, train_auc: auc(&train_scores, &train_labels).ok() });
        if epoch == cfg.epochs {
            break;
        }
        for ((layer, lg), lv) in net.layers.iter_mut().zip(&grads).zip(&mut velocity) {
            for ((param, grad), vel) in layer.params.iter_mut().zip(lg).zip(lv) {
                if cfg.momentum > 0.0 {
                    *vel *= cfg.momentum;
                    *vel += grad;
                    param.scaled_add(-cfg.learning_rate, vel);
                } else {
                    param.scaled_add(-cfg.learning_rate, grad);
                }
                if param.iter().any(|v| !v.is_finite()) {
                    return Err(GnnError::Diverged { epoch });
                }
            }
        }
    }
    let model = GnnModel {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        arch: arch.clone(),
        train: cfg.clone(),
        class_weights,
        standardizer,
        network: net,
        loss_history: history.iter().map(|h| h.loss).collect(),
    };
    Ok(Trained { model, history })
}

/// Gradient check of a freshly initialized `arch` network on a toy instance.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    arch: &GnnArch,
    g: &GnnGraph,
    x: &Array2<f64>,
    labels: &[u8],
    mask: &[usize],
    class_weights: [f64; 2],
    seed: u64,
    epsilon: f64,
) -> Result<f64, GnnError> {
    arch.validate()?;
    let net = Network::two_layer(arch, x.ncols(), seed);
    net.gradient_check(g, x, labels, &class_weights, mask, epsilon)
}

/// Writes one JSON object per epoch.
pub fn write_history_jsonl(w: &mut impl Write, history: &[EpochLog]) -> Result<(), GnnError> {
    for h in history {
        serde_json::to_writer(&mut *w, h)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs the repeated-split protocol over the labeled nodes. `labels[i]` is
/// `None` for unlabeled nodes, which still propagate features. `cost` covers
/// the labeled nodes in node order.
pub fn gnn_experiment(
    g: &GnnGraph,
    x: &Array2<f64>,
    labels: &[Option<u8>],
    cost: &CostFields,
    protocol: &Protocol,
    arch: &GnnArch,
    cfg: &TrainConfig,
) -> Result<ExperimentResult, GnnError> {
    let nodes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let y: Vec<u8> = nodes.iter().map(|&i| labels[i].expect("labeled")).collect();
    let full: Vec<u8> = labels.iter().map(|l| l.unwrap_or(0)).collect();
    let config = serde_json::json!({ "arch": arch, "train": cfg });
    repeated_split_experiment(
        &format!("gnn_{}", arch.layer),
        config,
        &y,
        cost,
        protocol,
        |run, train, test| -> Result<Vec<f64>, GnnError> {
            let masks = Masks {
                train: train.iter().map(|&i| nodes[i]).collect(),
                test: test.iter().map(|&i| nodes[i]).collect(),
            };
            let run_cfg = TrainConfig { seed: rng::sub_seed(cfg.seed, &format!("gnn/run/{run}")), ..cfg.clone() };
            let trained = train_gnn(g, x, &full, &masks, arch, &run_cfg)?;
            let p = trained.model.predict(g, x)?;
            Ok(masks.test.iter().map(|&i| p[i]).collect())
        },
    )
}

/// Two 10-node cliques joined by one edge, labels 0 and 1, with four
/// features drawn as `±0.5 + U(-1, 1)` by label.
pub fn two_cliques_toy(seed: u64) -> (GnnGraph, Array2<f64>, Vec<u8>) {
    let mut r = rng::from_seed(seed);
    let mut edges = Vec::new();
    for c in 0..2 {
        for i in 0..10 {
            for j in (i + 1)..10 {
                edges.push((c * 10 + i, c * 10 + j));
            }
        }
    }
    edges.push((0, 10));
    let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
    let x = Array2::from_shape_fn((20, 4), |(i, _)| {
        let mu = if y[i] == 1 { 0.5 } else { -0.5 };
        mu + r.random_range(-1.0..1.0)
    });
    (GnnGraph::from_edges(20, &edges), x, y)
}
