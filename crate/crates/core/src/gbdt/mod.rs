//! Gradient-boosted decision trees for binary classification with logistic
//! loss, and the repeated-split experiment protocol.
//!
//! Trees are grown with second-order statistics and exact greedy split
//! search over pre-sorted columns. Missing values (`NaN`) are routed to the
//! side that maximizes gain.

mod experiment;
mod tree;

pub use experiment::{
    bootstrap_experiment, repeated_split_experiment, stratified_split, ExperimentResult, Protocol, RunMetrics, Summary,
};
pub use tree::TreeNode;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;
use crate::rng;
use crate::table::FeatureMatrix;

/// Version of the JSON model layout.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label at row {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("infinite value in column `{column}` at row {row}")]
    Infinite { column: String, row: usize },
    #[error("feature matrix is missing column `{0}` required by the model")]
    MissingColumn(String),
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("could not draw a split with both classes in the test set after {0} attempts")]
    Resample(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    pub l2_reg: f64,
    /// Minimum split gain.
    pub gamma: f64,
    /// Row fraction drawn without replacement for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            learning_rate: 0.1,
            max_depth: 4,
            min_child_weight: 1.0,
            l2_reg: 1.0,
            gamma: 0.0,
            subsample: 0.8,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.l2_reg >= 0.0) {
            return bad("l2_reg must be non-negative");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.min_child_weight >= 0.0) {
            return bad("min_child_weight must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
    /// Mean training log-loss before any tree and after each tree.
    pub train_loss: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of margins `z` against labels `y`.
pub fn log_loss(z: &[f64], y: &[u8]) -> f64 {
    // log(1 + e^z) - y z, written stably
    let total: f64 = z.iter().zip(y).map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - f64::from(y) * z).sum();
    total / z.len() as f64
}

fn check_inputs(x: &FeatureMatrix, y: &[u8]) -> Result<(), GbdtError> {
    if x.n_rows() != y.len() {
        return Err(GbdtError::LengthMismatch { rows: x.n_rows(), labels: y.len() });
    }
    if let Some(i) = y.iter().position(|&v| v > 1) {
        return Err(GbdtError::BadLabel(i));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(GbdtError::SingleClass);
    }
    for (name, col) in x.names().iter().zip(x.columns()) {
        if let Some(row) = col.iter().position(|v| v.is_infinite()) {
            return Err(GbdtError::Infinite { column: name.clone(), row });
        }
    }
    Ok(())
}

/// Fits a boosted ensemble of exactly `p.n_trees` trees.
pub fn fit_gbdt(x: &FeatureMatrix, y: &[u8], p: &GbdtParams) -> Result<GbdtModel, GbdtError> {
    p.validate()?;
    check_inputs(x, y)?;
    let n = y.len();
    let prior = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();

    let data = tree::Presorted::new(x.columns());
    let grow = tree::GrowParams {
        max_depth: p.max_depth,
        min_child_weight: p.min_child_weight,
        l2_reg: p.l2_reg,
        gamma: p.gamma,
    };
    let mut margin = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(p.n_trees);
    let mut train_loss = vec![log_loss(&margin, y)];
    let n_sample = ((p.subsample * n as f64).round() as usize).clamp(1, n);
    let mut sample_rng = rng::stream(p.seed, "gbdt/subsample");
    let all_rows: Vec<u32> = (0..n as u32).collect();

    for _ in 0..p.n_trees {
        for i in 0..n {
            let q = sigmoid(margin[i]);
            g[i] = q - f64::from(y[i]);
            h[i] = q * (1.0 - q);
        }
        let rows: Vec<u32> = if n_sample == n {
            all_rows.clone()
        } else {
            let mut r: Vec<u32> = index::sample(&mut sample_rng, n, n_sample).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        };
        let t = tree::grow(&data, &g, &h, &rows, &grow);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += p.learning_rate * t.eval(|f| x.columns()[f][i]);
        }
        train_loss.push(log_loss(&margin, y));
        trees.push(t);
    }
    Ok(GbdtModel {
        schema_version: MODEL_SCHEMA_VERSION,
        feature_names: x.names().to_vec(),
        base_score,
        learning_rate: p.learning_rate,
        trees,
        train_loss,
    })
}

impl GbdtModel {
    /// Column indices of the model features in `x`, matched by name.
    fn resolve(&self, x: &FeatureMatrix) -> Result<Vec<usize>, GbdtError> {
        self.feature_names.iter().map(|n| x.position(n).ok_or_else(|| GbdtError::MissingColumn(n.clone()))).collect()
    }

    /// Raw margins (log-odds) per row.
    pub fn predict_margin(&self, x: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        let cols = self.resolve(x)?;
        let c: Vec<&[f64]> = cols.iter().map(|&j| x.column(j)).collect();
        Ok((0..x.n_rows())
            .map(|i| self.base_score + self.trees.iter().map(|t| self.learning_rate * t.eval(|f| c[f][i])).sum::<f64>())
            .collect())
    }

    /// Default probability per row.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        Ok(self.predict_margin(x)?.into_iter().map(sigmoid).collect())
    }

    /// Default probability of one row given as `(name, value)` lookups.
    pub fn predict_row(&self, value: impl Fn(&str) -> Option<f64>) -> Result<f64, GbdtError> {
        let row: Vec<f64> = self
            .feature_names
            .iter()
            .map(|n| value(n).ok_or_else(|| GbdtError::MissingColumn(n.clone())))
            .collect::<Result<_, _>>()?;
        let z = self.base_score + self.trees.iter().map(|t| self.learning_rate * t.eval(|f| row[f])).sum::<f64>();
        Ok(sigmoid(z))
    }

    /// Checks the structural invariants of a loaded model.
    pub fn validate(&self) -> Result<(), GbdtError> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(GbdtError::SchemaVersion(self.schema_version));
        }
        if !self.base_score.is_finite() {
            return Err(GbdtError::InvalidModel("base score is not finite".into()));
        }
        let nf = self.feature_names.len();
        let mut err = None;
        for t in &self.trees {
            t.walk(&mut |node| match node {
                TreeNode::Leaf { leaf } if !leaf.is_finite() => err = Some("non-finite leaf weight".to_string()),
                TreeNode::Split { feature, .. } if *feature >= nf => {
                    err = Some(format!("split on feature {feature} of {nf}"))
                }
                _ => {}
            });
        }
        match err {
            Some(e) => Err(GbdtError::InvalidModel(e)),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String, GbdtError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, GbdtError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(ver) if ver == u64::from(MODEL_SCHEMA_VERSION) => {}
            Some(ver) => return Err(GbdtError::SchemaVersion(ver as u32)),
            None => return Err(GbdtError::InvalidModel("missing schema_version".into())),
        }
        let m: Self = serde_json::from_value(v)?;
        m.validate()?;
        Ok(m)
    }
}
