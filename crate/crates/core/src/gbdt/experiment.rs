//! Repeated stratified train/test splits with per-run metrics.

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{fit_gbdt, GbdtError, GbdtParams};
use crate::eval::{mean_std, savings, savings_at_min_cost, CostFields};
use crate::rng;
use crate::table::FeatureMatrix;

const MAX_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub n_runs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Probability threshold above which a user is predicted to default.
    pub threshold: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { n_runs: 5, train_fraction: 0.7, seed: 0, threshold: 0.5 }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<(), GbdtError> {
        if self.n_runs == 0 {
            return Err(GbdtError::InvalidParams("n_runs must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GbdtError::InvalidParams("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(GbdtError::InvalidParams("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub auc: f64,
    pub cost: f64,
    pub cost_baseline: f64,
    pub savings: f64,
    /// Savings at the cost-minimizing threshold of the test split.
    pub min_cost_savings: f64,
    pub min_cost_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, std, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub model: String,
    pub runs: Vec<RunMetrics>,
    pub auc: Summary,
    pub cost: Summary,
    pub savings: Summary,
    pub min_cost_savings: Summary,
    pub protocol: Protocol,
    /// Echo of the model configuration.
    pub config: serde_json::Value,
}

/// Splits row indices into train and test sets, class by class, so both keep
/// the label proportions. Both sets are returned in ascending order. Draws
/// again (up to a fixed budget) when the test set would hold a single class.
pub fn stratified_split(
    y: &[u8],
    train_fraction: f64,
    seed: u64,
    run: usize,
) -> Result<(Vec<usize>, Vec<usize>), GbdtError> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::stream(seed, &format!("split/{run}/{attempt}"));
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
            idx.shuffle(&mut r);
            let k = (train_fraction * idx.len() as f64).round() as usize;
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        let pos = test.iter().filter(|&&i| y[i] == 1).count();
        if pos > 0 && pos < test.len() {
            return Ok((train, test));
        }
        warn!("run {run}: test split holds a single class, drawing again");
    }
    Err(GbdtError::Resample(MAX_ATTEMPTS))
}

/// Runs the protocol with any scorer. `fit_score(run, train, test)` returns
/// one score per test index.
pub fn repeated_split_experiment<F, E>(
    model: &str,
    config: serde_json::Value,
    y: &[u8],
    cost: &CostFields,
    protocol: &Protocol,
    mut fit_score: F,
) -> Result<ExperimentResult, E>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<Vec<f64>, E>,
    E: From<GbdtError>,
{
    protocol.validate()?;
    if cost.len() != y.len() {
        return Err(GbdtError::LengthMismatch { rows: cost.len(), labels: y.len() }.into());
    }
    let mut runs = Vec::with_capacity(protocol.n_runs);
    for run in 0..protocol.n_runs {
        let (train, test) = stratified_split(y, protocol.train_fraction, protocol.seed, run)?;
        let scores = fit_score(run, &train, &test)?;
        let y_test: Vec<u8> = test.iter().map(|&i| y[i]).collect();
        let c_test = cost.subset(&test);
        let fixed = savings(&scores, &y_test, &c_test, protocol.threshold).map_err(GbdtError::from)?;
        let tuned = savings_at_min_cost(&scores, &y_test, &c_test).map_err(GbdtError::from)?;
        runs.push(RunMetrics {
            run,
            train_size: train.len(),
            test_size: test.len(),
            auc: fixed.auc,
            cost: fixed.cost,
            cost_baseline: fixed.cost_baseline,
            savings: fixed.savings,
            min_cost_savings: tuned.savings,
            min_cost_threshold: tuned.threshold,
        });
    }
    let col = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(ExperimentResult {
        model: model.to_string(),
        auc: col(|r| r.auc),
        cost: col(|r| r.cost),
        savings: col(|r| r.savings),
        min_cost_savings: col(|r| r.min_cost_savings),
        protocol: protocol.clone(),
        config,
        runs,
    })
}

/// Fits and scores a boosted model on each split. The tree seed of run `k`
/// is derived from `params.seed` and `k`.
pub fn bootstrap_experiment(
    x: &FeatureMatrix,
    y: &[u8],
    cost: &CostFields,
    protocol: &Protocol,
    params: &GbdtParams,
) -> Result<ExperimentResult, GbdtError> {
    params.validate()?;
    if x.n_rows() != y.len() {
        return Err(GbdtError::LengthMismatch { rows: x.n_rows(), labels: y.len() });
    }
    let config = serde_json::to_value(params)?;
    repeated_split_experiment("gbdt", config, y, cost, protocol, |run, train, test| {
        let p = GbdtParams { seed: rng::sub_seed(params.seed, &format!("gbdt/run/{run}")), ..params.clone() };
        let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let model = fit_gbdt(&x.select_rows(train), &y_train, &p)?;
        model.predict(&x.select_rows(test))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_deterministic() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 5 == 0)).collect();
        let (tr, te) = stratified_split(&y, 0.7, 3, 0).unwrap();
        assert_eq!(tr.len() + te.len(), 100);
        assert_eq!(tr.iter().filter(|&&i| y[i] == 1).count(), 14);
        assert_eq!(stratified_split(&y, 0.7, 3, 0).unwrap(), (tr.clone(), te));
        assert_ne!(stratified_split(&y, 0.7, 3, 1).unwrap().0, tr);
    }

    #[test]
    fn tiny_minority_cannot_be_split() {
        let mut y = vec![0u8; 10];
        y[0] = 1;
        assert!(matches!(stratified_split(&y, 0.7, 0, 0), Err(GbdtError::Resample(_))));
    }

    #[test]
    fn protocol_validation() {
        assert!(Protocol::default().validate().is_ok());
        assert!(Protocol { train_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(Protocol { n_runs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn summary_bounds() {
        let s = Summary::of(&[0.6, 0.8, 0.7]);
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert_eq!((s.min, s.max), (0.6, 0.8));
    }
}
