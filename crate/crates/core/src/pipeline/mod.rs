//! Config-driven experiment driver: generation, graph features, the tabular
//! and GNN grids, and the report files.
//!
//! An output directory holds:
//!
//! ```text
//! data/                 users.csv, edges_<kind>.csv, manifest.json
//! features/             <kind>.csv, diagnostics.json
//! models/               single models from train-gbdt / train-gnn
//! results/              one record per grid variant
//! logs/run.jsonl        stage events
//! logs/gnn_<layer>.jsonl
//! report.json, report.csv, manifest.json
//! ```

mod config;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{
    CostConfig, ExperimentConfig, FeaturesConfig, GbdtConfig, GnnConfig, GraphsConfig, ProtocolConfig,
    RelationOverride, ResolvedConfig,
};
pub use report::{
    render_report, ExperimentReport, RunManifest, Section, VariantRecord, VariantStatus, REPORT_CSV_HEADER,
};
pub use run::{
    build_user_graph, compute_blocks, evaluate_model, gnn_inputs, labeled_problem, load_blocks, run_experiment,
    split_zero, stage_features, stage_generate, tabular_variants, train_gbdt_variant, train_gnn_layer, BlockOutcome,
    EvalOutcome, GnnInputs, Layout, RunLog, RunOutcome,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config is missing the root `seed` (set it in the file or pass --seed)")]
    MissingSeed,
    #[error("config is missing the required [{0}] block")]
    MissingBlock(&'static str),
    #[error("unknown relation kind `{0}` (expected one of p2p, cc, dv, bin, geo)")]
    UnknownRelation(String),
    #[error("invalid [{block}] block: {msg}")]
    Invalid { block: &'static str, msg: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("feature block for `{0}` is unavailable; run the features stage")]
    MissingBlock(String),
    #[error("unrecognized model file {0}")]
    UnknownModel(PathBuf),
    #[error(transparent)]
    Data(#[from] crate::datagen::DataError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Gbdt(#[from] crate::gbdt::GbdtError),
    #[error(transparent)]
    Gnn(#[from] crate::gnn::GnnError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| Self::Json { path, source }
    }
}
