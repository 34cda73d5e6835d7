//! Pipeline stages and the full experiment run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{ExperimentReport, RunManifest, Section, VariantRecord, VariantStatus};
use super::{PipelineError, ResolvedConfig};
use crate::datagen::{
    generate_relation_edges, generate_users, save_dataset, Dataset, DatasetManifest, RelationKind, RelationManifest,
    FORMAT_VERSION,
};
use crate::eval::{savings, savings_at_min_cost, CostFields, MetricReport};
use crate::features::{
    assemble_training_table, graph_feature_block, read_block_csv, write_block_csv, BlockDiagnostics, GraphFeatureBlock,
};
use crate::gbdt::{bootstrap_experiment, fit_gbdt, stratified_split, GbdtModel, GbdtParams};
use crate::gnn::{gnn_experiment, train_gnn, GnnGraph, GnnModel, LayerKind, Masks, TrainConfig, Trained};
use crate::graph::{Graph, NodeKind};
use crate::rng::sub_seed;
use crate::table::{FeatureMatrix, UserTable};

/// Paths inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn block_csv(&self, kind: RelationKind) -> PathBuf {
        self.features().join(format!("{kind}.csv"))
    }

    pub fn create(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))
    }
}

/// Append-only JSONL event log. Events carry no timestamps so that logs of
/// identical runs are identical.
pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self, PipelineError> {
        let file = File::create(path).map_err(PipelineError::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn append(path: &Path) -> Result<Self, PipelineError> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(PipelineError::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn event(&mut self, stage: &str, detail: serde_json::Value) -> Result<(), PipelineError> {
        info!("{stage}: {detail}");
        let line = serde_json::json!({ "stage": stage, "detail": detail });
        writeln!(self.out, "{line}").map_err(PipelineError::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<(), PipelineError> {
        self.out.flush().map_err(PipelineError::io(&self.path))
    }
}

/// Draws the user table and every enabled relation, and saves them under
/// `data/`.
pub fn stage_generate(cfg: &ResolvedConfig, layout: &Layout, log: &mut RunLog) -> Result<Dataset, PipelineError> {
    let users = generate_users(&cfg.users, cfg.users_seed)?;
    let mut relations = Vec::with_capacity(cfg.relations.len());
    for (spec, &seed) in cfg.relations.iter().zip(&cfg.relation_seeds) {
        let edges = generate_relation_edges(&users, spec, seed)?;
        log.event("generate", serde_json::json!({ "relation": spec.kind, "edges": edges.len() }))?;
        relations.push((spec.clone(), edges));
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        root_seed: cfg.seed,
        users_seed: cfg.users_seed,
        generator: Some(cfg.users.clone()),
        columns: users.features.names().to_vec(),
        relations: cfg
            .relations
            .iter()
            .zip(&cfg.relation_seeds)
            .map(|(s, &seed)| RelationManifest::new(s, seed))
            .collect(),
    };
    let labeled = users.labeled_indices();
    let defaults = labeled.iter().filter(|&&i| users.y[i] == 1).count();
    log.event("generate", serde_json::json!({ "users": users.len(), "labeled": labeled.len(), "defaults": defaults }))?;
    let data = Dataset { manifest, users, relations };
    save_dataset(&layout.data(), &data)?;
    Ok(data)
}

/// Graph of relation `kind` as used for feature extraction.
fn relation_graph(data: &Dataset, kind: RelationKind) -> Result<Graph, PipelineError> {
    let (spec, edges) = data.edges(kind).ok_or_else(|| PipelineError::MissingBlock(kind.to_string()))?;
    Ok(Graph::build(edges, &spec.graph_spec())?)
}

/// Graph of relation `kind` with every user registered first, so that node
/// `i` is user `i` whether or not it has edges.
pub fn build_user_graph(data: &Dataset, kind: RelationKind) -> Result<Graph, PipelineError> {
    let (spec, edges) = data.edges(kind).ok_or_else(|| PipelineError::MissingBlock(kind.to_string()))?;
    let nodes: Vec<(NodeKind, &str)> = data.users.keys.iter().map(|k| (NodeKind::User, k.as_str())).collect();
    Ok(Graph::build_with_nodes(&nodes, edges, &spec.graph_spec())?)
}

/// A relation and its feature block, or the error that stopped it.
pub type BlockOutcome = (RelationKind, Result<GraphFeatureBlock, String>);

/// P2P operators, base features, labels and cost fields of labeled nodes.
pub type GnnInputs = (GnnGraph, Array2<f64>, Vec<Option<u8>>, CostFields);

/// Feature blocks of every configured relation. A block that fails is
/// returned as its error message so that other blocks still complete.
pub fn compute_blocks(cfg: &ResolvedConfig, data: &Dataset) -> Result<Vec<BlockOutcome>, PipelineError> {
    let mut out = Vec::with_capacity(cfg.blocks.len());
    for &kind in &cfg.blocks {
        let g = relation_graph(data, kind)?;
        let block = graph_feature_block(&g, data.users.features_view(), &cfg.block_config(kind));
        out.push((kind, block.map_err(|e| e.to_string())));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    relation: RelationKind,
    diagnostics: Option<BlockDiagnostics>,
    error: Option<String>,
}

/// Computes the feature blocks and writes `features/<kind>.csv` and
/// `features/diagnostics.json`.
pub fn stage_features(
    cfg: &ResolvedConfig,
    data: &Dataset,
    layout: &Layout,
    log: &mut RunLog,
) -> Result<Vec<BlockOutcome>, PipelineError> {
    layout.create(&layout.features())?;
    let blocks = compute_blocks(cfg, data)?;
    let mut entries = Vec::with_capacity(blocks.len());
    for (kind, block) in &blocks {
        match block {
            Ok(b) => {
                write_block_csv(&layout.block_csv(*kind), b)?;
                log.event("features", serde_json::to_value(&b.diagnostics).expect("diagnostics serialize"))?;
                entries.push(BlockEntry { relation: *kind, diagnostics: Some(b.diagnostics.clone()), error: None });
            }
            Err(e) => {
                warn!("feature block {kind} failed: {e}");
                log.event("features", serde_json::json!({ "relation": kind, "error": e }))?;
                entries.push(BlockEntry { relation: *kind, diagnostics: None, error: Some(e.clone()) });
            }
        }
    }
    let path = layout.features().join("diagnostics.json");
    let json = serde_json::to_string_pretty(&entries).map_err(PipelineError::json(&path))?;
    fs::write(&path, json + "\n").map_err(PipelineError::io(&path))?;
    Ok(blocks)
}

/// Reads the configured blocks back from `features/`.
pub fn load_blocks(cfg: &ResolvedConfig, layout: &Layout) -> Result<Vec<GraphFeatureBlock>, PipelineError> {
    cfg.blocks
        .iter()
        .map(|&kind| {
            let path = layout.block_csv(kind);
            if !path.exists() {
                return Err(PipelineError::MissingBlock(kind.to_string()));
            }
            Ok(read_block_csv(&path)?)
        })
        .collect()
}

/// Tabular variants in report order: the base table, the base table plus
/// each block, and the base table plus all blocks when there are several.
pub fn tabular_variants(blocks: &[RelationKind]) -> Vec<(String, Vec<RelationKind>)> {
    let mut out = vec![("base".to_string(), Vec::new())];
    out.extend(blocks.iter().map(|&k| (format!("base+{k}"), vec![k])));
    if blocks.len() > 1 {
        out.push(("base+all".to_string(), blocks.to_vec()));
    }
    out
}

/// Rows of labeled users: features, labels and cost fields.
pub fn labeled_problem(
    users: &UserTable,
    x: &FeatureMatrix,
    cfg: &ResolvedConfig,
) -> Result<(FeatureMatrix, Vec<u8>, CostFields), PipelineError> {
    let idx = users.labeled_indices();
    let y = idx.iter().map(|&i| users.y[i]).collect();
    let cost = labeled_cost(users, &idx, cfg)?;
    Ok((x.select_rows(&idx), y, cost))
}

fn labeled_cost(users: &UserTable, idx: &[usize], cfg: &ResolvedConfig) -> Result<CostFields, PipelineError> {
    let cl = idx.iter().map(|&i| users.credit_line[i]).collect();
    let r = idx.iter().map(|&i| users.profit[i]).collect();
    Ok(CostFields::new(cl, r, cfg.lgd, cfg.alt_cost_fp)?)
}

/// Train and test rows of the first protocol run over `y`.
pub fn split_zero(y: &[u8], cfg: &ResolvedConfig) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    Ok(stratified_split(y, cfg.protocol.train_fraction, cfg.protocol.seed, 0)?)
}

fn variant_table(
    data: &Dataset,
    blocks: &[GraphFeatureBlock],
    kinds: &[RelationKind],
) -> Result<FeatureMatrix, PipelineError> {
    let chosen = kinds
        .iter()
        .map(|k| {
            blocks
                .iter()
                .find(|b| b.diagnostics.relation == k.as_str())
                .ok_or_else(|| PipelineError::MissingBlock(k.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_training_table(&data.users, &chosen)?)
}

/// Node features, labels and cost fields for the GNN grid on the P2P graph.
/// Cost fields follow the labeled nodes in ascending order.
pub fn gnn_inputs(cfg: &ResolvedConfig, data: &Dataset) -> Result<GnnInputs, PipelineError> {
    let g = GnnGraph::new(&build_user_graph(data, RelationKind::P2p)?);
    let f = &data.users.features;
    let x = Array2::from_shape_fn((f.n_rows(), f.n_cols()), |(i, j)| f.get(i, j));
    let labels = (0..data.users.len()).map(|i| data.users.label(i)).collect();
    let cost = labeled_cost(&data.users, &data.users.labeled_indices(), cfg)?;
    Ok((g, x, labels, cost))
}

fn record(
    section: Section,
    variant: String,
    order: usize,
    n_features: usize,
    outcome: Result<crate::gbdt::ExperimentResult, String>,
) -> VariantRecord {
    match outcome {
        Ok(result) => VariantRecord {
            section,
            variant,
            order,
            n_features,
            status: VariantStatus::Ok,
            error: None,
            result: Some(result),
        },
        Err(e) => {
            warn!("{} variant {variant} failed: {e}", section.as_str());
            VariantRecord {
                section,
                variant,
                order,
                n_features,
                status: VariantStatus::Failed,
                error: Some(e),
                result: None,
            }
        }
    }
}

fn run_tabular_grid(
    cfg: &ResolvedConfig,
    data: &Dataset,
    blocks: &[BlockOutcome],
    log: &mut RunLog,
) -> Result<Vec<VariantRecord>, PipelineError> {
    let ok: Vec<GraphFeatureBlock> = blocks.iter().filter_map(|(_, b)| b.as_ref().ok().cloned()).collect();
    let mut out = Vec::new();
    for (order, (name, kinds)) in tabular_variants(&cfg.blocks).into_iter().enumerate() {
        let n_features = data.users.features.n_cols() + kinds.len() * crate::features::BLOCK_COLUMNS.len();
        let failed_block = kinds.iter().find_map(|k| {
            blocks
                .iter()
                .find(|(b, _)| b == k)
                .and_then(|(_, r)| r.as_ref().err())
                .map(|e| format!("feature block {k}: {e}"))
        });
        let outcome = match failed_block {
            Some(e) => Err(e),
            None => variant_table(data, &ok, &kinds)
                .and_then(|x| labeled_problem(&data.users, &x, cfg))
                .and_then(|(x, y, cost)| Ok(bootstrap_experiment(&x, &y, &cost, &cfg.protocol, &cfg.gbdt)?))
                .map_err(|e| e.to_string()),
        };
        let rec = record(Section::Tabular, name, order, n_features, outcome);
        log_record(log, &rec)?;
        out.push(rec);
    }
    Ok(out)
}

fn run_gnn_grid(cfg: &ResolvedConfig, data: &Dataset, log: &mut RunLog) -> Result<Vec<VariantRecord>, PipelineError> {
    if cfg.gnn_layers.is_empty() {
        return Ok(Vec::new());
    }
    let n_features = data.users.features.n_cols();
    let inputs = gnn_inputs(cfg, data).map_err(|e| e.to_string());
    let mut out = Vec::new();
    for (order, &layer) in cfg.gnn_layers.iter().enumerate() {
        let outcome = inputs.as_ref().map_err(Clone::clone).and_then(|(g, x, labels, cost)| {
            gnn_experiment(g, x, labels, cost, &cfg.protocol, &cfg.arch(layer), &cfg.gnn_train)
                .map_err(|e| e.to_string())
        });
        let rec = record(Section::Gnn, layer.to_string(), order, n_features, outcome);
        log_record(log, &rec)?;
        out.push(rec);
    }
    Ok(out)
}

fn log_record(log: &mut RunLog, rec: &VariantRecord) -> Result<(), PipelineError> {
    let detail = match &rec.result {
        Some(r) => serde_json::json!({
            "variant": rec.variant,
            "n_features": rec.n_features,
            "auc": r.auc.mean,
            "savings": r.savings.mean,
        }),
        None => serde_json::json!({ "variant": rec.variant, "error": rec.error }),
    };
    log.event(rec.section.as_str(), detail)
}

/// Everything [`run_experiment`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub manifest: RunManifest,
}

/// Runs every stage into `out` and writes the report and manifest. Variant
/// failures are recorded in the report; only setup and I/O errors abort.
/// Variants run one after another, so `deterministic` only gets recorded.
pub fn run_experiment(cfg: &ResolvedConfig, out: &Path, deterministic: bool) -> Result<RunOutcome, PipelineError> {
    let layout = Layout::new(out);
    for dir in [layout.root.clone(), layout.logs()] {
        layout.create(&dir)?;
    }
    let results = layout.results();
    if results.exists() {
        fs::remove_dir_all(&results).map_err(PipelineError::io(&results))?;
    }
    layout.create(&results)?;

    let mut log = RunLog::create(&layout.logs().join("run.jsonl"))?;
    let config_hash = cfg.hash();
    log.event("config", serde_json::json!({ "hash": config_hash, "seed": cfg.seed }))?;

    let data = stage_generate(cfg, &layout, &mut log)?;
    let blocks = stage_features(cfg, &data, &layout, &mut log)?;
    let tabular = run_tabular_grid(cfg, &data, &blocks, &mut log)?;
    let gnn = run_gnn_grid(cfg, &data, &mut log)?;

    for rec in tabular.iter().chain(&gnn) {
        let path = results.join(rec.file_name());
        let json = serde_json::to_string_pretty(rec).map_err(PipelineError::json(&path))?;
        fs::write(&path, json + "\n").map_err(PipelineError::io(&path))?;
    }
    let report = ExperimentReport { config_hash: config_hash.clone(), seed: cfg.seed, tabular, gnn };
    log.event("report", serde_json::json!({ "variants": report.rows().count(), "failed": report.n_failed() }))?;
    log.flush()?;
    drop(log);
    report.write(&layout.root)?;

    let manifest = RunManifest {
        config_hash,
        seed: cfg.seed,
        deterministic,
        seeds: stage_seeds(cfg),
        files: file_digests(&layout.root)?,
    };
    let path = layout.root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(PipelineError::json(&path))?;
    fs::write(&path, json + "\n").map_err(PipelineError::io(&path))?;
    Ok(RunOutcome { report, manifest })
}

fn stage_seeds(cfg: &ResolvedConfig) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    seeds.insert("root".to_string(), cfg.seed);
    seeds.insert("users".to_string(), cfg.users_seed);
    for (s, &seed) in cfg.relations.iter().zip(&cfg.relation_seeds) {
        seeds.insert(format!("relations/{}", s.kind), seed);
    }
    for (k, &seed) in cfg.blocks.iter().zip(&cfg.feature_seeds) {
        seeds.insert(format!("features/{k}"), seed);
    }
    seeds.insert("protocol".to_string(), cfg.protocol.seed);
    seeds.insert("gbdt".to_string(), cfg.gbdt.seed);
    seeds.insert("gnn".to_string(), cfg.gnn_train.seed);
    seeds
}

fn file_digests(root: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(PipelineError::io(&dir))? {
            let path = entry.map_err(PipelineError::io(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("walk stays under root");
            if rel == Path::new("manifest.json") {
                continue;
            }
            let bytes = fs::read(&path).map_err(PipelineError::io(&path))?;
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}

/// Fits one tabular variant on the training rows of the first protocol run,
/// with the same seed that run uses in the grid.
pub fn train_gbdt_variant(
    cfg: &ResolvedConfig,
    data: &Dataset,
    blocks: &[GraphFeatureBlock],
    variant: &str,
) -> Result<GbdtModel, PipelineError> {
    let (_, kinds) = tabular_variants(&cfg.blocks)
        .into_iter()
        .find(|(name, _)| name == variant)
        .ok_or_else(|| PipelineError::UnknownVariant(variant.to_string()))?;
    let x = variant_table(data, blocks, &kinds)?;
    let (x, y, _) = labeled_problem(&data.users, &x, cfg)?;
    let (train, _) = split_zero(&y, cfg)?;
    let params = GbdtParams { seed: sub_seed(cfg.gbdt.seed, "gbdt/run/0"), ..cfg.gbdt.clone() };
    let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    Ok(fit_gbdt(&x.select_rows(&train), &y_train, &params)?)
}

/// Trains one GNN layer type on the training nodes of the first protocol
/// run, with the same seed that run uses in the grid.
pub fn train_gnn_layer(cfg: &ResolvedConfig, data: &Dataset, layer: LayerKind) -> Result<Trained, PipelineError> {
    let (g, x, labels, _) = gnn_inputs(cfg, data)?;
    let masks = gnn_masks(cfg, &labels)?;
    let full: Vec<u8> = labels.iter().map(|l| l.unwrap_or(0)).collect();
    let train = TrainConfig { seed: sub_seed(cfg.gnn_train.seed, "gnn/run/0"), ..cfg.gnn_train.clone() };
    Ok(train_gnn(&g, &x, &full, &masks, &cfg.arch(layer), &train)?)
}

fn gnn_masks(cfg: &ResolvedConfig, labels: &[Option<u8>]) -> Result<Masks, PipelineError> {
    let nodes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let y: Vec<u8> = nodes.iter().map(|&i| labels[i].expect("labeled")).collect();
    let (train, test) = split_zero(&y, cfg)?;
    Ok(Masks { train: train.iter().map(|&i| nodes[i]).collect(), test: test.iter().map(|&i| nodes[i]).collect() })
}

/// Test-split metrics of a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub model: String,
    pub test_size: usize,
    pub at_threshold: MetricReport,
    pub at_min_cost: MetricReport,
}

/// Scores a model file written by `train-gbdt` or `train-gnn` on the test
/// rows of the first protocol run.
pub fn evaluate_model(
    cfg: &ResolvedConfig,
    data: &Dataset,
    blocks: &[GraphFeatureBlock],
    model_path: &Path,
) -> Result<EvalOutcome, PipelineError> {
    let text = fs::read_to_string(model_path).map_err(PipelineError::io(model_path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(PipelineError::json(model_path))?;
    let (name, scores, y, cost) = if value.get("trees").is_some() {
        let model = GbdtModel::from_json(&text)?;
        let refs: Vec<&GraphFeatureBlock> = blocks.iter().collect();
        let x = assemble_training_table(&data.users, &refs)?;
        let (x, y, cost) = labeled_problem(&data.users, &x, cfg)?;
        let (_, test) = split_zero(&y, cfg)?;
        let scores = model.predict(&x.select_rows(&test))?;
        ("gbdt".to_string(), scores, test.iter().map(|&i| y[i]).collect::<Vec<_>>(), cost.subset(&test))
    } else if value.get("network").is_some() {
        let model = GnnModel::from_json(&text)?;
        let (g, x, labels, cost) = gnn_inputs(cfg, data)?;
        let nodes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
        let y: Vec<u8> = nodes.iter().map(|&i| labels[i].expect("labeled")).collect();
        let (_, test) = split_zero(&y, cfg)?;
        let p = model.predict(&g, &x)?;
        let scores = test.iter().map(|&i| p[nodes[i]]).collect();
        (format!("gnn_{}", model.arch.layer), scores, test.iter().map(|&i| y[i]).collect(), cost.subset(&test))
    } else {
        return Err(PipelineError::UnknownModel(model_path.to_path_buf()));
    };
    Ok(EvalOutcome {
        model: name,
        test_size: y.len(),
        at_threshold: savings(&scores, &y, &cost, cfg.protocol.threshold)?,
        at_min_cost: savings_at_min_cost(&scores, &y, &cost)?,
    })
}
