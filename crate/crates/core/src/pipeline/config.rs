//! Experiment configuration: the TOML file as written by a user and the
//! validated, fully resolved form every stage consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ConfigError;
use crate::datagen::{GenConfig, RelationKind, RelationSpec};
use crate::features::BlockConfig;
use crate::gbdt::{GbdtParams, Protocol};
use crate::gnn::{GnnArch, LayerKind, TrainConfig};
use crate::rng::sub_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed. Every stage seed is derived from it.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub users: Option<GenConfig>,
    #[serde(default)]
    pub graphs: GraphsConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub gbdt: GbdtConfig,
    #[serde(default)]
    pub gnn: GnnConfig,
    #[serde(default)]
    pub cost: CostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphsConfig {
    /// Homophily of every relation without an override.
    pub homophily: f64,
    pub enabled: Vec<String>,
    /// Per-relation overrides of the scale profile, keyed by kind.
    pub overrides: BTreeMap<String, RelationOverride>,
}

impl Default for GraphsConfig {
    fn default() -> Self {
        Self {
            homophily: 0.8,
            enabled: RelationKind::ALL.iter().map(|k| k.as_str().to_string()).collect(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationOverride {
    pub mean_degree: Option<f64>,
    pub entities: Option<usize>,
    pub homophily: Option<f64>,
    pub directed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// Relations whose feature block enters the tabular grid; all enabled
    /// relations when absent.
    pub blocks: Option<Vec<String>>,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    pub pagerank_damping: f64,
    pub pagerank_tol: f64,
    pub pagerank_max_iter: usize,
    pub louvain_resolution: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            blocks: None,
            eigen_tol: 1e-8,
            eigen_max_iter: 10_000,
            pagerank_damping: 0.85,
            pagerank_tol: 1e-10,
            pagerank_max_iter: 1000,
            louvain_resolution: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_runs: usize,
    pub train_fraction: f64,
    pub threshold: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = Protocol::default();
        Self { n_runs: p.n_runs, train_fraction: p.train_fraction, threshold: p.threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub gamma: f64,
    pub subsample: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        let p = GbdtParams::default();
        Self {
            n_trees: p.n_trees,
            learning_rate: p.learning_rate,
            max_depth: p.max_depth,
            min_child_weight: p.min_child_weight,
            l2_reg: p.l2_reg,
            gamma: p.gamma,
            subsample: p.subsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub enabled: bool,
    pub layers: Vec<LayerKind>,
    pub hidden: usize,
    pub k: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub class_weights: Option<[f64; 2]>,
}

impl Default for GnnConfig {
    fn default() -> Self {
        let a = GnnArch::default();
        let t = TrainConfig::default();
        Self {
            enabled: true,
            layers: LayerKind::ALL.to_vec(),
            hidden: a.hidden,
            k: a.k,
            heads: a.heads,
            leaky_slope: a.leaky_slope,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            momentum: t.momentum,
            class_weights: t.class_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub lgd: f64,
    /// False-positive cost; the median profit of the evaluated users when
    /// absent.
    pub alt_cost_fp: Option<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { lgd: 0.75, alt_cost_fp: None }
    }
}

/// Validated configuration with every stage seed derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub users: GenConfig,
    pub users_seed: u64,
    pub relations: Vec<RelationSpec>,
    pub relation_seeds: Vec<u64>,
    pub blocks: Vec<RelationKind>,
    pub features: FeaturesConfig,
    pub feature_seeds: Vec<u64>,
    pub protocol: Protocol,
    pub gbdt: GbdtParams,
    pub gnn_layers: Vec<LayerKind>,
    pub gnn_arch: GnnArch,
    pub gnn_train: TrainConfig,
    pub lgd: f64,
    pub alt_cost_fp: Option<f64>,
}

fn invalid(block: &'static str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid { block, msg: msg.to_string() }
}

fn parse_kind(name: &str) -> Result<RelationKind, ConfigError> {
    name.parse().map_err(|_| ConfigError::UnknownRelation(name.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// Checks every block and derives stage seeds. `seed_override` replaces
    /// the file's root seed.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<ResolvedConfig, ConfigError> {
        let seed = seed_override.or(self.seed).ok_or(ConfigError::MissingSeed)?;
        let users = self.users.clone().ok_or(ConfigError::MissingBlock("users"))?;
        users.validate().map_err(|e| invalid("users", e))?;

        let g = &self.graphs;
        if !(0.0..=1.0).contains(&g.homophily) {
            return Err(invalid("graphs", format!("homophily must lie in [0, 1], got {}", g.homophily)));
        }
        let mut enabled = Vec::new();
        for name in &g.enabled {
            let kind = parse_kind(name)?;
            if enabled.contains(&kind) {
                return Err(invalid("graphs", format!("relation `{name}` enabled twice")));
            }
            enabled.push(kind);
        }
        enabled.sort();
        for name in g.overrides.keys() {
            if !enabled.contains(&parse_kind(name)?) {
                return Err(invalid("graphs", format!("override for relation `{name}` which is not enabled")));
            }
        }
        let mut relations = Vec::with_capacity(enabled.len());
        for &kind in &enabled {
            let mut spec = RelationSpec::desk(kind, users.n_users, g.homophily);
            if let Some(o) = g.overrides.get(kind.as_str()) {
                spec.mean_degree = o.mean_degree.unwrap_or(spec.mean_degree);
                spec.entities = o.entities.or(spec.entities);
                spec.homophily = o.homophily.unwrap_or(spec.homophily);
                spec.directed = o.directed.unwrap_or(spec.directed);
            }
            spec.validate().map_err(|e| invalid("graphs", format!("{kind}: {e}")))?;
            relations.push(spec);
        }
        let relation_seeds = enabled.iter().map(|k| sub_seed(seed, &format!("relations/{k}"))).collect();

        let f = &self.features;
        let blocks: Vec<RelationKind> = match &f.blocks {
            None => enabled.clone(),
            Some(names) => {
                let mut set = BTreeSet::new();
                for name in names {
                    let kind = parse_kind(name)?;
                    if !enabled.contains(&kind) {
                        return Err(invalid("features", format!("block `{name}` needs its relation enabled")));
                    }
                    set.insert(kind);
                }
                set.into_iter().collect()
            }
        };
        if !(f.eigen_tol > 0.0 && f.pagerank_tol > 0.0) {
            return Err(invalid("features", "tolerances must be positive"));
        }
        if f.eigen_max_iter == 0 || f.pagerank_max_iter == 0 {
            return Err(invalid("features", "iteration limits must be positive"));
        }
        if !(f.pagerank_damping > 0.0 && f.pagerank_damping < 1.0) {
            return Err(invalid("features", "pagerank_damping must lie in (0, 1)"));
        }
        if !(f.louvain_resolution > 0.0) {
            return Err(invalid("features", "louvain_resolution must be positive"));
        }
        let feature_seeds = blocks.iter().map(|k| sub_seed(seed, &format!("features/{k}"))).collect();

        let p = &self.protocol;
        let protocol = Protocol {
            n_runs: p.n_runs,
            train_fraction: p.train_fraction,
            threshold: p.threshold,
            seed: sub_seed(seed, "protocol"),
        };
        protocol.validate().map_err(|e| invalid("protocol", e))?;

        let b = &self.gbdt;
        let gbdt = GbdtParams {
            n_trees: b.n_trees,
            learning_rate: b.learning_rate,
            max_depth: b.max_depth,
            min_child_weight: b.min_child_weight,
            l2_reg: b.l2_reg,
            gamma: b.gamma,
            subsample: b.subsample,
            seed: sub_seed(seed, "gbdt"),
        };
        gbdt.validate().map_err(|e| invalid("gbdt", e))?;

        let n = &self.gnn;
        let gnn_layers = if n.enabled { n.layers.clone() } else { Vec::new() };
        if !gnn_layers.is_empty() && !enabled.contains(&RelationKind::P2p) {
            return Err(invalid("gnn", "the GNN grid needs the p2p relation enabled"));
        }
        if gnn_layers.iter().enumerate().any(|(i, l)| gnn_layers[..i].contains(l)) {
            return Err(invalid("gnn", "layer listed twice"));
        }
        let gnn_arch = GnnArch {
            layer: gnn_layers.first().copied().unwrap_or(LayerKind::Gcn),
            hidden: n.hidden,
            out: 2,
            k: n.k,
            heads: n.heads,
            leaky_slope: n.leaky_slope,
        };
        gnn_arch.validate().map_err(|e| invalid("gnn", e))?;
        let gnn_train = TrainConfig {
            learning_rate: n.learning_rate,
            epochs: n.epochs,
            class_weights: n.class_weights,
            seed: sub_seed(seed, "gnn"),
            momentum: n.momentum,
        };
        gnn_train.validate().map_err(|e| invalid("gnn", e))?;

        let c = &self.cost;
        if !(c.lgd > 0.0 && c.lgd <= 1.0) {
            return Err(invalid("cost", format!("lgd must lie in (0, 1], got {}", c.lgd)));
        }
        if c.alt_cost_fp.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
            return Err(invalid("cost", "alt_cost_fp must be finite and non-negative"));
        }

        Ok(ResolvedConfig {
            seed,
            users_seed: sub_seed(seed, "users"),
            users,
            relations,
            relation_seeds,
            blocks,
            features: FeaturesConfig { blocks: None, ..f.clone() },
            feature_seeds,
            protocol,
            gbdt,
            gnn_layers,
            gnn_arch,
            gnn_train,
            lgd: c.lgd,
            alt_cost_fp: c.alt_cost_fp,
        })
    }
}

impl ResolvedConfig {
    /// SHA-256 of the canonical JSON form. The output directory is not part
    /// of the resolved config, so moving a run does not change its hash.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn relation(&self, kind: RelationKind) -> Option<(&RelationSpec, u64)> {
        self.relations.iter().zip(&self.relation_seeds).find(|(s, _)| s.kind == kind).map(|(s, &seed)| (s, seed))
    }

    pub fn block_config(&self, kind: RelationKind) -> BlockConfig {
        let i = self.blocks.iter().position(|&k| k == kind);
        let seed = i.map_or_else(|| sub_seed(self.seed, &format!("features/{kind}")), |i| self.feature_seeds[i]);
        let f = &self.features;
        let mut cfg = BlockConfig::new(kind.as_str(), seed);
        cfg.eigen.tol = f.eigen_tol;
        cfg.eigen.max_iter = f.eigen_max_iter;
        cfg.pagerank.damping = f.pagerank_damping;
        cfg.pagerank.tol = f.pagerank_tol;
        cfg.pagerank.max_iter = f.pagerank_max_iter;
        cfg.resolution = f.louvain_resolution;
        cfg
    }

    pub fn arch(&self, layer: LayerKind) -> GnnArch {
        GnnArch { layer, ..self.gnn_arch.clone() }
    }
}
