//! Synthetic user population and relation networks with planted label
//! homophily.
//!
//! Labels are drawn first; a latent risk score built from the label then
//! drives a subset of "signal" feature columns. Relation edges prefer
//! same-label endpoints with probability set by the homophily knob, so graph
//! features carry information about a user's label through their neighbors.

mod io;

pub use io::{load_dataset, save_dataset, Dataset, DatasetManifest, RelationManifest, FORMAT_VERSION};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, GraphSpec, NodeKind};
use crate::rng::{self, Rng};
use crate::table::{FeatureMatrix, UserTable};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("n_features must be at least 4 (neighbor-average source columns), got {0}")]
    TooFewFeatures(usize),
    #[error("default_rate must lie in (0, 1), got {0}")]
    BadDefaultRate(f64),
    #[error("labeled_fraction must lie in (0, 1], got {0}")]
    BadLabeledFraction(f64),
    #[error("need at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("homophily must lie in [0, 1], got {0}")]
    BadHomophily(f64),
    #[error("mean degree must be positive, got {0}")]
    BadMeanDegree(f64),
    #[error("relation {0} needs a positive entity count")]
    NoEntities(RelationKind),
    #[error("relation {0} takes no entity count")]
    UnexpectedEntities(RelationKind),
    #[error("could not place {wanted} edges for {kind} (placed {placed}); the label pools are too small")]
    Saturated { kind: RelationKind, wanted: usize, placed: usize },
    #[error("unknown relation kind `{0}`")]
    UnknownRelationKind(String),
    #[error("dataset manifest not found at {0}")]
    MissingManifest(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("unsupported dataset format version {0}")]
    FormatVersion(u32),
    #[error("malformed csv {file}: {msg}")]
    MalformedCsv { file: String, msg: String },
    #[error("{file} line {line}: expected {expected} columns, found {found}")]
    ColumnCount { file: String, line: u64, expected: usize, found: usize },
    #[error("{file}: header does not match manifest columns")]
    HeaderMismatch { file: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Base columns averaged over graph neighborhoods: payment-error cancellation
/// rate, credit-card payment rate, maximum card score and prime flag.
pub const NEIGHBOR_SOURCE_COLUMNS: [&str; 4] = ["f0", "f1", "f2", "f3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_users: usize,
    #[serde(default = "defaults::default_rate")]
    pub default_rate: f64,
    #[serde(default = "defaults::n_features")]
    pub n_features: usize,
    #[serde(default = "defaults::labeled_fraction")]
    pub labeled_fraction: f64,
    /// Number of base columns driven by the latent risk score.
    #[serde(default = "defaults::signal_columns")]
    pub signal_columns: usize,
    /// Shift of the latent risk score between defaulters and payers, in noise
    /// standard deviations.
    #[serde(default = "defaults::signal_strength")]
    pub signal_strength: f64,
    /// Standard deviation of per-column noise around the latent score.
    #[serde(default = "defaults::column_noise")]
    pub column_noise: f64,
    /// Parameters of the log-normal credit line distribution.
    #[serde(default = "defaults::credit_line_log_mean")]
    pub credit_line_log_mean: f64,
    #[serde(default = "defaults::credit_line_log_sd")]
    pub credit_line_log_sd: f64,
    /// Profit r_i as a fixed fraction of the credit line.
    #[serde(default = "defaults::profit_fraction")]
    pub profit_fraction: f64,
}

mod defaults {
    pub fn default_rate() -> f64 {
        0.129
    }
    pub fn n_features() -> usize {
        149
    }
    pub fn labeled_fraction() -> f64 {
        1.0
    }
    pub fn signal_columns() -> usize {
        20
    }
    pub fn signal_strength() -> f64 {
        0.8
    }
    pub fn column_noise() -> f64 {
        1.0
    }
    pub fn credit_line_log_mean() -> f64 {
        7.0
    }
    pub fn credit_line_log_sd() -> f64 {
        0.6
    }
    pub fn profit_fraction() -> f64 {
        0.1
    }
}

impl GenConfig {
    pub fn new(n_users: usize) -> Self {
        Self {
            n_users,
            default_rate: defaults::default_rate(),
            n_features: defaults::n_features(),
            labeled_fraction: defaults::labeled_fraction(),
            signal_columns: defaults::signal_columns(),
            signal_strength: defaults::signal_strength(),
            column_noise: defaults::column_noise(),
            credit_line_log_mean: defaults::credit_line_log_mean(),
            credit_line_log_sd: defaults::credit_line_log_sd(),
            profit_fraction: defaults::profit_fraction(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_users < 2 {
            return Err(DataError::TooFewUsers(self.n_users));
        }
        if !(self.default_rate > 0.0 && self.default_rate < 1.0) {
            return Err(DataError::BadDefaultRate(self.default_rate));
        }
        if self.n_features < 4 {
            return Err(DataError::TooFewFeatures(self.n_features));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(DataError::BadLabeledFraction(self.labeled_fraction));
        }
        Ok(())
    }
}

/// The five relation networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    P2p,
    Cc,
    Dv,
    Bin,
    Geo,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] =
        [RelationKind::P2p, RelationKind::Cc, RelationKind::Dv, RelationKind::Bin, RelationKind::Geo];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::P2p => "p2p",
            RelationKind::Cc => "cc",
            RelationKind::Dv => "dv",
            RelationKind::Bin => "bin",
            RelationKind::Geo => "geo",
        }
    }

    pub fn entity_kind(self) -> Option<NodeKind> {
        match self {
            RelationKind::P2p => None,
            RelationKind::Cc => Some(NodeKind::CreditCard),
            RelationKind::Dv => Some(NodeKind::Device),
            RelationKind::Bin => Some(NodeKind::Bin),
            RelationKind::Geo => Some(NodeKind::Geohash),
        }
    }

    pub fn is_bipartite(self) -> bool {
        self.entity_kind().is_some()
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DataError::UnknownRelationKind(s.to_string()))
    }
}

/// Generation parameters of one relation network.
///
/// `mean_degree` is the mean total degree of user nodes: in+out degree for
/// the user-to-user graph, number of linked entities for bipartite graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub kind: RelationKind,
    pub mean_degree: f64,
    pub entities: Option<usize>,
    pub homophily: f64,
    pub directed: bool,
}

impl RelationSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(DataError::BadHomophily(self.homophily));
        }
        if !(self.mean_degree > 0.0 && self.mean_degree.is_finite()) {
            return Err(DataError::BadMeanDegree(self.mean_degree));
        }
        match (self.kind.is_bipartite(), self.entities) {
            (true, None | Some(0)) => Err(DataError::NoEntities(self.kind)),
            (false, Some(_)) => Err(DataError::UnexpectedEntities(self.kind)),
            _ => Ok(()),
        }
    }

    pub fn graph_spec(&self) -> GraphSpec {
        match self.kind.entity_kind() {
            None => GraphSpec { directed: self.directed, ..GraphSpec::p2p() },
            Some(entity) => GraphSpec::user_entity(entity, self.directed),
        }
    }

    /// Scale profile matched to a population of `n_users`: user:entity ratios
    /// and per-user degrees follow the reference network census.
    pub fn desk(kind: RelationKind, n_users: usize, homophily: f64) -> Self {
        // (users, entities, edges) of the reference bipartite networks
        let census = |users: f64, entities: f64, edges: f64| {
            let ratio = entities / users;
            ((n_users as f64 * ratio).round().max(1.0) as usize, edges / users)
        };
        let (entities, mean_degree, directed) = match kind {
            // 214,637 arcs over 88,270 vertices: mean total degree ~4.86
            RelationKind::P2p => (None, 5.0, true),
            RelationKind::Cc => {
                let (e, d) = census(136_009.0, 385_014.0, 634_870.0);
                (Some(e), d, false)
            }
            RelationKind::Dv => {
                let (e, d) = census(247_844.0, 385_014.0, 707_948.0);
                (Some(e), d, false)
            }
            RelationKind::Bin => {
                let (e, d) = census(901_366.0, 9_096.0, 1_646_201.0);
                (Some(e), d, false)
            }
            RelationKind::Geo => {
                let (e, d) = census(276_260.0, 34_224.0, 1_104_142.0);
                (Some(e), d, false)
            }
        };
        Self { kind, mean_degree, entities, homophily, directed }
    }
}

/// Raw sizes of the reference networks (nodes, edges). Documentation only.
pub const REFERENCE_SCALE: [(RelationKind, usize, usize); 5] = [
    (RelationKind::P2p, 88_270, 214_637),
    (RelationKind::Cc, 576_042, 634_870),
    (RelationKind::Dv, 632_858, 707_948),
    (RelationKind::Bin, 910_431, 1_646_201),
    (RelationKind::Geo, 310_484, 1_104_142),
];

#[derive(Debug, Clone, Copy)]
enum ColumnShape {
    Rate,
    Count,
    Real,
    Flag,
}

fn column_shape(j: usize) -> ColumnShape {
    match j {
        0 | 1 => ColumnShape::Rate,
        2 => ColumnShape::Real,
        3 => ColumnShape::Flag,
        _ => match j % 4 {
            0 => ColumnShape::Rate,
            1 => ColumnShape::Count,
            2 => ColumnShape::Real,
            _ => ColumnShape::Flag,
        },
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a user table. Deterministic in `seed`.
pub fn generate_users(cfg: &GenConfig, seed: u64) -> Result<UserTable, DataError> {
    cfg.validate()?;
    let n = cfg.n_users;
    let mut rng = rng::from_seed(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(cfg.default_rate))).collect();
    let latent: Vec<f64> =
        y.iter().map(|&yi| cfg.signal_strength * f64::from(yi) + std_normal.sample(&mut rng)).collect();

    // the four neighbor-average sources always carry signal; the rest of the
    // signal set is a random subset of the remaining columns
    let n_signal = cfg.signal_columns.clamp(4, cfg.n_features);
    let mut rest: Vec<usize> = (4..cfg.n_features).collect();
    rest.shuffle(&mut rng);
    let mut loading = vec![0.0; cfg.n_features];
    // risk raises payment errors and lowers card usage, card score and prime
    loading[..4].copy_from_slice(&[1.0, -0.8, -1.0, -0.7]);
    for &j in rest.iter().take(n_signal - 4) {
        let magnitude = rng.random_range(0.5..1.0);
        loading[j] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }

    let noise = Normal::new(0.0, cfg.column_noise).expect("valid noise sd");
    let mut features = FeatureMatrix::new(n);
    for (j, &beta) in loading.iter().enumerate() {
        let offset: f64 = rng.random_range(-1.0..1.0);
        let col: Vec<f64> = latent
            .iter()
            .map(|&z| {
                let s = beta * z + noise.sample(&mut rng);
                match column_shape(j) {
                    ColumnShape::Rate => sigmoid(s + offset - 1.0),
                    ColumnShape::Count => (2.0 + 0.5 * s + offset).exp().floor(),
                    ColumnShape::Real if j == 2 => (600.0 + 60.0 * s).round(),
                    ColumnShape::Real => s + offset,
                    ColumnShape::Flag => f64::from(u8::from(rng.random_bool(sigmoid(s + offset)))),
                }
            })
            .collect();
        features.push_column(format!("f{j}"), col).expect("fresh column");
    }

    let cl_dist = LogNormal::new(cfg.credit_line_log_mean, cfg.credit_line_log_sd).expect("valid log-normal");
    let credit_line: Vec<f64> = (0..n).map(|_| cl_dist.sample(&mut rng).round().max(1.0)).collect();
    let profit: Vec<f64> = credit_line.iter().map(|c| c * cfg.profit_fraction).collect();

    let n_labeled = ((n as f64) * cfg.labeled_fraction).round().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labeled = vec![false; n];
    for &i in &order[..n_labeled] {
        labeled[i] = true;
    }

    Ok(UserTable { keys: (0..n).map(|i| format!("u{i}")).collect(), y, labeled, credit_line, profit, features })
}

/// Draws the edge list of one relation over `users`. Edge endpoints prefer
/// users (or entities) of the same label with probability `homophily`.
pub fn generate_relation_edges(users: &UserTable, spec: &RelationSpec, seed: u64) -> Result<Vec<Edge>, DataError> {
    spec.validate()?;
    let mut rng = rng::from_seed(seed);
    match spec.kind.entity_kind() {
        None => user_edges(users, spec, &mut rng),
        Some(_) => entity_edges(users, spec, &mut rng),
    }
}

fn label_pools(y: &[u8]) -> [Vec<usize>; 2] {
    let mut pools = [Vec::new(), Vec::new()];
    for (i, &yi) in y.iter().enumerate() {
        pools[usize::from(yi)].push(i);
    }
    pools
}

fn user_edges(users: &UserTable, spec: &RelationSpec, rng: &mut Rng) -> Result<Vec<Edge>, DataError> {
    let n = users.len();
    let pools = label_pools(&users.y);
    let max_arcs = if spec.directed { n * (n - 1) } else { n * (n - 1) / 2 };
    let wanted = ((spec.mean_degree * n as f64 / 2.0).round() as usize).min(max_arcs);

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(wanted * 2);
    let mut edges = Vec::with_capacity(wanted);
    let mut attempts = 0usize;
    let budget = 100 * wanted + 1000;
    while edges.len() < wanted {
        attempts += 1;
        if attempts > budget {
            return Err(DataError::Saturated { kind: spec.kind, wanted, placed: edges.len() });
        }
        let s = rng.random_range(0..n);
        let t = if rng.random_bool(spec.homophily) {
            let pool = &pools[usize::from(users.y[s])];
            pool[rng.random_range(0..pool.len())]
        } else {
            rng.random_range(0..n)
        };
        if s == t {
            continue;
        }
        let key = if spec.directed { (s, t) } else { (s.min(t), s.max(t)) };
        if !seen.insert(key) {
            continue;
        }
        edges.push(Edge::new(users.keys[s].clone(), users.keys[t].clone(), 1.0));
    }
    Ok(edges)
}

fn entity_edges(users: &UserTable, spec: &RelationSpec, rng: &mut Rng) -> Result<Vec<Edge>, DataError> {
    let n_entities = spec.entities.expect("validated");
    let prefix = spec.kind.as_str();
    let positive_share = users.y.iter().filter(|&&v| v == 1).count() as f64 / users.len() as f64;

    // latent label affinity of each entity, with the population's label mix
    let affinity: Vec<u8> = (0..n_entities).map(|_| u8::from(rng.random_bool(positive_share))).collect();
    let pools = label_pools(&affinity);

    let extra = Poisson::new((spec.mean_degree - 1.0).max(1e-9)).expect("positive rate");
    let mut edges = Vec::new();
    let mut mine: Vec<usize> = Vec::new();
    for (u, key) in users.keys.iter().enumerate() {
        let degree = if spec.mean_degree > 1.0 { 1 + extra.sample(rng) as usize } else { 1 };
        let degree = degree.min(n_entities);
        mine.clear();
        let mut attempts = 0;
        while mine.len() < degree && attempts < 50 * degree {
            attempts += 1;
            let pool = &pools[usize::from(users.y[u])];
            let e = if !pool.is_empty() && rng.random_bool(spec.homophily) {
                pool[rng.random_range(0..pool.len())]
            } else {
                rng.random_range(0..n_entities)
            };
            if !mine.contains(&e) {
                mine.push(e);
            }
        }
        for &e in &mine {
            edges.push(Edge::new(key.clone(), format!("{prefix}{e}"), 1.0));
        }
    }
    Ok(edges)
}
