//! Per-user graph features and training-table assembly.
//!
//! Each relation graph contributes an 11-column block: in/out/total degree,
//! eigenvector centrality, PageRank, Louvain community id and size, and the
//! neighborhood means of four behavioral columns.

mod centrality;
mod louvain;
mod neighbors;

pub use centrality::{
    eigenvector_centrality, pagerank, total_degrees, CentralityMethod, CentralityScores, Degrees, EigenvectorParams,
    PageRankParams,
};
pub use louvain::{louvain, modularity, CommunityAssignment};
pub use neighbors::{neighbor_feature_average, MISSING};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::NEIGHBOR_SOURCE_COLUMNS;
use crate::graph::{Graph, GraphError, NodeKind};
use crate::table::{FeatureMatrix, TableError, UserFeatures, UserTable};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("graph has no edges")]
    NoEdges,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("leading eigenvalue is zero (acyclic directed graph); use PageRank instead")]
    ZeroSpectralRadius,
    #[error("{method} did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { method: &'static str, iterations: usize, residual: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Column suffixes of a graph feature block, in order.
pub const BLOCK_COLUMNS: [&str; 11] = [
    "in_deg",
    "out_deg",
    "deg",
    "eigen",
    "pagerank",
    "community",
    "community_size",
    "nbr_cancel_payment_error",
    "nbr_paid_credit_card",
    "nbr_max_cc_score",
    "nbr_prime",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    /// Column-name prefix, normally the relation kind.
    pub prefix: String,
    pub eigen: EigenvectorParams,
    pub pagerank: PageRankParams,
    pub resolution: f64,
    pub seed: u64,
}

impl BlockConfig {
    pub fn new(prefix: impl Into<String>, seed: u64) -> Self {
        Self {
            prefix: prefix.into(),
            eigen: EigenvectorParams::default(),
            pagerank: PageRankParams::default(),
            resolution: 1.0,
            seed,
        }
    }
}

/// Convergence diagnostics of one block, written to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub relation: String,
    pub nodes: usize,
    pub edges: usize,
    pub eigen_iterations: usize,
    pub eigen_residual: f64,
    pub eigenvalue: f64,
    pub pagerank_iterations: usize,
    pub pagerank_residual: f64,
    pub communities: usize,
    pub modularity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatureBlock {
    pub keys: Vec<String>,
    pub matrix: FeatureMatrix,
    pub diagnostics: BlockDiagnostics,
}

/// Computes the 11 graph features of every user in `users`. Users absent from
/// `g` get zero degrees and centralities, and missing community and
/// neighborhood values.
pub fn graph_feature_block(
    g: &Graph,
    users: UserFeatures<'_>,
    cfg: &BlockConfig,
) -> Result<GraphFeatureBlock, FeatureError> {
    let degrees = total_degrees(g);
    let eigen = eigenvector_centrality(g, cfg.eigen)?;
    let pr = pagerank(g, cfg.pagerank)?;
    let comm = louvain(g, cfg.resolution, cfg.seed);
    let sizes = comm.sizes();
    let nbr = neighbor_feature_average(g, users, &NEIGHBOR_SOURCE_COLUMNS)?;

    let n = users.keys.len();
    let mut cols: Vec<Vec<f64>> = (0..7).map(|_| Vec::with_capacity(n)).collect();
    for key in users.keys {
        let values = match g.lookup(NodeKind::User, key) {
            Some(v) => {
                let d = degrees[v.index()];
                let c = comm.community[v.index()];
                [
                    d.in_degree as f64,
                    d.out_degree as f64,
                    d.total as f64,
                    eigen.scores[v.index()],
                    pr.scores[v.index()],
                    c as f64,
                    sizes[c] as f64,
                ]
            }
            None => [0.0, 0.0, 0.0, 0.0, 0.0, MISSING, 0.0],
        };
        for (col, v) in cols.iter_mut().zip(values) {
            col.push(v);
        }
    }
    cols.extend(nbr);

    let names = BLOCK_COLUMNS.iter().map(|s| format!("{}_{s}", cfg.prefix)).collect();
    let matrix = FeatureMatrix::from_columns(names, cols)?;

    let diagnostics = BlockDiagnostics {
        relation: cfg.prefix.clone(),
        nodes: g.node_count(),
        edges: g.edge_count(),
        eigen_iterations: eigen.iterations,
        eigen_residual: eigen.residual,
        eigenvalue: eigen.eigenvalue.unwrap_or(0.0),
        pagerank_iterations: pr.iterations,
        pagerank_residual: pr.residual,
        communities: comm.n_communities,
        modularity: comm.modularity,
    };
    Ok(GraphFeatureBlock { keys: users.keys.to_vec(), matrix, diagnostics })
}

/// Base features followed by each block's columns, in the given order.
pub fn assemble_training_table(base: &UserTable, blocks: &[&GraphFeatureBlock]) -> Result<FeatureMatrix, FeatureError> {
    let mut out = base.features.clone();
    for block in blocks {
        if block.keys.len() != base.keys.len() {
            return Err(TableError::Misaligned(block.keys.len().min(base.keys.len())).into());
        }
        if let Some(i) = block.keys.iter().zip(&base.keys).position(|(a, b)| a != b) {
            return Err(TableError::Misaligned(i).into());
        }
        out.extend(&block.matrix)?;
    }
    Ok(out)
}

/// Writes a block as CSV with a leading `user` column. Missing values are
/// written as empty cells.
pub fn write_block_csv(path: &Path, block: &GraphFeatureBlock) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user".to_string()];
    header.extend(block.matrix.names().iter().cloned());
    w.write_record(&header)?;
    for (i, key) in block.keys.iter().enumerate() {
        let mut row = vec![key.clone()];
        row.extend(block.matrix.columns().iter().map(|c| fmt_cell(c[i])));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a block written by [`write_block_csv`]. Diagnostics are not stored
/// in the CSV and come back empty.
pub fn read_block_csv(path: &Path) -> Result<GraphFeatureBlock, FeatureError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let prefix = names.first().and_then(|n| n.strip_suffix("_in_deg")).unwrap_or_default().to_string();
    let mut keys = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        keys.push(rec[0].to_string());
        for (c, v) in cols.iter_mut().zip(rec.iter().skip(1)) {
            c.push(if v.is_empty() { MISSING } else { v.parse().unwrap_or(MISSING) });
        }
    }
    let matrix = FeatureMatrix::from_columns(names, cols)?;
    let diagnostics = BlockDiagnostics {
        relation: prefix,
        nodes: 0,
        edges: 0,
        eigen_iterations: 0,
        eigen_residual: 0.0,
        eigenvalue: 0.0,
        pagerank_iterations: 0,
        pagerank_residual: 0.0,
        communities: 0,
        modularity: 0.0,
    };
    Ok(GraphFeatureBlock { keys, matrix, diagnostics })
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_relation_edges, generate_users, GenConfig, RelationKind, RelationSpec};

    fn setup() -> (UserTable, Graph) {
        let users = generate_users(&GenConfig { n_features: 10, ..GenConfig::new(200) }, 1).unwrap();
        let spec = RelationSpec::desk(RelationKind::P2p, 200, 0.5);
        let edges = generate_relation_edges(&users, &spec, 2).unwrap();
        let g = Graph::build(&edges, &spec.graph_spec()).unwrap();
        (users, g)
    }

    #[test]
    fn block_has_eleven_named_columns() {
        let (users, g) = setup();
        let b = graph_feature_block(&g, users.features_view(), &BlockConfig::new("p2p", 3)).unwrap();
        assert_eq!(b.matrix.n_cols(), 11);
        assert_eq!(b.matrix.n_rows(), 200);
        assert_eq!(b.matrix.names()[4], "p2p_pagerank");
        let again = graph_feature_block(&g, users.features_view(), &BlockConfig::new("p2p", 3)).unwrap();
        assert_eq!(format!("{:?}", b.matrix), format!("{:?}", again.matrix));
    }

    #[test]
    fn absent_user_convention() {
        let (mut users, g) = setup();
        users.keys.push("ghost".into());
        users.features = users.features.select_rows(&(0..200).chain([0]).collect::<Vec<_>>());
        let b = graph_feature_block(&g, users.features_view(), &BlockConfig::new("p2p", 3)).unwrap();
        let row: Vec<f64> = (0..11).map(|j| b.matrix.get(200, j)).collect();
        assert_eq!(&row[..5], &[0.0; 5]);
        assert!(row[5].is_nan());
        assert!(row[7..].iter().all(|v| v.is_nan()));
    }

    #[test]
    fn assembly_widths_and_alignment() {
        let (users, g) = setup();
        let b = graph_feature_block(&g, users.features_view(), &BlockConfig::new("p2p", 3)).unwrap();
        assert_eq!(assemble_training_table(&users, &[]).unwrap().n_cols(), 10);
        assert_eq!(assemble_training_table(&users, &[&b]).unwrap().n_cols(), 21);
        let mut shuffled = b.clone();
        shuffled.keys.swap(0, 1);
        assert!(matches!(
            assemble_training_table(&users, &[&shuffled]),
            Err(FeatureError::Table(TableError::Misaligned(0)))
        ));
    }

    #[test]
    fn block_csv_round_trip() {
        let (users, g) = setup();
        let b = graph_feature_block(&g, users.features_view(), &BlockConfig::new("p2p", 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p2p.csv");
        write_block_csv(&p, &b).unwrap();
        let back = read_block_csv(&p).unwrap();
        assert_eq!(back.keys, b.keys);
        assert_eq!(back.diagnostics.relation, "p2p");
        for j in 0..11 {
            for (x, y) in back.matrix.column(j).iter().zip(b.matrix.column(j)) {
                assert!(x == y || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
