//! Immutable sparse graphs over users and the entities they interact with.
//!
//! Nodes carry a [`NodeKind`] and an external string key. Adjacency is stored
//! in compressed sparse rows with neighbor lists sorted by [`NodeId`]; directed
//! graphs additionally keep the reversed (in-) adjacency.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("empty node key in edge {0}")]
    EmptyKey(usize),
    #[error("edge {index} has non-positive or non-finite weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("unipartite graph requires src kind == dst kind, got {src:?} and {dst:?}")]
    UnipartiteKindMismatch { src: NodeKind, dst: NodeKind },
    #[error("bipartite graph requires distinct kinds, got {0:?} on both sides")]
    BipartiteSameKind(NodeKind),
    #[error("node id {id} out of range for graph with {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },
    #[error("projection requires a bipartite graph with a User side")]
    NotBipartite,
    #[error("edge csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("edge csv: missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("edge csv line {line}: bad weight `{value}`")]
    ParseWeight { line: u64, value: String },
}

/// Dense node index in `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    User,
    CreditCard,
    Device,
    Bin,
    Geohash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    /// Parallel edges are merged and their weights summed.
    Sum,
    /// Parallel edges collapse to a single edge of weight 1.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    All,
}

/// How an edge list is turned into a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub directed: bool,
    pub bipartite: bool,
    pub src_kind: NodeKind,
    pub dst_kind: NodeKind,
    pub dedup: DedupMode,
}

impl GraphSpec {
    /// Directed user-to-user transfer graph; transfer multiplicity is summed.
    pub fn p2p() -> Self {
        Self {
            directed: true,
            bipartite: false,
            src_kind: NodeKind::User,
            dst_kind: NodeKind::User,
            dedup: DedupMode::Sum,
        }
    }

    /// User-to-entity graph with binary edges.
    pub fn user_entity(entity: NodeKind, directed: bool) -> Self {
        Self { directed, bipartite: true, src_kind: NodeKind::User, dst_kind: entity, dedup: DedupMode::Binary }
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.bipartite && self.src_kind == self.dst_kind {
            return Err(GraphError::BipartiteSameKind(self.src_kind));
        }
        if !self.bipartite && self.src_kind != self.dst_kind {
            return Err(GraphError::UnipartiteKindMismatch { src: self.src_kind, dst: self.dst_kind });
        }
        Ok(())
    }
}

/// One row of an edge list, keyed by external node names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, weight: f64) -> Self {
        Self { src: src.into(), dst: dst.into(), weight }
    }
}

/// Compressed sparse rows: neighbors of node `i` live in `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<NodeId>,
    pub weights: Vec<f64>,
}

impl Csr {
    /// Builds from `(src, dst, weight)` entries, merging duplicates per `dedup`.
    fn from_entries(n: usize, mut entries: Vec<(u32, u32, f64)>, dedup: DedupMode) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(entries.len());
        let mut weights: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (s, t, w) in entries {
            if last == Some((s, t)) {
                if dedup == DedupMode::Sum {
                    *weights.last_mut().expect("merged edge has a predecessor") += w;
                }
                continue;
            }
            last = Some((s, t));
            targets.push(NodeId(t));
            weights.push(if dedup == DedupMode::Binary { 1.0 } else { w });
            offsets[s as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Self { offsets, targets, weights }
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[NodeId], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// A typed, immutable sparse graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    directed: bool,
    bipartite: bool,
    kinds: Vec<NodeKind>,
    keys: Vec<String>,
    index: HashMap<(NodeKind, String), NodeId>,
    out_adj: Csr,
    /// Reverse adjacency; `None` for undirected graphs where it equals `out_adj`.
    in_adj: Option<Csr>,
    edge_count: usize,
}

struct Interner {
    kinds: Vec<NodeKind>,
    keys: Vec<String>,
    index: HashMap<(NodeKind, String), NodeId>,
}

impl Interner {
    fn new() -> Self {
        Self { kinds: Vec::new(), keys: Vec::new(), index: HashMap::new() }
    }

    fn intern(&mut self, kind: NodeKind, key: &str) -> NodeId {
        if let Some(&id) = self.index.get(&(kind, key.to_string())) {
            return id;
        }
        let id = NodeId(self.keys.len() as u32);
        self.kinds.push(kind);
        self.keys.push(key.to_string());
        self.index.insert((kind, key.to_string()), id);
        id
    }
}

impl Graph {
    /// Builds a graph from an edge list. Node ids follow first appearance.
    pub fn build(edges: &[Edge], spec: &GraphSpec) -> Result<Self, GraphError> {
        if edges.is_empty() {
            return Err(GraphError::EmptyEdgeList);
        }
        Self::build_with_nodes(&[], edges, spec)
    }

    /// Like [`Graph::build`], but registers `nodes` first so that they receive
    /// ids `0..nodes.len()` in order, whether or not they have edges.
    pub fn build_with_nodes(nodes: &[(NodeKind, &str)], edges: &[Edge], spec: &GraphSpec) -> Result<Self, GraphError> {
        spec.validate()?;
        let mut interner = Interner::new();
        for (i, &(kind, key)) in nodes.iter().enumerate() {
            if key.is_empty() {
                return Err(GraphError::EmptyKey(i));
            }
            interner.intern(kind, key);
        }

        let mut entries = Vec::with_capacity(edges.len());
        let mut dropped_loops = 0usize;
        for (i, e) in edges.iter().enumerate() {
            if e.src.is_empty() || e.dst.is_empty() {
                return Err(GraphError::EmptyKey(i));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(GraphError::BadWeight { index: i, weight: e.weight });
            }
            let s = interner.intern(spec.src_kind, &e.src);
            let t = interner.intern(spec.dst_kind, &e.dst);
            if s == t {
                dropped_loops += 1;
                continue;
            }
            entries.push((s.0, t.0, e.weight));
        }
        if dropped_loops > 0 {
            warn!("dropped {dropped_loops} self-loop(s) from edge list");
        }

        let n = interner.keys.len();
        let (out_adj, in_adj) = if spec.directed {
            let reversed = entries.iter().map(|&(s, t, w)| (t, s, w)).collect();
            (Csr::from_entries(n, entries, spec.dedup), Some(Csr::from_entries(n, reversed, spec.dedup)))
        } else {
            let mut sym = Vec::with_capacity(entries.len() * 2);
            for (s, t, w) in entries {
                sym.push((s, t, w));
                sym.push((t, s, w));
            }
            (Csr::from_entries(n, sym, spec.dedup), None)
        };
        let edge_count = if spec.directed { out_adj.nnz() } else { out_adj.nnz() / 2 };

        Ok(Self {
            directed: spec.directed,
            bipartite: spec.bipartite,
            kinds: interner.kinds,
            keys: interner.keys,
            index: interner.index,
            out_adj,
            in_adj,
            edge_count,
        })
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    /// Number of arcs (directed) or undirected edges after deduplication.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_bipartite(&self) -> bool {
        self.bipartite
    }

    pub fn kind(&self, n: NodeId) -> NodeKind {
        self.kinds[n.index()]
    }

    pub fn key(&self, n: NodeId) -> &str {
        &self.keys[n.index()]
    }

    pub fn lookup(&self, kind: NodeKind, key: &str) -> Option<NodeId> {
        self.index.get(&(kind, key.to_string())).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count() as u32).map(NodeId)
    }

    pub(crate) fn in_csr(&self) -> &Csr {
        self.in_adj.as_ref().unwrap_or(&self.out_adj)
    }

    /// Out-neighbors as parallel slices, without bounds checks beyond indexing.
    #[inline]
    pub fn out_row(&self, n: NodeId) -> (&[NodeId], &[f64]) {
        self.out_adj.row(n.index())
    }

    #[inline]
    pub fn in_row(&self, n: NodeId) -> (&[NodeId], &[f64]) {
        self.in_csr().row(n.index())
    }

    pub fn out_degree(&self, n: NodeId) -> usize {
        self.out_adj.degree(n.index())
    }

    pub fn in_degree(&self, n: NodeId) -> usize {
        self.in_csr().degree(n.index())
    }

    fn check(&self, n: NodeId) -> Result<(), GraphError> {
        if n.index() >= self.node_count() {
            return Err(GraphError::NodeOutOfRange { id: n.index(), n: self.node_count() });
        }
        Ok(())
    }

    /// Sorted neighbor list. `All` on a directed graph merges in- and
    /// out-neighbors, summing weights where both arcs exist.
    pub fn neighbors(&self, n: NodeId, direction: Direction) -> Result<Vec<(NodeId, f64)>, GraphError> {
        self.check(n)?;
        let zip = |(t, w): (&[NodeId], &[f64])| t.iter().copied().zip(w.iter().copied()).collect::<Vec<_>>();
        Ok(match direction {
            Direction::Out => zip(self.out_row(n)),
            Direction::In => zip(self.in_row(n)),
            Direction::All if !self.directed => zip(self.out_row(n)),
            Direction::All => merge_sorted(&zip(self.out_row(n)), &zip(self.in_row(n))),
        })
    }

    /// Undirected view: for directed graphs, arcs in both directions are
    /// merged into one edge with summed weight.
    pub fn symmetrized(&self) -> Graph {
        if !self.directed {
            return self.clone();
        }
        let n = self.node_count();
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            let merged = merge_sorted(&zipped(self.out_adj.row(i)), &zipped(self.in_csr().row(i)));
            offsets[i + 1] = offsets[i] + merged.len();
            for (t, w) in merged {
                targets.push(t);
                weights.push(w);
            }
        }
        let adj = Csr { offsets, targets, weights };
        let edge_count = adj.nnz() / 2;
        Graph {
            directed: false,
            bipartite: self.bipartite,
            kinds: self.kinds.clone(),
            keys: self.keys.clone(),
            index: self.index.clone(),
            out_adj: adj,
            in_adj: None,
            edge_count,
        }
    }

    /// Projects a user-entity bipartite graph onto its users: two users are
    /// adjacent iff they share at least one entity, weighted by the number of
    /// shared entities. Node ids of the projection follow the user order of
    /// the input graph.
    pub fn bipartite_user_projection(&self) -> Result<Graph, GraphError> {
        if !self.bipartite || !self.kinds.contains(&NodeKind::User) {
            return Err(GraphError::NotBipartite);
        }
        let users: Vec<NodeId> = self.nodes().filter(|&n| self.kind(n) == NodeKind::User).collect();
        let mut local = vec![u32::MAX; self.node_count()];
        for (i, u) in users.iter().enumerate() {
            local[u.index()] = i as u32;
        }
        let sym = self.symmetrized();

        let nu = users.len();
        let mut offsets = vec![0usize; nu + 1];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        // dense counter reused across rows; `touched` resets it
        let mut counts = vec![0u32; nu];
        let mut touched: Vec<u32> = Vec::new();
        for (i, &u) in users.iter().enumerate() {
            let (entities, _) = sym.out_row(u);
            for &e in entities {
                let (peers, _) = sym.out_row(e);
                for &p in peers {
                    let lp = local[p.index()];
                    if lp == u32::MAX || lp as usize == i {
                        continue;
                    }
                    if counts[lp as usize] == 0 {
                        touched.push(lp);
                    }
                    counts[lp as usize] += 1;
                }
            }
            touched.sort_unstable();
            for &p in &touched {
                targets.push(NodeId(p));
                weights.push(counts[p as usize] as f64);
                counts[p as usize] = 0;
            }
            offsets[i + 1] = offsets[i] + touched.len();
            touched.clear();
        }

        let keys: Vec<String> = users.iter().map(|&u| self.key(u).to_string()).collect();
        let index = keys.iter().enumerate().map(|(i, k)| ((NodeKind::User, k.clone()), NodeId(i as u32))).collect();
        let adj = Csr { offsets, targets, weights };
        let edge_count = adj.nnz() / 2;
        Ok(Graph {
            directed: false,
            bipartite: false,
            kinds: vec![NodeKind::User; nu],
            keys,
            index,
            out_adj: adj,
            in_adj: None,
            edge_count,
        })
    }
}

fn zipped((t, w): (&[NodeId], &[f64])) -> Vec<(NodeId, f64)> {
    t.iter().copied().zip(w.iter().copied()).collect()
}

fn merge_sorted(a: &[(NodeId, f64)], b: &[(NodeId, f64)]) -> Vec<(NodeId, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Reads an edge list with header `src,dst[,weight]`. A missing weight column
/// or an empty weight cell means weight 1.
pub fn read_edge_csv(path: &Path) -> Result<Vec<Edge>, GraphError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| headers.iter().position(|h| h.trim() == name);
    let src = col("src").ok_or(GraphError::MissingColumn("src"))?;
    let dst = col("dst").ok_or(GraphError::MissingColumn("dst"))?;
    let weight = col("weight");

    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let w = match weight.and_then(|c| rec.get(c)).map(str::trim) {
            None | Some("") => 1.0,
            Some(s) => s.parse::<f64>().map_err(|_| GraphError::ParseWeight {
                line: rec.position().map_or(0, |p| p.line()),
                value: s.to_string(),
            })?,
        };
        edges.push(Edge::new(&rec[src], &rec[dst], w));
    }
    Ok(edges)
}

pub fn write_edge_csv(path: &Path, edges: &[Edge]) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst", "weight"])?;
    for e in edges {
        w.write_record([e.src.as_str(), e.dst.as_str(), &e.weight.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn directed(edges: &[(&str, &str)]) -> Graph {
        let e: Vec<Edge> = edges.iter().map(|(s, d)| Edge::new(*s, *d, 1.0)).collect();
        Graph::build(&e, &GraphSpec::p2p()).unwrap()
    }

    #[test]
    fn minimal_directed_graph() {
        let g = directed(&[("u1", "u2")]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        let u1 = g.lookup(NodeKind::User, "u1").unwrap();
        let u2 = g.lookup(NodeKind::User, "u2").unwrap();
        assert_eq!(g.neighbors(u1, Direction::Out).unwrap(), vec![(u2, 1.0)]);
        assert!(g.neighbors(u2, Direction::Out).unwrap().is_empty());
    }

    #[test]
    fn sum_dedup_merges_parallel_arcs() {
        let e = vec![Edge::new("u1", "u2", 1.0), Edge::new("u1", "u2", 1.0)];
        let g = Graph::build(&e, &GraphSpec::p2p()).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.out_row(NodeId(0)).1, &[2.0]);
    }

    #[test]
    fn binary_dedup_collapses_to_one() {
        let e = vec![Edge::new("u1", "k", 3.0), Edge::new("u1", "k", 2.0)];
        let g = Graph::build(&e, &GraphSpec::user_entity(NodeKind::CreditCard, false)).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.out_row(NodeId(0)).1, &[1.0]);
    }

    #[test]
    fn spec_kind_validation() {
        let e = vec![Edge::new("a", "b", 1.0)];
        let mut spec = GraphSpec::p2p();
        spec.dst_kind = NodeKind::Device;
        assert!(matches!(Graph::build(&e, &spec), Err(GraphError::UnipartiteKindMismatch { .. })));
        let mut spec = GraphSpec::user_entity(NodeKind::Bin, false);
        spec.dst_kind = NodeKind::User;
        assert!(matches!(Graph::build(&e, &spec), Err(GraphError::BipartiteSameKind(_))));
        assert!(matches!(Graph::build(&[], &GraphSpec::p2p()), Err(GraphError::EmptyEdgeList)));
    }

    #[test]
    fn rejects_bad_weights_and_empty_keys() {
        let spec = GraphSpec::p2p();
        assert!(matches!(Graph::build(&[Edge::new("a", "b", 0.0)], &spec), Err(GraphError::BadWeight { .. })));
        assert!(matches!(Graph::build(&[Edge::new("", "b", 1.0)], &spec), Err(GraphError::EmptyKey(0))));
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = directed(&[("a", "a"), ("a", "b")]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn cycle_neighbors() {
        let g = directed(&[("a", "b"), ("b", "c"), ("c", "a")]);
        let id = |k| g.lookup(NodeKind::User, k).unwrap();
        let out: Vec<_> = g.neighbors(id("a"), Direction::Out).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(out, vec![id("b")]);
        let all: Vec<_> = g.neighbors(id("a"), Direction::All).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(all, vec![id("b"), id("c")]);
        assert!(g.neighbors(NodeId(3), Direction::Out).is_err());
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let e = vec![Edge::new("a", "b", 1.0)];
        let g = Graph::build_with_nodes(&[(NodeKind::User, "z")], &e, &GraphSpec::p2p()).unwrap();
        assert_eq!(g.lookup(NodeKind::User, "z"), Some(NodeId(0)));
        assert!(g.neighbors(NodeId(0), Direction::All).unwrap().is_empty());
    }

    #[test]
    fn all_direction_sums_reciprocal_arcs() {
        let g = directed(&[("a", "b"), ("b", "a")]);
        assert_eq!(g.neighbors(NodeId(0), Direction::All).unwrap(), vec![(NodeId(1), 2.0)]);
        let s = g.symmetrized();
        assert_eq!(s.edge_count(), 1);
        assert_eq!(s.out_row(NodeId(0)).1, &[2.0]);
    }

    #[test]
    fn keys_are_namespaced_by_kind() {
        let e = vec![Edge::new("x", "x", 1.0)];
        let g = Graph::build(&e, &GraphSpec::user_entity(NodeKind::Device, false)).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn projection_shared_card() {
        let spec = GraphSpec::user_entity(NodeKind::CreditCard, false);
        let g = Graph::build(&[Edge::new("A", "K", 1.0), Edge::new("B", "K", 1.0)], &spec).unwrap();
        let p = g.bipartite_user_projection().unwrap();
        assert_eq!(p.node_count(), 2);
        assert_eq!(p.neighbors(NodeId(0), Direction::All).unwrap(), vec![(NodeId(1), 1.0)]);

        let lone = Graph::build(&[Edge::new("A", "K", 1.0)], &spec).unwrap();
        let p = lone.bipartite_user_projection().unwrap();
        assert!(p.neighbors(NodeId(0), Direction::All).unwrap().is_empty());
    }

    #[test]
    fn projection_rejects_unipartite() {
        let g = directed(&[("a", "b")]);
        assert!(matches!(g.bipartite_user_projection(), Err(GraphError::NotBipartite)));
    }

    #[test]
    fn edge_csv_defaults_weight() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "src,dst\na,b\nb,c\n").unwrap();
        let edges = read_edge_csv(&path).unwrap();
        assert_eq!(edges, vec![Edge::new("a", "b", 1.0), Edge::new("b", "c", 1.0)]);

        write_edge_csv(&path, &[Edge::new("a", "b", 2.5)]).unwrap();
        assert_eq!(read_edge_csv(&path).unwrap(), vec![Edge::new("a", "b", 2.5)]);
    }
}
