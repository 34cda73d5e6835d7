//! Louvain modularity optimization.
//!
//! Standard two-phase scheme: greedy local moves until no node can raise
//! modularity, then collapse communities into weighted super-nodes and
//! repeat. Directed graphs are symmetrized with summed weights first.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::rng;

/// Minimum modularity gain for a move or a level to count.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    /// Dense community ids, numbered by first appearance in node order.
    pub community: Vec<usize>,
    pub n_communities: usize,
    pub modularity: f64,
    /// Modularity after each aggregation level, starting with the singleton
    /// partition.
    pub level_modularity: Vec<f64>,
}

impl CommunityAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_communities];
        for &c in &self.community {
            s[c] += 1;
        }
        s
    }
}

/// Weighted undirected graph with explicit self-loops, the working form of
/// every level.
#[derive(Debug, Clone)]
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    /// Internal weight carried by a super-node (each internal edge once).
    self_loop: Vec<f64>,
}

impl Level {
    fn from_graph(g: &Graph) -> Self {
        let sym = g.symmetrized();
        let adj = sym
            .nodes()
            .map(|v| {
                let (t, w) = sym.out_row(v);
                t.iter().map(|x| x.index()).zip(w.iter().copied()).collect()
            })
            .collect();
        Self { adj, self_loop: vec![0.0; g.node_count()] }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn degrees(&self) -> Vec<f64> {
        self.adj.iter().zip(&self.self_loop).map(|(row, s)| row.iter().map(|p| p.1).sum::<f64>() + 2.0 * s).collect()
    }

    fn modularity(&self, community: &[usize], resolution: f64) -> f64 {
        let k = self.degrees();
        let two_m: f64 = k.iter().sum();
        if two_m == 0.0 {
            return 0.0;
        }
        let n_comm = community.iter().max().map_or(0, |m| m + 1);
        let mut inner = vec![0.0; n_comm];
        let mut tot = vec![0.0; n_comm];
        for i in 0..self.len() {
            let c = community[i];
            tot[c] += k[i];
            inner[c] += 2.0 * self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                if community[j] == c {
                    inner[c] += w;
                }
            }
        }
        inner.iter().zip(&tot).map(|(a, t)| a / two_m - resolution * (t / two_m).powi(2)).sum()
    }

    /// One local-moving phase. Returns the partition (dense ids) and whether
    /// any node moved.
    fn local_moves(&self, resolution: f64, rng: &mut rng::Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let k = self.degrees();
        let two_m: f64 = k.iter().sum();
        let mut community: Vec<usize> = (0..n).collect();
        if two_m == 0.0 {
            return (community, false);
        }
        let m = two_m / 2.0;
        let mut tot = k.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let own = community[i];
                tot[own] -= k[i];
                for &(j, w) in &self.adj[i] {
                    let c = community[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                let score = |c: usize, link_c: f64| link_c - resolution * tot[c] * k[i] / two_m;
                let stay = score(own, link[own]);
                let mut best = own;
                let mut best_score = stay;
                // ascending ids make tie-breaking independent of neighbor order
                touched.sort_unstable();
                for &c in &touched {
                    let s = score(c, link[c]);
                    if s > best_score {
                        best = c;
                        best_score = s;
                    }
                }
                if best != own && (best_score - stay) / m > MIN_GAIN {
                    community[i] = best;
                    moved = true;
                } else {
                    best = own;
                }
                tot[best] += k[i];
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            moved_any = true;
        }
        (relabel(&community), moved_any)
    }

    fn aggregate(&self, community: &[usize]) -> Level {
        let nc = community.iter().max().map_or(0, |m| m + 1);
        let mut self_loop = vec![0.0; nc];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nc];
        for i in 0..self.len() {
            let ci = community[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = community[j];
                if ci == cj {
                    // each internal edge is seen from both ends
                    self_loop[ci] += w / 2.0;
                } else {
                    rows[ci].push((cj, w));
                }
            }
        }
        let adj = rows
            .into_iter()
            .map(|mut r| {
                r.sort_by_key(|p| p.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
                for (c, w) in r {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += w,
                        _ => merged.push((c, w)),
                    }
                }
                merged
            })
            .collect();
        Level { adj, self_loop }
    }
}

fn relabel(community: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; community.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    community
        .iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect()
}

/// Modularity of `community` on the symmetrized `g`.
pub fn modularity(g: &Graph, community: &[usize], resolution: f64) -> f64 {
    Level::from_graph(g).modularity(community, resolution)
}

/// Runs Louvain with node visiting order shuffled by `seed`.
pub fn louvain(g: &Graph, resolution: f64, seed: u64) -> CommunityAssignment {
    let mut rng = rng::from_seed(seed);
    let mut level = Level::from_graph(g);
    let mut membership: Vec<usize> = (0..g.node_count()).collect();
    let mut level_modularity = vec![level.modularity(&membership, resolution)];

    loop {
        let (partition, moved) = level.local_moves(resolution, &mut rng);
        if !moved {
            break;
        }
        let q = level.modularity(&partition, resolution);
        let prev = *level_modularity.last().expect("non-empty");
        if q - prev <= MIN_GAIN {
            break;
        }
        for m in membership.iter_mut() {
            *m = partition[*m];
        }
        level_modularity.push(q);
        level = level.aggregate(&partition);
    }

    let community = relabel(&membership);
    let n_communities = community.iter().max().map_or(0, |m| m + 1);
    let modularity = *level_modularity.last().expect("non-empty");
    CommunityAssignment { community, n_communities, modularity, level_modularity }
}
