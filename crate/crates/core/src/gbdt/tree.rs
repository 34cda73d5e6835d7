//! Exact greedy, level-wise regression-tree growth on gradient statistics.

use serde::{Deserialize, Serialize};

/// Regression tree node. A row goes left when `x < threshold`; a missing
/// value follows `default_left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, default_left: bool, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { leaf: f64 },
}

impl TreeNode {
    pub fn eval(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf } => return *leaf,
                TreeNode::Split { feature, threshold, default_left, left, right } => {
                    let x = row(*feature);
                    let go_left = if x.is_nan() { *default_left } else { x < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Visits every node, parents first.
    pub fn walk(&self, f: &mut impl FnMut(&TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.walk(f);
            right.walk(f);
        }
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub gamma: f64,
}

/// Feature columns with, per column, the non-missing rows sorted by value
/// and the missing rows.
pub(crate) struct Presorted<'a> {
    columns: &'a [Vec<f64>],
    sorted: Vec<Vec<(u32, f64)>>,
    missing: Vec<Vec<u32>>,
}

impl<'a> Presorted<'a> {
    pub fn new(columns: &'a [Vec<f64>]) -> Self {
        let mut sorted = Vec::with_capacity(columns.len());
        let mut missing = Vec::with_capacity(columns.len());
        for col in columns {
            let mut s: Vec<u32> = (0..col.len() as u32).filter(|&i| !col[i as usize].is_nan()).collect();
            s.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            missing.push((0..col.len() as u32).filter(|&i| col[i as usize].is_nan()).collect());
            sorted.push(s.into_iter().map(|i| (i, col[i as usize])).collect());
        }
        Self { columns, sorted, missing }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

enum Flat {
    Split { feature: usize, threshold: f64, default_left: bool, left: usize, right: usize },
    Leaf(f64),
}

const NONE: u32 = u32::MAX;

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Midpoint between adjacent distinct values, nudged so that `lo` stays left.
fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Grows one tree on the rows in `rows` with gradients `g` and hessians `h`.
pub(crate) fn grow(data: &Presorted<'_>, g: &[f64], h: &[f64], rows: &[u32], p: &GrowParams) -> TreeNode {
    let n = g.len();
    let mut node_of = vec![NONE; n];
    for &r in rows {
        node_of[r as usize] = 0;
    }
    let mut nodes: Vec<Flat> = Vec::new();
    let (g0, h0) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r as usize], b + h[r as usize]));
    // open nodes of the current level: (flat index, G, H)
    let mut open: Vec<(usize, f64, f64)> = vec![(0, g0, h0)];
    nodes.push(Flat::Leaf(0.0));

    for depth in 0..=p.max_depth {
        if open.is_empty() {
            break;
        }
        let best =
            if depth < p.max_depth { find_splits(data, g, h, &node_of, &open, p) } else { vec![None; open.len()] };

        // slot -> (left slot, right slot) in the next level
        let mut next: Vec<(usize, f64, f64)> = Vec::new();
        let mut children: Vec<Option<(u32, u32)>> = vec![None; open.len()];
        for (slot, &(idx, gs, hs)) in open.iter().enumerate() {
            match best[slot] {
                Some(c) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Flat::Leaf(0.0));
                    nodes.push(Flat::Leaf(0.0));
                    nodes[idx] = Flat::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        default_left: c.default_left,
                        left: l,
                        right: r,
                    };
                    children[slot] = Some((next.len() as u32, next.len() as u32 + 1));
                    next.push((l, 0.0, 0.0));
                    next.push((r, 0.0, 0.0));
                }
                None => nodes[idx] = Flat::Leaf(leaf_weight(gs, hs, p.l2_reg)),
            }
        }
        for &r in rows {
            let r = r as usize;
            let slot = node_of[r];
            if slot == NONE {
                continue;
            }
            node_of[r] = match children[slot as usize] {
                None => NONE,
                Some((l, rt)) => {
                    let Flat::Split { feature, threshold, default_left, .. } = nodes[open[slot as usize].0] else {
                        unreachable!()
                    };
                    let x = data.columns[feature][r];
                    let left = if x.is_nan() { default_left } else { x < threshold };
                    let c = if left { l } else { rt };
                    next[c as usize].1 += g[r];
                    next[c as usize].2 += h[r];
                    c
                }
            };
        }
        open = next;
    }
    nest(&nodes, 0)
}

fn nest(nodes: &[Flat], i: usize) -> TreeNode {
    match nodes[i] {
        Flat::Leaf(w) => TreeNode::Leaf { leaf: w },
        Flat::Split { feature, threshold, default_left, left, right } => TreeNode::Split {
            feature,
            threshold,
            default_left,
            left: Box::new(nest(nodes, left)),
            right: Box::new(nest(nodes, right)),
        },
    }
}

#[derive(Clone, Copy)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
}

/// Best split per open node, or `None` when no split has positive gain.
/// Ties go to the lowest feature index, then the lowest threshold.
fn find_splits(
    data: &Presorted<'_>,
    g: &[f64],
    h: &[f64],
    node_of: &[u32],
    open: &[(usize, f64, f64)],
    p: &GrowParams,
) -> Vec<Option<Candidate>> {
    let k = open.len();
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let parent: Vec<f64> = open.iter().map(|&(_, gs, hs)| leaf_score(gs, hs, p.l2_reg)).collect();
    let mut miss = vec![(0.0, 0.0); k];
    let mut state = vec![ScanState { gl: 0.0, hl: 0.0, last: 0.0, seen: false }; k];

    let consider = |best: &mut Option<Candidate>, c: Candidate| {
        if c.gain > 0.0 && best.is_none_or(|b| c.gain > b.gain) {
            *best = Some(c);
        }
    };

    for f in 0..data.columns.len() {
        miss.iter_mut().for_each(|m| *m = (0.0, 0.0));
        for &r in &data.missing[f] {
            let s = node_of[r as usize];
            if s != NONE {
                miss[s as usize].0 += g[r as usize];
                miss[s as usize].1 += h[r as usize];
            }
        }
        state.iter_mut().for_each(|s| *s = ScanState { gl: 0.0, hl: 0.0, last: 0.0, seen: false });

        // evaluates "x < threshold goes left" with missing sent either way
        let eval = |slot: usize, gl: f64, hl: f64, threshold: f64| -> Option<Candidate> {
            let (_, gs, hs) = open[slot];
            let (gm, hm) = miss[slot];
            let mut out: Option<Candidate> = None;
            let sides: &[bool] = if hm == 0.0 { &[false] } else { &[false, true] };
            for &default_left in sides {
                let (gl, hl) = if default_left { (gl + gm, hl + hm) } else { (gl, hl) };
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (leaf_score(gl, hl, p.l2_reg) + leaf_score(gr, hr, p.l2_reg) - parent[slot]) - p.gamma;
                if out.is_none_or(|o| gain > o.gain) {
                    out = Some(Candidate { gain, feature: f, threshold, default_left });
                }
            }
            // without missing rows in the node, send future missing values to the heavier side
            if let Some(c) = out.as_mut() {
                if hm == 0.0 {
                    c.default_left = hl >= hs - hl;
                }
            }
            out
        };

        for &(r, x) in &data.sorted[f] {
            let slot = node_of[r as usize];
            if slot == NONE {
                continue;
            }
            let s = slot as usize;
            let st = state[s];
            if st.seen && x > st.last {
                if let Some(c) = eval(s, st.gl, st.hl, split_point(st.last, x)) {
                    consider(&mut best[s], c);
                }
            }
            let st = &mut state[s];
            st.gl += g[r as usize];
            st.hl += h[r as usize];
            st.last = x;
            st.seen = true;
        }
        // all non-missing rows left, missing rows right
        for s in 0..k {
            if state[s].seen && miss[s].1 > 0.0 {
                let (_, gs, hs) = open[s];
                let (gm, hm) = miss[s];
                let (gl, hl) = (gs - gm, hs - hm);
                let (gr, hr) = (gm, hm);
                if hl >= p.min_child_weight && hr >= p.min_child_weight {
                    let gain =
                        0.5 * (leaf_score(gl, hl, p.l2_reg) + leaf_score(gr, hr, p.l2_reg) - parent[s]) - p.gamma;
                    consider(&mut best[s], Candidate { gain, feature: f, threshold: f64::MAX, default_left: false });
                }
            }
        }
    }
    best
}
