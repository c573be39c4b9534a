//! Binary-split regression/classification trees shared by CART, the forests
//! and both boosting variants.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a node is scored and what a leaf predicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Criterion {
    /// Weighted Gini impurity on 0/1 targets; leaf = weighted share of 1s.
    Gini,
    /// Squared error on residuals, leaf = one Newton step on the log-loss
    /// (sum of residuals over sum of `p(1-p)`).
    Residual,
    /// Second-order gain on gradients/Hessians with L2 leaf penalty.
    Newton { lambda: f64, min_child_weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per node; `None` examines all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
    /// Unnormalized criterion improvement per feature.
    pub gains: Vec<f64>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Per-row statistics aggregated by the criterion.
///
/// Gini: `(w, w*y, 0, 0)`; Residual: `(w, w*r, w*r^2, w*p(1-p))`;
/// Newton: `(w, g, h, 0)`.
pub(crate) type Stat = [f64; 4];

fn add(a: &mut Stat, b: &Stat) {
    for k in 0..4 {
        a[k] += b[k];
    }
}

fn sub(a: &Stat, b: &Stat) -> Stat {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

/// Node score; a split improves by `score(L) + score(R) - score(parent)`.
fn score(c: Criterion, s: &Stat) -> f64 {
    match c {
        Criterion::Gini => {
            if s[0] <= 0.0 {
                return 0.0;
            }
            let p = s[1] / s[0];
            -s[0] * 2.0 * p * (1.0 - p)
        }
        Criterion::Residual => {
            if s[0] <= 0.0 {
                return 0.0;
            }
            -(s[2] - s[1] * s[1] / s[0])
        }
        Criterion::Newton { lambda, .. } => s[1] * s[1] / (s[2] + lambda),
    }
}

fn leaf_value(c: Criterion, s: &Stat) -> f64 {
    match c {
        Criterion::Gini => {
            if s[0] > 0.0 {
                s[1] / s[0]
            } else {
                0.5
            }
        }
        Criterion::Residual => {
            if s[3].abs() < 1e-12 {
                0.0
            } else {
                s[1] / s[3]
            }
        }
        Criterion::Newton { lambda, .. } => -s[1] / (s[2] + lambda),
    }
}

fn is_pure(c: Criterion, s: &Stat) -> bool {
    match c {
        Criterion::Gini => s[1] <= 1e-12 * s[0] || s[1] >= s[0] * (1.0 - 1e-12),
        Criterion::Residual => (s[2] - s[1] * s[1] / s[0]).abs() <= 1e-14,
        Criterion::Newton { .. } => false,
    }
}

fn children_ok(c: Criterion, l: &Stat, r: &Stat) -> bool {
    match c {
        Criterion::Newton { min_child_weight, .. } => l[2] >= min_child_weight && r[2] >= min_child_weight,
        _ => true,
    }
}

/// Minimum improvement for a split to be kept. Gini trees may split with
/// zero gain as long as the node is impure, like the usual CART growers;
/// the boosting trees need a strictly positive gain.
fn min_gain(c: Criterion) -> f64 {
    match c {
        Criterion::Gini => -1e-12,
        _ => 1e-12,
    }
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    stats: &'a [Stat],
    criterion: Criterion,
    params: TreeParams,
    rng: &'a mut R,
    tree: Tree,
}

impl<R: Rng> Builder<'_, R> {
    fn total(&self, idx: &[usize]) -> Stat {
        let mut s = [0.0; 4];
        for &i in idx {
            add(&mut s, &self.stats[i]);
        }
        s
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x[0].len();
        match self.params.max_features {
            Some(k) if k < d => {
                let mut f = sample(self.rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Best `(gain, feature, threshold)`; earliest feature and threshold win ties.
    fn best_split(&mut self, idx: &[usize], total: &Stat) -> Option<(f64, usize, f64)> {
        let parent = score(self.criterion, total);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0.0; 4];
            for k in 0..order.len() - 1 {
                add(&mut left, &self.stats[order[k]]);
                let (v, next) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if v == next || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                    continue;
                }
                let right = sub(total, &left);
                if !children_ok(self.criterion, &left, &right) {
                    continue;
                }
                let gain = score(self.criterion, &left) + score(self.criterion, &right) - parent;
                if gain > min_gain(self.criterion) && best.is_none_or(|(g, _, _)| gain > g + 1e-12 * g.abs().max(1e-300)) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some((gain, f, threshold));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let total = self.total(&idx);
        let id = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf(leaf_value(self.criterion, &total)));
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || idx.len() < self.params.min_samples_split.max(2) || is_pure(self.criterion, &total) {
            return id;
        }
        let Some((gain, feature, threshold)) = self.best_split(&idx, &total) else {
            return id;
        };
        self.tree.gains[feature] += gain.max(0.0);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.tree.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree on the rows in `idx` (rows may repeat only through weights
/// in `stats`). `x` must have at least one row.
pub(crate) fn grow_tree<R: Rng>(
    x: &[Vec<f64>],
    stats: &[Stat],
    idx: Vec<usize>,
    criterion: Criterion,
    params: TreeParams,
    rng: &mut R,
) -> Tree {
    let d = x[0].len();
    let mut b = Builder {
        x,
        stats,
        criterion,
        params,
        rng,
        tree: Tree {
            nodes: Vec::new(),
            gains: vec![0.0; d],
        },
    };
    b.grow(idx, 0);
    b.tree
}
