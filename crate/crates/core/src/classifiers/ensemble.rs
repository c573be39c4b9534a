//! Random forest, gradient boosting, AdaBoost (SAMME) and second-order
//! boosting, all on the shared tree grower.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Criterion, Stat, Tree, TreeParams};

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ (k.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normalized(g: &[f64]) -> Vec<f64> {
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.iter().map(|v| v / s).collect()
    } else {
        vec![0.0; g.len()]
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean fast-class probability minus one half.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64 - 0.5
    }

    pub fn importance(&self) -> Vec<f64> {
        let d = self.trees[0].gains.len();
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(normalized(&t.gains)) {
                *a += v;
            }
        }
        normalized(&acc)
    }
}

/// Bootstrap-aggregated CART trees; tree `k` draws from its own seeded
/// stream so the forest is identical regardless of thread count.
pub(crate) fn train_forest(x: &[Vec<f64>], y: &[f64], n_trees: usize, params: TreeParams, seed: u64) -> Forest {
    let n = x.len();
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, k as u64));
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1.0;
            }
            let stats: Vec<Stat> = (0..n).map(|i| [counts[i], counts[i] * y[i], 0.0, 0.0]).collect();
            let idx: Vec<usize> = (0..n).filter(|&i| counts[i] > 0.0).collect();
            grow_tree(x, &stats, idx, Criterion::Gini, params, &mut rng)
        })
        .collect();
    Forest { trees }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Boosted {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Boosted {
    /// Additive log-odds score.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn importance(&self) -> Vec<f64> {
        let d = self.trees.first().map_or(0, |t| t.gains.len());
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            for (a, g) in acc.iter_mut().zip(&t.gains) {
                *a += g;
            }
        }
        normalized(&acc)
    }
}

/// Log-loss gradient boosting with least-squares trees and Newton leaves.
pub(crate) fn train_gb(x: &[Vec<f64>], y: &[f64], rounds: usize, lr: f64, params: TreeParams) -> Boosted {
    let n = x.len();
    let p = y.iter().sum::<f64>() / n as f64;
    let init = (p / (1.0 - p)).ln();
    let mut f = vec![init; n];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut trees = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let stats: Vec<Stat> = (0..n)
            .map(|i| {
                let pi = sigmoid(f[i]);
                let r = y[i] - pi;
                [1.0, r, r * r, pi * (1.0 - pi)]
            })
            .collect();
        let t = grow_tree(x, &stats, (0..n).collect(), Criterion::Residual, params, &mut rng);
        for i in 0..n {
            f[i] += lr * t.predict(&x[i]);
        }
        trees.push(t);
    }
    Boosted {
        init,
        learning_rate: lr,
        trees,
    }
}

/// Second-order boosting: splits and leaves from gradient/Hessian sums with
/// an L2 penalty on leaf weights. Starts from a 0.5 base probability.
pub(crate) fn train_xgb(
    x: &[Vec<f64>],
    y: &[f64],
    rounds: usize,
    lr: f64,
    lambda: f64,
    min_child_weight: f64,
    params: TreeParams,
) -> Boosted {
    let n = x.len();
    let mut f = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut trees = Vec::with_capacity(rounds);
    let criterion = Criterion::Newton { lambda, min_child_weight };
    for _ in 0..rounds {
        let stats: Vec<Stat> = (0..n)
            .map(|i| {
                let pi = sigmoid(f[i]);
                [1.0, pi - y[i], (pi * (1.0 - pi)).max(1e-16), 0.0]
            })
            .collect();
        let t = grow_tree(x, &stats, (0..n).collect(), criterion, params, &mut rng);
        for i in 0..n {
            f[i] += lr * t.predict(&x[i]);
        }
        trees.push(t);
    }
    Boosted {
        init: 0.0,
        learning_rate: lr,
        trees,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AdaBoost {
    pub stumps: Vec<Tree>,
    pub alphas: Vec<f64>,
    /// Weighted training error of every fitted stump.
    pub errors: Vec<f64>,
    /// Score used when no stump beat chance.
    pub fallback: f64,
}

impl AdaBoost {
    pub fn decision(&self, x: &[f64]) -> f64 {
        if self.stumps.is_empty() {
            return self.fallback;
        }
        self.stumps
            .iter()
            .zip(&self.alphas)
            .map(|(s, a)| a * if s.predict(x) > 0.5 { 1.0 } else { -1.0 })
            .sum()
    }

    pub fn importance(&self) -> Vec<f64> {
        let d = self.stumps.first().map_or(0, |t| t.gains.len());
        let mut acc = vec![0.0; d];
        for (s, a) in self.stumps.iter().zip(&self.alphas) {
            for (v, g) in acc.iter_mut().zip(normalized(&s.gains)) {
                *v += a * g;
            }
        }
        normalized(&acc)
    }
}

/// Two-class SAMME on depth-1 stumps. Stops early on a perfect stump or
/// when a stump's weighted error reaches one half.
pub(crate) fn train_adaboost(x: &[Vec<f64>], y: &[f64], n_stumps: usize, lr: f64) -> AdaBoost {
    let n = x.len();
    let mut w = vec![1.0 / n as f64; n];
    let params = TreeParams {
        max_depth: Some(1),
        min_samples_split: 2,
        min_samples_leaf: 1,
        max_features: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = AdaBoost {
        stumps: Vec::new(),
        alphas: Vec::new(),
        errors: Vec::new(),
        fallback: if y.iter().sum::<f64>() * 2.0 > n as f64 { 1.0 } else { -1.0 },
    };
    for _ in 0..n_stumps {
        let stats: Vec<Stat> = (0..n).map(|i| [w[i], w[i] * y[i], 0.0, 0.0]).collect();
        let stump = grow_tree(x, &stats, (0..n).collect(), Criterion::Gini, params, &mut rng);
        let wrong: Vec<bool> = (0..n).map(|i| (stump.predict(&x[i]) > 0.5) != (y[i] > 0.5)).collect();
        let total: f64 = w.iter().sum();
        let err = wrong.iter().zip(&w).filter(|(b, _)| **b).map(|(_, v)| v).sum::<f64>() / total;
        if err >= 0.5 {
            break;
        }
        if err <= 0.0 {
            model.stumps.push(stump);
            model.alphas.push(1.0);
            model.errors.push(0.0);
            break;
        }
        let alpha = lr * ((1.0 - err) / err).ln();
        for i in 0..n {
            if wrong[i] {
                w[i] *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        model.stumps.push(stump);
        model.alphas.push(alpha);
        model.errors.push(err);
    }
    model
}
