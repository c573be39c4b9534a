//! Eleven binary classifiers behind one train / predict / importance API.
//!
//! Labels map to 0/1 (slow/fast) internally and every model produces a real
//! decision score; positive scores predict fast, zero and below slow.
//! Training rows are put into a canonical order first, so a model does not
//! depend on the order its rows arrive in.

mod ensemble;
mod linear;
mod svm;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use svm::Kernel;

use crate::model::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} does not implement a feature importance measure")]
    Unsupported(String),
    #[error("model file: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    Svc,
    Dtc,
    Knn,
    Gnb,
    Lr,
    Lda,
    Qda,
    Rf,
    Gb,
    Ab,
    Xgb,
}

impl ClassifierKind {
    /// Reporting order.
    pub const ALL: [ClassifierKind; 11] = [
        ClassifierKind::Svc,
        ClassifierKind::Dtc,
        ClassifierKind::Knn,
        ClassifierKind::Gnb,
        ClassifierKind::Lr,
        ClassifierKind::Lda,
        ClassifierKind::Qda,
        ClassifierKind::Rf,
        ClassifierKind::Gb,
        ClassifierKind::Ab,
        ClassifierKind::Xgb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Svc => "SVC",
            ClassifierKind::Dtc => "DTC",
            ClassifierKind::Knn => "KNN",
            ClassifierKind::Gnb => "GNB",
            ClassifierKind::Lr => "LR",
            ClassifierKind::Lda => "LDA",
            ClassifierKind::Qda => "QDA",
            ClassifierKind::Rf => "RF",
            ClassifierKind::Gb => "GB",
            ClassifierKind::Ab => "AB",
            ClassifierKind::Xgb => "XGB",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown classifier `{s}`"))
    }
}

/// Per-kind hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyper {
    Svc {
        linear: bool,
        c: f64,
        /// RBF width; `None` uses `1 / (d * var(X))`.
        gamma: Option<f64>,
    },
    Dtc {
        max_depth: Option<usize>,
        min_samples_leaf: usize,
    },
    Knn {
        k: usize,
    },
    Gnb {
        var_smoothing: f64,
    },
    Lr {
        c: f64,
        max_iter: usize,
    },
    Lda {
        ridge: f64,
    },
    Qda {
        ridge: f64,
    },
    Rf {
        n_trees: usize,
        max_depth: Option<usize>,
        min_samples_leaf: usize,
        /// Features tried per split; `None` uses `floor(sqrt(d))`.
        max_features: Option<usize>,
    },
    Gb {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
    },
    Ab {
        n_stumps: usize,
        learning_rate: f64,
    },
    Xgb {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        lambda: f64,
        min_child_weight: f64,
    },
}

impl Hyper {
    pub fn defaults(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Svc => Hyper::Svc { linear: false, c: 1.0, gamma: None },
            ClassifierKind::Dtc => Hyper::Dtc { max_depth: None, min_samples_leaf: 1 },
            ClassifierKind::Knn => Hyper::Knn { k: 5 },
            ClassifierKind::Gnb => Hyper::Gnb { var_smoothing: 1e-9 },
            ClassifierKind::Lr => Hyper::Lr { c: 1.0, max_iter: 100 },
            ClassifierKind::Lda => Hyper::Lda { ridge: 1e-6 },
            ClassifierKind::Qda => Hyper::Qda { ridge: 1e-6 },
            ClassifierKind::Rf => Hyper::Rf {
                n_trees: 100,
                max_depth: None,
                min_samples_leaf: 1,
                max_features: None,
            },
            ClassifierKind::Gb => Hyper::Gb { n_rounds: 100, learning_rate: 0.1, max_depth: 3 },
            ClassifierKind::Ab => Hyper::Ab { n_stumps: 50, learning_rate: 1.0 },
            ClassifierKind::Xgb => Hyper::Xgb {
                n_rounds: 100,
                learning_rate: 0.1,
                max_depth: 3,
                lambda: 1.0,
                min_child_weight: 1.0,
            },
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyper::Svc { .. } => ClassifierKind::Svc,
            Hyper::Dtc { .. } => ClassifierKind::Dtc,
            Hyper::Knn { .. } => ClassifierKind::Knn,
            Hyper::Gnb { .. } => ClassifierKind::Gnb,
            Hyper::Lr { .. } => ClassifierKind::Lr,
            Hyper::Lda { .. } => ClassifierKind::Lda,
            Hyper::Qda { .. } => ClassifierKind::Qda,
            Hyper::Rf { .. } => ClassifierKind::Rf,
            Hyper::Gb { .. } => ClassifierKind::Gb,
            Hyper::Ab { .. } => ClassifierKind::Ab,
            Hyper::Xgb { .. } => ClassifierKind::Xgb,
        }
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::ConfigInvalid(m.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            Hyper::Svc { c, gamma, .. } => {
                if !pos(c) {
                    return bad("SVC C must be positive");
                }
                if gamma.is_some_and(|g| !pos(g)) {
                    return bad("SVC gamma must be positive");
                }
            }
            Hyper::Dtc { max_depth, min_samples_leaf } => {
                if max_depth == Some(0) || min_samples_leaf == 0 {
                    return bad("tree depth and leaf size must be at least 1");
                }
            }
            Hyper::Knn { k: 0 } => return bad("k must be at least 1"),
            Hyper::Gnb { var_smoothing } if !nonneg(var_smoothing) => return bad("var_smoothing must be >= 0"),
            Hyper::Lr { c, max_iter } => {
                if !pos(c) || max_iter == 0 {
                    return bad("LR needs C > 0 and max_iter >= 1");
                }
            }
            Hyper::Lda { ridge } | Hyper::Qda { ridge } if !nonneg(ridge) => return bad("ridge must be >= 0"),
            Hyper::Rf { n_trees, max_depth, min_samples_leaf, max_features } => {
                if n_trees == 0 || max_depth == Some(0) || min_samples_leaf == 0 || max_features == Some(0) {
                    return bad("forest sizes must be at least 1");
                }
            }
            Hyper::Gb { n_rounds, learning_rate, max_depth } => {
                if n_rounds == 0 || !pos(learning_rate) || max_depth == 0 {
                    return bad("GB needs rounds >= 1, rate > 0, depth >= 1");
                }
            }
            Hyper::Ab { n_stumps, learning_rate } => {
                if n_stumps == 0 || !pos(learning_rate) {
                    return bad("AB needs stumps >= 1 and rate > 0");
                }
            }
            Hyper::Xgb { n_rounds, learning_rate, max_depth, lambda, min_child_weight } => {
                if n_rounds == 0 || !pos(learning_rate) || max_depth == 0 || !nonneg(lambda) || !nonneg(min_child_weight) {
                    return bad("XGB needs rounds >= 1, rate > 0, depth >= 1, lambda >= 0");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hyper: Hyper,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        Self {
            hyper: Hyper::defaults(kind),
            seed,
        }
    }

    /// Linear-kernel SVC, the variant with coefficient importances.
    pub fn svc_linear(seed: u64) -> Self {
        Self {
            hyper: Hyper::Svc { linear: true, c: 1.0, gamma: None },
            seed,
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        self.hyper.kind()
    }

    /// Whether trained models expose `importance`.
    pub fn supports_importance(&self) -> bool {
        match self.hyper {
            Hyper::Svc { linear, .. } => linear,
            Hyper::Knn { .. } | Hyper::Gnb { .. } | Hyper::Qda { .. } => false,
            _ => true,
        }
    }

    /// Command-line name: the kind, or `svc-linear`.
    pub fn name(&self) -> String {
        match self.hyper {
            Hyper::Svc { linear: true, .. } => "SVC-linear".to_string(),
            _ => self.kind().name().to_string(),
        }
    }

    /// Parses a kind name or `svc-linear` into a default configuration.
    pub fn parse(name: &str, seed: u64) -> Result<Self, String> {
        if name.eq_ignore_ascii_case("svc-linear") {
            return Ok(Self::svc_linear(seed));
        }
        name.parse::<ClassifierKind>().map(|k| Self::new(k, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Params {
    Svm(svm::Svm),
    Tree(tree::Tree),
    Knn { rows: Vec<Vec<f64>>, targets: Vec<f64>, k: usize },
    Gnb(linear::NaiveBayes),
    Linear(linear::Linear),
    Lda { model: linear::Linear, means: [Vec<f64>; 2] },
    Qda(linear::Qda),
    Forest(ensemble::Forest),
    Boosted(ensemble::Boosted),
    AdaBoost(ensemble::AdaBoost),
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    format_version: u32,
    config: ClassifierConfig,
    n_features: usize,
    /// Class order of the 0/1 targets.
    classes: [Label; 2],
    params: Params,
}

fn canonical_order(x: &[Vec<f64>], y: &[Label]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].is_fast().cmp(&y[b].is_fast()))
    });
    idx
}

/// Fits a model. Rows are reordered canonically before fitting.
pub fn train(config: &ClassifierConfig, x: &[Vec<f64>], y: &[Label]) -> Result<TrainedModel, ClassifierError> {
    config.hyper.validate()?;
    if x.len() != y.len() {
        return Err(ClassifierError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(ClassifierError::TooFewRows(x.len()));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(ClassifierError::ConfigInvalid("no features".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(ClassifierError::DimensionMismatch { expected: d, got: r.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite);
    }
    let n_fast = y.iter().filter(|l| l.is_fast()).count();
    if n_fast == 0 || n_fast == y.len() {
        return Err(ClassifierError::SingleClass);
    }

    let order = canonical_order(x, y);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| if y[i].is_fast() { 1.0 } else { 0.0 }).collect();
    let n = xs.len();

    let params = match config.hyper {
        Hyper::Svc { linear, c, gamma } => {
            let kernel = if linear {
                Kernel::Linear
            } else {
                Kernel::Rbf { gamma: gamma.unwrap_or_else(|| svm::scale_gamma(&xs)) }
            };
            let pm: Vec<f64> = ys.iter().map(|v| 2.0 * v - 1.0).collect();
            Params::Svm(svm::train_svm(&xs, &pm, c, kernel))
        }
        Hyper::Dtc { max_depth, min_samples_leaf } => {
            let stats: Vec<tree::Stat> = ys.iter().map(|&v| [1.0, v, 0.0, 0.0]).collect();
            let p = tree::TreeParams {
                max_depth,
                min_samples_split: 2,
                min_samples_leaf,
                max_features: None,
            };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
            Params::Tree(tree::grow_tree(&xs, &stats, (0..n).collect(), tree::Criterion::Gini, p, &mut rng))
        }
        Hyper::Knn { k } => Params::Knn { rows: xs, targets: ys, k },
        Hyper::Gnb { var_smoothing } => Params::Gnb(linear::train_gnb(&xs, &ys, var_smoothing)),
        Hyper::Lr { c, max_iter } => Params::Linear(linear::train_lr(&xs, &ys, c, max_iter)),
        Hyper::Lda { ridge } => {
            let (model, means) = linear::train_lda(&xs, &ys, ridge);
            Params::Lda { model, means }
        }
        Hyper::Qda { ridge } => Params::Qda(linear::train_qda(&xs, &ys, ridge)),
        Hyper::Rf { n_trees, max_depth, min_samples_leaf, max_features } => {
            let m = max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
            let p = tree::TreeParams {
                max_depth,
                min_samples_split: 2,
                min_samples_leaf,
                max_features: Some(m.min(d)),
            };
            Params::Forest(ensemble::train_forest(&xs, &ys, n_trees, p, config.seed))
        }
        Hyper::Gb { n_rounds, learning_rate, max_depth } => {
            let p = tree::TreeParams {
                max_depth: Some(max_depth),
                min_samples_split: 2,
                min_samples_leaf: 1,
                max_features: None,
            };
            Params::Boosted(ensemble::train_gb(&xs, &ys, n_rounds, learning_rate, p))
        }
        Hyper::Ab { n_stumps, learning_rate } => {
            Params::AdaBoost(ensemble::train_adaboost(&xs, &ys, n_stumps, learning_rate))
        }
        Hyper::Xgb { n_rounds, learning_rate, max_depth, lambda, min_child_weight } => {
            let p = tree::TreeParams {
                max_depth: Some(max_depth),
                min_samples_split: 2,
                min_samples_leaf: 1,
                max_features: None,
            };
            Params::Boosted(ensemble::train_xgb(&xs, &ys, n_rounds, learning_rate, lambda, min_child_weight, p))
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: *config,
        n_features: d,
        classes: [Label::Slow, Label::Fast],
        params,
    })
}

fn knn_score(rows: &[Vec<f64>], targets: &[f64], k: usize, x: &[f64]) -> f64 {
    let mut dist: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(rows.len());
    // ties by canonical row position, which the training sort fixed
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist[..k].iter().map(|(_, i)| targets[*i]).sum::<f64>() / k as f64 - 0.5
}

impl TrainedModel {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn kind(&self) -> ClassifierKind {
        self.config.kind()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn check(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.n_features {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Score of a single row; caller guarantees the dimension.
    pub fn score_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Svm(m) => m.decision(x),
            Params::Tree(t) => t.predict(x) - 0.5,
            Params::Knn { rows, targets, k } => knn_score(rows, targets, *k, x),
            Params::Gnb(m) => m.decision(x),
            Params::Linear(m) => m.decision(x),
            Params::Lda { model, .. } => model.decision(x),
            Params::Qda(m) => m.decision(x),
            Params::Forest(f) => f.decision(x),
            Params::Boosted(b) => b.decision(x),
            Params::AdaBoost(a) => a.decision(x),
        }
    }

    /// Real-valued scores, increasing with confidence in the fast class.
    pub fn decision_scores(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, ClassifierError> {
        x.iter()
            .map(|r| {
                self.check(r)?;
                Ok(self.score_row(r))
            })
            .collect()
    }

    /// Fast iff the score is strictly positive.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Label>, ClassifierError> {
        Ok(self
            .decision_scores(x)?
            .into_iter()
            .map(|s| if s > 0.0 { self.classes[1] } else { self.classes[0] })
            .collect())
    }

    /// Non-negative per-feature weights: absolute coefficients for linear
    /// models, normalized impurity decrease for trees and ensembles.
    pub fn importance(&self) -> Result<Vec<f64>, ClassifierError> {
        let unsupported = || Err(ClassifierError::Unsupported(self.config.name()));
        match &self.params {
            Params::Svm(m) => match &m.weights {
                Some(w) => Ok(w.iter().map(|v| v.abs()).collect()),
                None => unsupported(),
            },
            Params::Linear(m) | Params::Lda { model: m, .. } => Ok(m.weights.iter().map(|v| v.abs()).collect()),
            Params::Tree(t) => {
                let s: f64 = t.gains.iter().sum();
                Ok(t.gains.iter().map(|g| if s > 0.0 { g / s } else { 0.0 }).collect())
            }
            Params::Forest(f) => Ok(f.importance()),
            Params::Boosted(b) => Ok(b.importance()),
            Params::AdaBoost(a) => Ok(a.importance()),
            Params::Knn { .. } | Params::Gnb(_) | Params::Qda(_) => unsupported(),
        }
    }

    /// Weighted training error of every AdaBoost stump, if this is one.
    pub fn stump_errors(&self) -> Option<&[f64]> {
        match &self.params {
            Params::AdaBoost(a) => Some(&a.errors),
            _ => None,
        }
    }

    /// Class means learned by the Gaussian models, `[slow, fast]`.
    pub fn class_means(&self) -> Option<[&[f64]; 2]> {
        match &self.params {
            Params::Gnb(m) => Some([&m.means[0], &m.means[1]]),
            Params::Lda { means, .. } => Some([&means[0], &means[1]]),
            Params::Qda(m) => Some([&m.classes[0].mean, &m.classes[1].mean]),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: TrainedModel = serde_json::from_str(text).map_err(|e| ClassifierError::Persist(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Persist(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json()).map_err(|e| ClassifierError::Persist(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassifierError::Persist(e.to_string()))?;
        Self::from_json(&text)
    }
}
