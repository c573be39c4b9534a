//! Wrapper feature selection: greedy sequential selection and recursive
//! elimination, both scored by seeded stratified k-fold accuracy.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{train, ClassifierConfig, ClassifierError};
use crate::model::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("infeasible folds: {0}")]
    InfeasibleFolds(String),
    #[error("{0} has no feature importance; RFECV is not applicable")]
    UnsupportedClassifier(String),
    #[error("invalid selection request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub features: Vec<String>,
    pub cv_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: String,
    /// Forward SFS lists features in the order they were added; the other
    /// methods list them in column order.
    pub selected: Vec<String>,
    pub trace: Vec<TraceStep>,
    pub cv_folds: usize,
}

impl SelectionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection result serializes")
    }
}

/// Stratified fold assignment: each class is shuffled with the seed and dealt
/// round-robin, so fold sizes differ by at most one per class.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, SelectionError> {
    let n = dataset.n_rows();
    if k < 2 || k > n {
        return Err(SelectionError::InfeasibleFolds(format!("{k} folds for {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for fast in [false, true] {
        let mut members: Vec<usize> = (0..n).filter(|&i| dataset.labels()[i].is_fast() == fast).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    for (j, test) in folds.iter().enumerate() {
        let train_classes: Vec<bool> = (0..n)
            .filter(|i| !test.contains(i))
            .map(|i| dataset.labels()[i].is_fast())
            .collect();
        if !(train_classes.contains(&true) && train_classes.contains(&false)) {
            return Err(SelectionError::InfeasibleFolds(format!("training split of fold {j} lacks a class")));
        }
    }
    Ok(folds)
}

/// Mean held-out accuracy over the given folds using only columns `cols`.
pub fn cv_accuracy(
    dataset: &Dataset,
    cols: &[usize],
    config: &ClassifierConfig,
    folds: &[Vec<usize>],
) -> Result<f64, SelectionError> {
    let project = |i: usize| -> Vec<f64> { cols.iter().map(|&j| dataset.rows()[i][j]).collect() };
    let mut total = 0.0;
    for test in folds {
        let train_idx: Vec<usize> = (0..dataset.n_rows()).filter(|i| test.binary_search(i).is_err()).collect();
        let x: Vec<Vec<f64>> = train_idx.iter().map(|&i| project(i)).collect();
        let y: Vec<_> = train_idx.iter().map(|&i| dataset.labels()[i]).collect();
        let model = train(config, &x, &y)?;
        let tx: Vec<Vec<f64>> = test.iter().map(|&i| project(i)).collect();
        let pred = model.predict(&tx)?;
        let correct = pred.iter().zip(test).filter(|(p, &i)| **p == dataset.labels()[i]).count();
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / folds.len() as f64)
}

fn names(dataset: &Dataset, cols: &[usize]) -> Vec<String> {
    cols.iter().map(|&j| dataset.feature_names()[j].clone()).collect()
}

/// Index of the best score; the earliest wins ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Greedy sequential selection down or up to `n_features` columns.
///
/// Every step scores each candidate subset by CV accuracy and keeps the best;
/// among equal scores the candidate earliest in column order wins.
pub fn sfs(
    dataset: &Dataset,
    config: &ClassifierConfig,
    n_features: usize,
    direction: Direction,
    cv_folds: usize,
    seed: u64,
) -> Result<SelectionResult, SelectionError> {
    let d = dataset.n_features();
    if n_features == 0 || n_features > d {
        return Err(SelectionError::InvalidRequest(format!("n_features {n_features} not in 1..={d}")));
    }
    let folds = stratified_folds(dataset, cv_folds, seed)?;
    let mut trace = Vec::new();
    let selected = match direction {
        Direction::Forward => {
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < n_features {
                let candidates: Vec<usize> = (0..d).filter(|j| !chosen.contains(j)).collect();
                let subsets: Vec<Vec<usize>> = candidates
                    .iter()
                    .map(|&c| {
                        let mut s = chosen.clone();
                        s.push(c);
                        s.sort_unstable();
                        s
                    })
                    .collect();
                let scores = subsets
                    .par_iter()
                    .map(|s| cv_accuracy(dataset, s, config, &folds))
                    .collect::<Result<Vec<_>, _>>()?;
                let b = argmax(&scores);
                chosen.push(candidates[b]);
                trace.push(TraceStep {
                    features: names(dataset, &subsets[b]),
                    cv_accuracy: scores[b],
                });
            }
            chosen
        }
        Direction::Backward => {
            let mut current: Vec<usize> = (0..d).collect();
            while current.len() > n_features {
                let subsets: Vec<Vec<usize>> = current
                    .iter()
                    .map(|&c| current.iter().copied().filter(|&j| j != c).collect())
                    .collect();
                let scores = subsets
                    .par_iter()
                    .map(|s| cv_accuracy(dataset, s, config, &folds))
                    .collect::<Result<Vec<_>, _>>()?;
                let b = argmax(&scores);
                current = subsets[b].clone();
                trace.push(TraceStep {
                    features: names(dataset, &current),
                    cv_accuracy: scores[b],
                });
            }
            current
        }
    };
    Ok(SelectionResult {
        method: format!("sfs-{direction}"),
        selected: names(dataset, &selected),
        trace,
        cv_folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfecvParams {
    pub cv_folds: usize,
    pub step: usize,
    pub min_features: usize,
}

impl Default for RfecvParams {
    fn default() -> Self {
        Self {
            cv_folds: 5,
            step: 1,
            min_features: 1,
        }
    }
}

/// Recursive elimination with the subset size picked by CV accuracy.
///
/// The elimination path is computed once on all rows: fit, drop the `step`
/// least important columns (on equal importance the later column goes
/// first), repeat down to `min_features`. Each subset on the path is scored
/// by CV; the best score wins and ties go to the smaller subset.
pub fn rfecv(
    dataset: &Dataset,
    config: &ClassifierConfig,
    params: RfecvParams,
    seed: u64,
) -> Result<SelectionResult, SelectionError> {
    if !config.supports_importance() {
        return Err(SelectionError::UnsupportedClassifier(config.name()));
    }
    let d = dataset.n_features();
    if params.step == 0 || params.min_features == 0 || params.min_features > d {
        return Err(SelectionError::InvalidRequest(format!(
            "step {} / min_features {} invalid for {d} features",
            params.step, params.min_features
        )));
    }
    let folds = stratified_folds(dataset, params.cv_folds, seed)?;

    let mut path: Vec<Vec<usize>> = vec![(0..d).collect()];
    loop {
        let current = path.last().unwrap().clone();
        if current.len() <= params.min_features {
            break;
        }
        let x: Vec<Vec<f64>> = dataset
            .rows()
            .iter()
            .map(|r| current.iter().map(|&j| r[j]).collect())
            .collect();
        let model = train(config, &x, dataset.labels())?;
        let imp = model.importance()?;
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(b.cmp(&a)));
        let drop = params.step.min(current.len() - params.min_features);
        let dropped: Vec<usize> = order[..drop].to_vec();
        let next: Vec<usize> = current
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropped.contains(k))
            .map(|(_, &j)| j)
            .collect();
        path.push(next);
    }

    let scores = path
        .par_iter()
        .map(|s| cv_accuracy(dataset, s, config, &folds))
        .collect::<Result<Vec<_>, _>>()?;
    // path runs from largest to smallest; prefer the later index on ties
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s >= scores[best] {
            best = i;
        }
    }
    Ok(SelectionResult {
        method: "rfecv".into(),
        selected: names(dataset, &path[best]),
        trace: path
            .iter()
            .zip(&scores)
            .map(|(s, &cv_accuracy)| TraceStep {
                features: names(dataset, s),
                cv_accuracy,
            })
            .collect(),
        cv_folds: params.cv_folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierKind;
    use crate::model::Label;
    use rand::Rng;

    fn dataset(cols: usize, signal: &[usize], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let fast = i % 2 == 0;
            let row: Vec<f64> = (0..cols)
                .map(|j| {
                    let z: f64 = rng.random_range(-1.0..1.0);
                    if signal.contains(&j) {
                        z + if fast { 3.0 } else { -3.0 }
                    } else {
                        z
                    }
                })
                .collect();
            rows.push(row);
            labels.push(if fast { Label::Fast } else { Label::Slow });
        }
        Dataset::new(
            (0..cols).map(|j| format!("f{j}")).collect(),
            rows,
            labels,
            (0..40).map(|i| i / 4 + 1).collect(),
        )
        .unwrap()
    }

    fn lr() -> ClassifierConfig {
        ClassifierConfig::new(ClassifierKind::Lr, 0)
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let d = dataset(2, &[0], 1);
        let f = stratified_folds(&d, 5, 3).unwrap();
        assert_eq!(f, stratified_folds(&d, 5, 3).unwrap());
        for fold in &f {
            assert_eq!(fold.len(), 8);
            assert_eq!(fold.iter().filter(|&&i| d.labels()[i].is_fast()).count(), 4);
        }
        assert!(stratified_folds(&d, 1, 0).is_err());
    }

    #[test]
    fn perfect_feature_enters_first() {
        let d = dataset(10, &[7], 2);
        let r = sfs(&d, &lr(), 1, Direction::Forward, 5, 0).unwrap();
        assert_eq!(r.selected, vec!["f7"]);
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.trace[0].cv_accuracy, 1.0);
    }

    #[test]
    fn all_features_endpoint() {
        let d = dataset(4, &[1], 3);
        for dir in [Direction::Forward, Direction::Backward] {
            let mut r = sfs(&d, &lr(), 4, dir, 5, 0).unwrap().selected;
            r.sort();
            assert_eq!(r, vec!["f0", "f1", "f2", "f3"]);
        }
        let r = sfs(&d, &lr(), 2, Direction::Backward, 5, 0).unwrap();
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn duplicate_columns_tie_by_order() {
        let base = dataset(4, &[2], 4);
        let rows: Vec<Vec<f64>> = base
            .rows()
            .iter()
            .map(|r| {
                let mut v = r.clone();
                v.insert(1, r[2]);
                v
            })
            .collect();
        // columns: f0, dup(=f2), f1, f2, f3
        let d = Dataset::new(
            vec!["f0".into(), "dup".into(), "f1".into(), "f2".into(), "f3".into()],
            rows,
            base.labels().to_vec(),
            base.participants().to_vec(),
        )
        .unwrap();
        let r = sfs(&d, &lr(), 2, Direction::Forward, 5, 0).unwrap();
        assert_eq!(r.selected[0], "dup");
    }

    #[test]
    fn rfecv_contract() {
        let d = dataset(6, &[0, 3], 5);
        let r = rfecv(&d, &lr(), RfecvParams::default(), 0).unwrap();
        // either planted column alone is perfect, so parsimony keeps one
        assert_eq!(r.selected.len(), 1);
        assert!(r.selected[0] == "f0" || r.selected[0] == "f3", "{:?}", r.selected);
        let sizes: Vec<usize> = r.trace.iter().map(|t| t.features.len()).collect();
        assert_eq!(sizes, vec![6, 5, 4, 3, 2, 1]);

        let knn = ClassifierConfig::new(ClassifierKind::Knn, 0);
        assert!(matches!(
            rfecv(&d, &knn, RfecvParams::default(), 0),
            Err(SelectionError::UnsupportedClassifier(_))
        ));
        let all = rfecv(&d, &lr(), RfecvParams { min_features: 6, ..Default::default() }, 0).unwrap();
        assert_eq!(all.selected.len(), 6);
        assert_eq!(all.trace.len(), 1);

        let stepped = rfecv(&d, &lr(), RfecvParams { step: 2, ..Default::default() }, 0).unwrap();
        let sizes: Vec<usize> = stepped.trace.iter().map(|t| t.features.len()).collect();
        assert_eq!(sizes, vec![6, 4, 2, 1]);
    }

    /// Independent brute force: the greedy two-step path by explicit loops.
    #[test]
    fn forward_pair_matches_brute_force() {
        let d = dataset(4, &[1, 2], 6);
        let folds = stratified_folds(&d, 5, 9).unwrap();
        let score = |cols: &[usize]| cv_accuracy(&d, cols, &lr(), &folds).unwrap();
        let mut first = 0;
        for j in 1..4 {
            if score(&[j]) > score(&[first]) {
                first = j;
            }
        }
        let mut second = None;
        let mut best = f64::NEG_INFINITY;
        for j in 0..4 {
            if j == first {
                continue;
            }
            let mut pair = vec![first, j];
            pair.sort();
            let s = score(&pair);
            if s > best {
                best = s;
                second = Some(j);
            }
        }
        let r = sfs(&d, &lr(), 2, Direction::Forward, 5, 9).unwrap();
        assert_eq!(r.selected, vec![format!("f{first}"), format!("f{}", second.unwrap())]);
        assert_eq!(r.trace[1].cv_accuracy, best);
    }
}
