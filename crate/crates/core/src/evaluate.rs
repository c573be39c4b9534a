//! Leave-one-participant-out evaluation, accuracy metrics and the
//! classifier × selection-mode report matrix.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{train, ClassifierConfig, ClassifierError, ClassifierKind};
use crate::explain::{mean_abs_shap, ExplainError};
use crate::model::{ppg_eda_feature_names, ppg_feature_names, Dataset, EvaluationReport, FoldResult, Label, ModelError};
use crate::pipeline::{apply_scaler, fit_scaler, PipelineError, ScalerMethod, ScalerParams};
use crate::selection::{rfecv, sfs, Direction, RfecvParams, SelectionError, SelectionResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FoldError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("need at least 2 participants, got {0}")]
    SingleParticipant(usize),
    #[error("fold holding out participant {participant}: {source}")]
    Fold { participant: u32, source: FoldError },
    #[error("{0} has no feature importance; RFECV is not applicable")]
    NotApplicable(String),
    #[error("length mismatch: {predicted} predictions, {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fixed feature subsets taken from the canonical names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManualSubset {
    Ppg,
    PpgEda,
}

impl ManualSubset {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            ManualSubset::Ppg => ppg_feature_names(),
            ManualSubset::PpgEda => ppg_eda_feature_names(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionMode {
    None,
    Sfs { n_features: usize, direction: Direction, cv_folds: usize },
    Rfecv(RfecvParams),
    Manual(ManualSubset),
}

impl SelectionMode {
    /// Forward selection of 12 features with 5-fold CV.
    pub fn sfs_default() -> Self {
        SelectionMode::Sfs {
            n_features: 12,
            direction: Direction::Forward,
            cv_folds: 5,
        }
    }

    /// The report columns in order: none, SFS, RFECV, PPG, PPG+EDA.
    pub fn columns() -> [SelectionMode; 5] {
        [
            SelectionMode::None,
            SelectionMode::sfs_default(),
            SelectionMode::Rfecv(RfecvParams::default()),
            SelectionMode::Manual(ManualSubset::Ppg),
            SelectionMode::Manual(ManualSubset::PpgEda),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionMode::None => "none",
            SelectionMode::Sfs { .. } => "sfs",
            SelectionMode::Rfecv(_) => "rfecv",
            SelectionMode::Manual(ManualSubset::Ppg) => "ppg",
            SelectionMode::Manual(ManualSubset::PpgEda) => "ppg+eda",
        }
    }

    /// Whether `config` can run under this mode at all.
    pub fn applicable(&self, config: &ClassifierConfig) -> bool {
        !matches!(self, SelectionMode::Rfecv(_)) || config.supports_importance()
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionMode::columns()
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown selection mode `{s}` (expected none, sfs, rfecv, ppg, ppg+eda)"))
    }
}

pub(crate) fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(0x632B_E59B_D9B4_E019).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the fold that holds out `participant`.
pub fn fold_seed(seed: u64, participant: u32) -> u64 {
    mix(seed, u64::from(participant))
}

/// Row indices of one leave-one-participant-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub held_out: u32,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per participant, in ascending participant order.
pub fn fold_plan(dataset: &Dataset) -> Vec<Fold> {
    dataset
        .participant_ids()
        .into_iter()
        .map(|p| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..dataset.n_rows()).partition(|&i| dataset.participants()[i] == p);
            Fold { held_out: p, train, test }
        })
        .collect()
}

/// What a fold learned from its training rows, kept for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldArtifacts {
    pub held_out: u32,
    pub scaler: ScalerParams,
    pub selection: Option<SelectionResult>,
}

/// Options beyond the protocol itself.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LosoOptions {
    /// Compute mean |shap| on each fold's held-out rows.
    pub shap: bool,
    /// Coalition budget for the kernel estimator; default when `None`.
    pub shap_samples: Option<usize>,
}

fn run_fold(
    dataset: &Dataset,
    fold: &Fold,
    config: &ClassifierConfig,
    scaler: ScalerMethod,
    mode: &SelectionMode,
    seed: u64,
    options: LosoOptions,
) -> Result<(FoldResult, FoldArtifacts), FoldError> {
    let seed = fold_seed(seed, fold.held_out);
    let config = ClassifierConfig { seed, ..*config };
    let train_set = dataset.subset_rows(&fold.train);
    let test_set = dataset.subset_rows(&fold.test);
    let params = fit_scaler(train_set.rows(), scaler)?;
    let train_set = train_set.with_rows(apply_scaler(&params, train_set.rows())?)?;
    let test_set = test_set.with_rows(apply_scaler(&params, test_set.rows())?)?;

    let selection = match *mode {
        SelectionMode::None | SelectionMode::Manual(_) => None,
        SelectionMode::Sfs { n_features, direction, cv_folds } => {
            Some(sfs(&train_set, &config, n_features.min(train_set.n_features()), direction, cv_folds, seed)?)
        }
        SelectionMode::Rfecv(p) => Some(rfecv(&train_set, &config, p, seed)?),
    };
    let selected: Vec<String> = match (mode, &selection) {
        (SelectionMode::Manual(m), _) => m.names().iter().map(|s| s.to_string()).collect(),
        (_, Some(s)) => {
            let mut cols = train_set.column_indices(&s.selected)?;
            cols.sort_unstable();
            cols.into_iter().map(|j| train_set.feature_names()[j].clone()).collect()
        }
        _ => train_set.feature_names().to_vec(),
    };
    let train_set = train_set.select_columns(&selected)?;
    let test_set = test_set.select_columns(&selected)?;

    let model = train(&config, train_set.rows(), train_set.labels())?;
    let predicted = model.predict(test_set.rows())?;
    let acc = accuracy(&predicted, test_set.labels()).expect("held-out set is non-empty");

    let per_feature_mean_abs_shap = if options.shap {
        mean_abs_shap(&model, test_set.rows(), train_set.rows(), &selected, options.shap_samples, seed)?
            .into_iter()
            .map(|f| (f.feature, f.mean_abs_shap))
            .collect()
    } else {
        Vec::new()
    };
    let mut train_participants: Vec<u32> = train_set.participant_ids();
    train_participants.dedup();
    Ok((
        FoldResult {
            held_out_participant: fold.held_out,
            train_participants,
            n_test: fold.test.len(),
            accuracy: acc,
            selected_feature_names: selected,
            per_feature_mean_abs_shap,
        },
        FoldArtifacts {
            held_out: fold.held_out,
            scaler: params,
            selection,
        },
    ))
}

/// Leave-one-participant-out evaluation, also returning what each fold fit.
///
/// Scaling and selection see the training rows only. Fold `p` derives its
/// seed from `seed` and `p`, and folds run in parallel.
pub fn losocv_detailed(
    dataset: &Dataset,
    config: &ClassifierConfig,
    scaler: ScalerMethod,
    mode: &SelectionMode,
    seed: u64,
    options: LosoOptions,
) -> Result<(EvaluationReport, Vec<FoldArtifacts>), EvaluateError> {
    let folds = fold_plan(dataset);
    if folds.len() < 2 {
        return Err(EvaluateError::SingleParticipant(folds.len()));
    }
    if !mode.applicable(config) {
        return Err(EvaluateError::NotApplicable(config.name()));
    }
    let results = folds
        .par_iter()
        .map(|f| {
            run_fold(dataset, f, config, scaler, mode, seed, options).map_err(|source| EvaluateError::Fold {
                participant: f.held_out,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (per_fold, artifacts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = EvaluationReport::from_folds(config.name(), mode.name().to_string(), scaler.to_string(), seed, per_fold);
    Ok((report, artifacts))
}

pub fn losocv(
    dataset: &Dataset,
    config: &ClassifierConfig,
    scaler: ScalerMethod,
    mode: &SelectionMode,
    seed: u64,
) -> Result<EvaluationReport, EvaluateError> {
    losocv_detailed(dataset, config, scaler, mode, seed, LosoOptions::default()).map(|(r, _)| r)
}

pub fn accuracy(predicted: &[Label], actual: &[Label]) -> Result<f64, EvaluateError> {
    if predicted.len() != actual.len() {
        return Err(EvaluateError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvaluateError::Empty);
    }
    let hits = predicted.iter().zip(actual).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Accuracy of always predicting the larger class.
pub fn majority_baseline(dataset: &Dataset) -> Result<f64, EvaluateError> {
    if dataset.is_empty() {
        return Err(EvaluateError::Empty);
    }
    let (slow, fast) = dataset.class_counts();
    Ok(slow.max(fast) as f64 / dataset.n_rows() as f64)
}

/// A report cell: a mean accuracy, or not applicable. Serializes as a number
/// or the string `"N.A."`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Accuracy(f64),
    NotApplicable,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Accuracy(a) => write!(f, "{a}"),
            Cell::NotApplicable => f.write_str("N.A."),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Accuracy(a) => s.serialize_f64(*a),
            Cell::NotApplicable => s.serialize_str("N.A."),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(Cell::Accuracy(a)),
            Raw::Text(t) if t == "N.A." => Ok(Cell::NotApplicable),
            Raw::Text(t) => Err(de::Error::custom(format!("unexpected cell `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub classifier: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMatrix {
    pub schema_version: u32,
    pub scaling: String,
    pub seed: u64,
    pub majority_baseline: f64,
    pub columns: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

impl ReportMatrix {
    pub fn cell(&self, classifier: &str, column: &str) -> Option<Cell> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.classifier == classifier).map(|r| r.cells[c])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schema_version: {}", self.schema_version)?;
        writeln!(out, "classifier,{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.cells.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{}", r.classifier, cells.join(","))?;
        }
        Ok(())
    }
}

/// Mean LOSOCV accuracy for every classifier and selection mode; RFECV with
/// a classifier lacking importances yields [`Cell::NotApplicable`].
pub fn report_matrix(
    dataset: &Dataset,
    configs: &[ClassifierConfig],
    modes: &[SelectionMode],
    scaler: ScalerMethod,
    seed: u64,
) -> Result<ReportMatrix, EvaluateError> {
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let mut cells = Vec::with_capacity(modes.len());
        for mode in modes {
            cells.push(match losocv(dataset, config, scaler, mode, seed) {
                Ok(r) => Cell::Accuracy(r.mean_accuracy),
                Err(EvaluateError::NotApplicable(_)) => Cell::NotApplicable,
                Err(e) => return Err(e),
            });
        }
        rows.push(MatrixRow {
            classifier: config.name(),
            cells,
        });
    }
    Ok(ReportMatrix {
        schema_version: REPORT_SCHEMA_VERSION,
        scaling: scaler.to_string(),
        seed,
        majority_baseline: majority_baseline(dataset)?,
        columns: modes.iter().map(|m| m.name().to_string()).collect(),
        rows,
    })
}

/// Default configuration of every classifier kind, in report order.
pub fn all_classifiers(seed: u64) -> Vec<ClassifierConfig> {
    ClassifierKind::ALL.iter().map(|&k| ClassifierConfig::new(k, seed)).collect()
}

#[derive(Serialize)]
struct VersionedReport<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

pub fn report_json(report: &EvaluationReport) -> String {
    serde_json::to_string_pretty(&VersionedReport {
        schema_version: REPORT_SCHEMA_VERSION,
        report,
    })
    .expect("report serializes")
}

pub fn write_report_csv<W: Write>(report: &EvaluationReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# schema_version: {REPORT_SCHEMA_VERSION}")?;
    writeln!(out, "held_out_participant,n_test,accuracy,selected_features")?;
    for f in &report.per_fold {
        writeln!(
            out,
            "{},{},{},{}",
            f.held_out_participant,
            f.n_test,
            f.accuracy,
            f.selected_feature_names.join(";")
        )?;
    }
    Ok(())
}
