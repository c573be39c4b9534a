//! From sessions to a learning-ready dataset: background subtraction, label
//! derivation, per-fold scaling and the dataset CSV format.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_task_and_baseline, ExtractConfig, ExtractError};
use crate::model::{Dataset, FeatureVector, Label, ModelError, SessionRecord, N_FEATURES};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature extraction failed for {}", list_failures(.0))]
    Extraction(Vec<(String, ExtractError)>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset csv: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn list_failures(failures: &[(String, ExtractError)]) -> String {
    failures.iter().map(|(s, e)| format!("{s} ({e})")).collect::<Vec<_>>().join(", ")
}

/// Elementwise `task - baseline`.
pub fn background_subtract(task: &FeatureVector, baseline: &FeatureVector) -> FeatureVector {
    let mut out = [0.0; N_FEATURES];
    for (o, (t, b)) in out.iter_mut().zip(task.0.iter().zip(&baseline.0)) {
        *o = t - b;
    }
    FeatureVector(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerMethod {
    None,
    MinMax,
    ZScore,
}

impl ScalerMethod {
    pub const ALL: [ScalerMethod; 3] = [ScalerMethod::None, ScalerMethod::MinMax, ScalerMethod::ZScore];
}

impl fmt::Display for ScalerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalerMethod::None => "none",
            ScalerMethod::MinMax => "minmax",
            ScalerMethod::ZScore => "zscore",
        })
    }
}

impl FromStr for ScalerMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ScalerMethod::None),
            "minmax" | "min-max" => Ok(ScalerMethod::MinMax),
            "zscore" | "z-score" => Ok(ScalerMethod::ZScore),
            other => Err(format!("unknown scaling `{other}` (none, minmax, zscore)")),
        }
    }
}

/// Per-column statistics: `(min, max)` for min-max, `(mean, population SD)`
/// for z-score, nothing for `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub method: ScalerMethod,
    pub n_features: usize,
    pub stats: Vec<(f64, f64)>,
}

pub fn fit_scaler(rows: &[Vec<f64>], method: ScalerMethod) -> Result<ScalerParams, PipelineError> {
    if rows.len() < 2 {
        return Err(PipelineError::TooFewRows(rows.len()));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(PipelineError::DimensionMismatch { expected: d, got: r.len() });
    }
    let column = |j: usize| rows.iter().map(move |r| r[j]);
    let stats = match method {
        ScalerMethod::None => Vec::new(),
        ScalerMethod::MinMax => (0..d)
            .map(|j| {
                column(j).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .collect(),
        ScalerMethod::ZScore => (0..d)
            .map(|j| {
                let n = rows.len() as f64;
                let mean = column(j).sum::<f64>() / n;
                let var = column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect(),
    };
    Ok(ScalerParams {
        method,
        n_features: d,
        stats,
    })
}

/// Applies fitted statistics. A column that was constant in training maps to
/// 0; unseen values are not clipped.
pub fn apply_scaler(params: &ScalerParams, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PipelineError> {
    if let Some(r) = rows.iter().find(|r| r.len() != params.n_features) {
        return Err(PipelineError::DimensionMismatch {
            expected: params.n_features,
            got: r.len(),
        });
    }
    Ok(rows
        .iter()
        .map(|r| match params.method {
            ScalerMethod::None => r.clone(),
            ScalerMethod::MinMax => r
                .iter()
                .zip(&params.stats)
                .map(|(v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                .collect(),
            ScalerMethod::ZScore => r
                .iter()
                .zip(&params.stats)
                .map(|(v, &(mean, sd))| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    /// Scaled ratings strictly above this are fast.
    pub threshold: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self { threshold: 3.0 }
    }
}

/// Rescales each participant's ratings onto [1, 5] and thresholds them.
///
/// A participant whose ratings are all equal keeps the raw value. Output
/// preserves the input order of every participant's ratings.
pub fn derive_labels(
    ratings: &BTreeMap<u32, Vec<f64>>,
    rule: LabelRule,
) -> BTreeMap<u32, Vec<(f64, Label)>> {
    ratings
        .iter()
        .map(|(&p, rs)| {
            let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = rs
                .iter()
                .map(|&r| {
                    let scaled = if hi > lo { 1.0 + 4.0 * (r - lo) / (hi - lo) } else { r };
                    let label = if scaled > rule.threshold { Label::Fast } else { Label::Slow };
                    (scaled, label)
                })
                .collect();
            (p, out)
        })
        .collect()
}

/// Labels of the sessions, in session order.
pub fn session_labels(sessions: &[SessionRecord], rule: LabelRule) -> Vec<Label> {
    let mut by_participant: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        by_participant.entry(s.participant_id).or_default().push(s.rating as f64);
    }
    let mut derived: BTreeMap<u32, std::vec::IntoIter<(f64, Label)>> = derive_labels(&by_participant, rule)
        .into_iter()
        .map(|(p, v)| (p, v.into_iter()))
        .collect();
    sessions
        .iter()
        .map(|s| derived.get_mut(&s.participant_id).and_then(Iterator::next).expect("one label per rating").1)
        .collect()
}

/// Background-subtracted feature rows for every session, in session order.
/// Fails listing every session whose extraction failed.
///
/// Scaling is not applied here; it is fitted per evaluation fold.
pub fn assemble(
    sessions: &[SessionRecord],
    rule: LabelRule,
    cfg: &ExtractConfig,
) -> Result<Dataset, PipelineError> {
    let results: Vec<_> = sessions
        .par_iter()
        .map(|s| extract_task_and_baseline(s, cfg).map(|(task, base)| background_subtract(&task, &base)))
        .collect();
    let failures: Vec<(String, ExtractError)> = sessions
        .iter()
        .zip(&results)
        .filter_map(|(s, r)| r.as_ref().err().map(|e| (s.id(), e.clone())))
        .collect();
    if !failures.is_empty() {
        return Err(PipelineError::Extraction(failures));
    }
    let vectors: Vec<FeatureVector> = results.into_iter().map(Result::unwrap).collect();
    let labels = session_labels(sessions, rule);
    let participants = sessions.iter().map(|s| s.participant_id).collect();
    Ok(Dataset::canonical(vectors, labels, participants)?)
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Feature columns, then `label` and `participant_id`, after a
/// `# schema_version` comment line.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), PipelineError> {
    writeln!(out, "# schema_version: {DATASET_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = dataset.feature_names().iter().map(String::as_str).collect();
    header.extend(["label", "participant_id"]);
    w.write_record(&header).map_err(|e| PipelineError::Format(e.to_string()))?;
    for ((row, label), p) in dataset.rows().iter().zip(dataset.labels()).zip(dataset.participants()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.as_str().to_string());
        rec.push(p.to_string());
        w.write_record(&rec).map_err(|e| PipelineError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset, PipelineError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let fmt_err = |e: csv::Error| PipelineError::Format(e.to_string());
    let header = r.headers().map_err(fmt_err)?.clone();
    let n = header.len();
    if n < 3 || &header[n - 2] != "label" || &header[n - 1] != "participant_id" {
        return Err(PipelineError::Format(
            "last two columns must be `label,participant_id`".into(),
        ));
    }
    let names: Vec<String> = header.iter().take(n - 2).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut participants = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(fmt_err)?;
        let bad = |what: &str| PipelineError::Format(format!("data row {}: bad {what}", i + 1));
        let row = (0..n - 2)
            .map(|j| rec[j].trim().parse::<f64>().map_err(|_| bad(&names[j])))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        labels.push(Label::parse(rec[n - 2].trim()).ok_or_else(|| bad("label"))?);
        participants.push(rec[n - 1].trim().parse::<u32>().map_err(|_| bad("participant_id"))?);
    }
    Ok(Dataset::new(names, rows, labels, participants)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ratings(v: &[(u32, &[f64])]) -> BTreeMap<u32, Vec<f64>> {
        v.iter().map(|(p, r)| (*p, r.to_vec())).collect()
    }

    #[test]
    fn subtraction() {
        let mut t = [0.0; N_FEATURES];
        let mut b = [0.0; N_FEATURES];
        t[0] = 80.0;
        b[0] = 70.0;
        let d = background_subtract(&FeatureVector(t), &FeatureVector(b));
        assert_eq!(d.0[0], 10.0);
        let same = background_subtract(&FeatureVector(t), &FeatureVector(t));
        assert!(same.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scaler_fits() {
        let rows = vec![vec![2.0], vec![4.0], vec![6.0]];
        let mm = fit_scaler(&rows, ScalerMethod::MinMax).unwrap();
        assert_eq!(mm.stats, vec![(2.0, 6.0)]);
        let z = fit_scaler(&rows, ScalerMethod::ZScore).unwrap();
        assert!((z.stats[0].0 - 4.0).abs() < 1e-12);
        assert!((z.stats[0].1 - 1.63299).abs() < 1e-5);
        let out = apply_scaler(&mm, &[vec![4.0], vec![8.0]]).unwrap();
        assert_eq!(out, vec![vec![0.5], vec![1.5]]);
        let none = fit_scaler(&rows, ScalerMethod::None).unwrap();
        assert_eq!(apply_scaler(&none, &rows).unwrap(), rows);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let rows = vec![vec![3.0], vec![3.0]];
        for m in [ScalerMethod::MinMax, ScalerMethod::ZScore] {
            let p = fit_scaler(&rows, m).unwrap();
            assert_eq!(apply_scaler(&p, &[vec![17.0]]).unwrap(), vec![vec![0.0]]);
        }
    }

    #[test]
    fn scaler_errors() {
        assert!(matches!(
            fit_scaler(&[vec![1.0]], ScalerMethod::MinMax),
            Err(PipelineError::TooFewRows(1))
        ));
        let p = fit_scaler(&[vec![1.0, 2.0], vec![2.0, 3.0]], ScalerMethod::MinMax).unwrap();
        assert!(matches!(
            apply_scaler(&p, &[vec![1.0]]),
            Err(PipelineError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn label_examples() {
        let out = derive_labels(&ratings(&[(1, &[2.0, 3.0, 3.0, 5.0])]), LabelRule::default());
        let (scaled, labels): (Vec<f64>, Vec<Label>) = out[&1].iter().copied().unzip();
        let want = [1.0, 1.0 + 4.0 / 3.0, 1.0 + 4.0 / 3.0, 5.0];
        for (s, w) in scaled.iter().zip(want) {
            assert!((s - w).abs() < 1e-12);
        }
        assert_eq!(labels, vec![Label::Slow, Label::Slow, Label::Slow, Label::Fast]);

        let out = derive_labels(&ratings(&[(2, &[1.0, 5.0]), (3, &[4.0; 4])]), LabelRule::default());
        assert_eq!(out[&2].iter().map(|x| x.1).collect::<Vec<_>>(), vec![Label::Slow, Label::Fast]);
        assert!(out[&3].iter().all(|x| x.1 == Label::Fast && x.0 == 4.0));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 2.5e10]],
            vec![Label::Slow, Label::Fast],
            vec![1, 2],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema_version: 1\na,b,label,participant_id\n"));
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), d);
    }

    proptest! {
        #[test]
        fn minmax_image_is_unit_interval(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30)
        ) {
            let p = fit_scaler(&rows, ScalerMethod::MinMax).unwrap();
            let out = apply_scaler(&p, &rows).unwrap();
            for j in 0..3 {
                let col: Vec<f64> = out.iter().map(|r| r[j]).collect();
                prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
                let (lo, hi) = p.stats[j];
                if hi > lo {
                    prop_assert!(col.contains(&0.0));
                    prop_assert!(col.contains(&1.0));
                }
            }
        }

        #[test]
        fn subtraction_is_antisymmetric(a in prop::array::uniform24(-1e3f64..1e3), b in prop::array::uniform24(-1e3f64..1e3)) {
            let x = background_subtract(&FeatureVector(a), &FeatureVector(b));
            let y = background_subtract(&FeatureVector(b), &FeatureVector(a));
            for (u, v) in x.0.iter().zip(&y.0) {
                prop_assert_eq!(*u, -*v);
            }
        }

        #[test]
        fn rating_shift_keeps_labels(
            rs in prop::collection::vec(1u8..=5, 1..6),
            shift in -10i32..10,
        ) {
            let base: Vec<f64> = rs.iter().map(|&r| r as f64).collect();
            prop_assume!(base.iter().any(|r| *r != base[0]));
            let shifted: Vec<f64> = base.iter().map(|r| r + shift as f64).collect();
            let a = derive_labels(&ratings(&[(1, &base)]), LabelRule::default());
            let b = derive_labels(&ratings(&[(1, &shifted)]), LabelRule::default());
            let la: Vec<Label> = a[&1].iter().map(|x| x.1).collect();
            let lb: Vec<Label> = b[&1].iter().map(|x| x.1).collect();
            prop_assert_eq!(la, lb);
        }
    }
}
