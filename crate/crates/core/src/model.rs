//! Shared domain types: channels, sessions, feature vectors, datasets and
//! evaluation reports.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("unknown feature name `{0}`")]
    UnknownFeature(String),
    #[error("dataset columns are inconsistent: {0}")]
    Inconsistent(String),
}

/// A uniformly sampled physiological channel.
///
/// `offset_s` is the time of the first sample relative to the series' own
/// time origin. Freshly loaded recordings start at zero; a segment keeps the
/// sub-sample phase between the requested start and its first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    sampling_rate_hz: f64,
    label: String,
    #[serde(default)]
    offset_s: f64,
}

impl TimeSeries {
    pub fn new(
        values: Vec<f64>,
        sampling_rate_hz: f64,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        Self::with_offset(values, sampling_rate_hz, label, 0.0)
    }

    pub fn with_offset(
        values: Vec<f64>,
        sampling_rate_hz: f64,
        label: impl Into<String>,
        offset_s: f64,
    ) -> Result<Self, ModelError> {
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(ModelError::InvalidRate(sampling_rate_hz));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteSample(i));
        }
        Ok(Self {
            values,
            sampling_rate_hz,
            label: label.into(),
            offset_s,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn offset_s(&self) -> f64 {
        self.offset_s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Span covered by the samples: each sample owns one sampling period.
    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sampling_rate_hz
    }

    /// Time of sample `i` in the series' own frame.
    pub fn time_of(&self, i: usize) -> f64 {
        self.offset_s + i as f64 / self.sampling_rate_hz
    }

    /// Same rate, label and offset with new values. Values are assumed finite.
    pub(crate) fn derive(&self, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            values,
            sampling_rate_hz: self.sampling_rate_hz,
            label: self.label.clone(),
            offset_s: self.offset_s,
        }
    }

    pub(crate) fn derive_rate(&self, values: Vec<f64>, rate_hz: f64, offset_s: f64) -> Self {
        Self {
            values,
            sampling_rate_hz: rate_hz,
            label: self.label.clone(),
            offset_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Greek,
    English,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionSetting {
    pub helicopters: u8,
    pub language: Language,
}

impl SessionSetting {
    /// The four workload settings ordered by increasing expected load.
    pub const ALL: [SessionSetting; 4] = [
        SessionSetting { helicopters: 1, language: Language::Greek },
        SessionSetting { helicopters: 1, language: Language::English },
        SessionSetting { helicopters: 2, language: Language::Greek },
        SessionSetting { helicopters: 2, language: Language::English },
    ];

    pub fn is_valid(&self) -> bool {
        matches!(self.helicopters, 1 | 2)
    }
}

impl fmt::Display for SessionSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lang = match self.language {
            Language::Greek => "GR",
            Language::English => "EN",
        };
        write!(f, "{}H-{}", self.helicopters, lang)
    }
}

/// One experimental sequence of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub participant_id: u32,
    pub session_index: u32,
    pub setting: SessionSetting,
    pub ppg: TimeSeries,
    pub eda: TimeSeries,
    pub thermopile: TimeSeries,
    pub reference_temp: TimeSeries,
    /// Take-off time in seconds from the recording start.
    pub task_start_s: f64,
    pub task_end_s: f64,
    /// Raw passage-of-time answer, 1 (very slow) to 5 (very fast).
    pub rating: u8,
    pub duration_estimate_s: Option<f64>,
}

impl SessionRecord {
    pub fn id(&self) -> String {
        format!("p{:02}_s{}", self.participant_id, self.session_index)
    }

    fn channels(&self) -> [&TimeSeries; 4] {
        [&self.ppg, &self.eda, &self.thermopile, &self.reference_temp]
    }

    /// Shortest channel duration; all windows must fit inside it.
    pub fn recording_length_s(&self) -> f64 {
        self.channels()
            .iter()
            .map(|c| c.duration_s())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Checks every session invariant and reports each breach. Never fails.
pub fn validate_session(session: &SessionRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if !(1..=5).contains(&session.rating) {
        violations.push("rating out of range".to_string());
    }
    if !session.setting.is_valid() {
        violations.push(format!(
            "helicopter count {} not in {{1, 2}}",
            session.setting.helicopters
        ));
    }
    if session.participant_id == 0 {
        violations.push("participant id must be at least 1".to_string());
    }
    if !(1..=4).contains(&session.session_index) {
        violations.push("session index out of range".to_string());
    }
    if !(session.task_start_s > 0.0) {
        violations.push("empty baseline interval".to_string());
    }
    if !(session.task_start_s < session.task_end_s) {
        violations.push("task end precedes task start".to_string());
    }
    let length = session.recording_length_s();
    if session.task_end_s > length + 1e-9 {
        violations.push(format!(
            "task end {:.3} s beyond recording length {:.3} s",
            session.task_end_s, length
        ));
    }
    for ch in session.channels() {
        if ch.len() < 2 {
            violations.push(format!("channel {} has fewer than 2 samples", ch.label()));
        }
        if !(ch.sampling_rate_hz() > 0.0) {
            violations.push(format!("channel {} has non-positive rate", ch.label()));
        }
        if ch.values().iter().any(|v| !v.is_finite()) {
            violations.push(format!("channel {} has non-finite samples", ch.label()));
        }
    }
    if let Some(d) = session.duration_estimate_s {
        if !d.is_finite() {
            violations.push("duration estimate is not finite".to_string());
        }
    }
    violations
}

pub const N_PPG_FEATURES: usize = 13;
pub const N_EDA_FEATURES: usize = 6;
pub const N_TEMP_FEATURES: usize = 5;
pub const N_FEATURES: usize = N_PPG_FEATURES + N_EDA_FEATURES + N_TEMP_FEATURES;

/// Canonical feature order. PPG first, then EDA, then temperature.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "bpm",
    "ibi_ms",
    "sdnn_ms",
    "sdsd_ms",
    "rmssd_ms",
    "pnn20",
    "pnn50",
    "hr_mad_ms",
    "sd1_ms",
    "sd2_ms",
    "s_ms2",
    "sd1_sd2_ratio",
    "breathing_rate_hz",
    "scr_peaks_n",
    "scr_peaks_amplitude_mean_us",
    "eda_tonic_sd_us",
    "eda_sympathetic",
    "eda_sympathetic_n",
    "eda_autocorrelation",
    "temp_diff_mean_c",
    "thermopile_mean_c",
    "reference_mean_c",
    "temp_gradient_mean_c_per_s",
    "temp_psd_power",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

pub fn ppg_feature_names() -> &'static [&'static str] {
    &FEATURE_NAMES[..N_PPG_FEATURES]
}

pub fn ppg_eda_feature_names() -> &'static [&'static str] {
    &FEATURE_NAMES[..N_PPG_FEATURES + N_EDA_FEATURES]
}

/// The 24 biomarker values of one session window, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn from_parts(
        ppg: [f64; N_PPG_FEATURES],
        eda: [f64; N_EDA_FEATURES],
        temp: [f64; N_TEMP_FEATURES],
    ) -> Self {
        let mut v = [0.0; N_FEATURES];
        v[..N_PPG_FEATURES].copy_from_slice(&ppg);
        v[N_PPG_FEATURES..N_PPG_FEATURES + N_EDA_FEATURES].copy_from_slice(&eda);
        v[N_PPG_FEATURES + N_EDA_FEATURES..].copy_from_slice(&temp);
        Self(v)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, ModelError> {
        let arr: [f64; N_FEATURES] = values.try_into().map_err(|_| ModelError::FeatureCount {
            expected: N_FEATURES,
            got: values.len(),
        })?;
        Ok(Self(arr))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }

    pub fn values(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        FEATURE_NAMES.iter().copied().zip(self.0.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Slow,
    Fast,
}

impl Label {
    pub fn is_fast(self) -> bool {
        self == Label::Fast
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Slow => Label::Fast,
            Label::Fast => Label::Slow,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Slow => "slow",
            Label::Fast => "fast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slow" | "0" => Some(Label::Slow),
            "fast" | "1" => Some(Label::Fast),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Feature matrix with labels and the participant each row came from.
///
/// Columns are named; the pipeline produces the canonical 24, while tests and
/// selection work on arbitrary column subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Label>,
    participants: Vec<u32>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<Label>,
        participants: Vec<u32>,
    ) -> Result<Self, ModelError> {
        if rows.len() != labels.len() || rows.len() != participants.len() {
            return Err(ModelError::Inconsistent(format!(
                "{} rows, {} labels, {} participant ids",
                rows.len(),
                labels.len(),
                participants.len()
            )));
        }
        let d = feature_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(ModelError::FeatureCount { expected: d, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Inconsistent(format!("row {i} has non-finite values")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for n in &feature_names {
            if !seen.insert(n.as_str()) {
                return Err(ModelError::Inconsistent(format!("duplicate feature name `{n}`")));
            }
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
            participants,
        })
    }

    pub fn canonical(
        vectors: Vec<FeatureVector>,
        labels: Vec<Label>,
        participants: Vec<u32>,
    ) -> Result<Self, ModelError> {
        Self::new(
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            vectors.into_iter().map(|v| v.0.to_vec()).collect(),
            labels,
            participants,
        )
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn participants(&self) -> &[u32] {
        &self.participants
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct participant ids in ascending order.
    pub fn participant_ids(&self) -> Vec<u32> {
        let mut ids = self.participants.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let fast = self.labels.iter().filter(|l| l.is_fast()).count();
        (self.labels.len() - fast, fast)
    }

    pub fn column_indices(&self, names: &[impl AsRef<str>]) -> Result<Vec<usize>, ModelError> {
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| ModelError::UnknownFeature(n.to_string()))
            })
            .collect()
    }

    /// Rows restricted to the given indices, all columns kept.
    pub fn subset_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            participants: idx.iter().map(|&i| self.participants[i]).collect(),
        }
    }

    /// Columns restricted to `names`, in the order given.
    pub fn select_columns(&self, names: &[impl AsRef<str>]) -> Result<Dataset, ModelError> {
        let cols = self.column_indices(names)?;
        Ok(Dataset {
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c]).collect())
                .collect(),
            labels: self.labels.clone(),
            participants: self.participants.clone(),
        })
    }

    pub fn with_rows(&self, rows: Vec<Vec<f64>>) -> Result<Dataset, ModelError> {
        Dataset::new(
            self.feature_names.clone(),
            rows,
            self.labels.clone(),
            self.participants.clone(),
        )
    }

    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Dataset, ModelError> {
        Dataset::new(
            self.feature_names.clone(),
            self.rows.clone(),
            labels,
            self.participants.clone(),
        )
    }
}

/// Outcome of one leave-one-participant-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_participant: u32,
    pub train_participants: Vec<u32>,
    pub n_test: usize,
    pub accuracy: f64,
    pub selected_feature_names: Vec<String>,
    /// `(feature, mean |shap|)` over the held-out rows; empty when not computed.
    pub per_feature_mean_abs_shap: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classifier: String,
    pub selection: String,
    pub scaling: String,
    pub seed: u64,
    pub per_fold: Vec<FoldResult>,
    pub mean_accuracy: f64,
}

impl EvaluationReport {
    pub fn from_folds(
        classifier: String,
        selection: String,
        scaling: String,
        seed: u64,
        per_fold: Vec<FoldResult>,
    ) -> Self {
        let mean_accuracy = if per_fold.is_empty() {
            0.0
        } else {
            per_fold.iter().map(|f| f.accuracy).sum::<f64>() / per_fold.len() as f64
        };
        Self {
            classifier,
            selection,
            scaling,
            seed,
            per_fold,
            mean_accuracy,
        }
    }
}
