//! Session loading from a JSON manifest plus per-channel CSV files, and the
//! synthetic corpus generator.
//!
//! Manifest layout (paths are relative to the manifest file):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "sessions": [{
//!     "participant_id": 1, "session_index": 1,
//!     "setting": {"helicopters": 1, "language": "greek"},
//!     "rating": 2, "task_start_s": 30.0, "task_end_s": 212.0,
//!     "duration_estimate_s": null,
//!     "channels": {
//!       "ppg": {"path": "p01_s1_ppg.csv", "sampling_rate_hz": 25.0, "trim_head": 0, "trim_tail": 8},
//!       "eda": {...}, "thermopile": {...}, "reference_temp": {...}
//!     }
//!   }]
//! }
//! ```

mod synth;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_session, SessionRecord, SessionSetting, TimeSeries};

pub use synth::{planted_dataset, synth_dataset, ClassParams, PlantedConfig, SynthConfig};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const CSV_HEADER: &str = "timestamp_s,value";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: malformed row at line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: non-finite sample at index {index}")]
    NonFiniteSample { path: PathBuf, index: usize },
    #[error("session {session}: {}", .violations.join("; "))]
    InvariantViolation {
        session: String,
        violations: Vec<String>,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub path: PathBuf,
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub trim_head: usize,
    #[serde(default)]
    pub trim_tail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFiles {
    pub ppg: ChannelFile,
    pub eda: ChannelFile,
    pub thermopile: ChannelFile,
    pub reference_temp: ChannelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub participant_id: u32,
    pub session_index: u32,
    pub setting: SessionSetting,
    pub rating: u8,
    pub task_start_s: f64,
    pub task_end_s: f64,
    #[serde(default)]
    pub duration_estimate_s: Option<f64>,
    pub channels: ChannelFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub sessions: Vec<ManifestEntry>,
}

impl SessionManifest {
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
            _ => IngestError::Io(e),
        })?;
        let manifest: SessionManifest =
            serde_json::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(IngestError::Manifest(format!(
                "unsupported schema_version {}",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }
}

/// Reads a `timestamp_s,value` file. Timestamps must increase; the declared
/// rate, not the timestamps, defines the sample grid.
pub fn read_channel_csv(path: &Path) -> Result<Vec<f64>, IngestError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    let malformed = |line: usize, reason: &str| IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut values = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(malformed(lineno, "expected header `timestamp_s,value`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(t), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed(lineno, "expected two fields"));
        };
        let t: f64 = t.trim().parse().map_err(|_| malformed(lineno, "bad timestamp"))?;
        let v: f64 = v.trim().parse().map_err(|_| malformed(lineno, "bad value"))?;
        if !v.is_finite() {
            return Err(IngestError::NonFiniteSample {
                path: path.to_path_buf(),
                index: values.len(),
            });
        }
        if !(t > last_t) {
            return Err(malformed(lineno, "timestamps must increase"));
        }
        last_t = t;
        values.push(v);
    }
    Ok(values)
}

pub fn write_channel_csv(path: &Path, series: &TimeSeries) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for (i, v) in series.values().iter().enumerate() {
        writeln!(out, "{},{}", series.time_of(i), v)?;
    }
    out.flush()?;
    Ok(())
}

fn load_channel(base: &Path, ch: &ChannelFile, label: &str) -> Result<TimeSeries, IngestError> {
    let path = base.join(&ch.path);
    let mut values = read_channel_csv(&path)?;
    if ch.trim_head + ch.trim_tail > values.len() {
        return Err(IngestError::Manifest(format!(
            "{}: trims ({} + {}) exceed {} samples",
            path.display(),
            ch.trim_head,
            ch.trim_tail,
            values.len()
        )));
    }
    values.truncate(values.len() - ch.trim_tail);
    values.drain(..ch.trim_head);
    TimeSeries::new(values, ch.sampling_rate_hz, label)
        .map_err(|e| IngestError::Manifest(format!("{}: {e}", path.display())))
}

/// Loads one session, applying trims before anything else, and validates it.
pub fn load_session(entry: &ManifestEntry, base_dir: &Path) -> Result<SessionRecord, IngestError> {
    let c = &entry.channels;
    let session = SessionRecord {
        participant_id: entry.participant_id,
        session_index: entry.session_index,
        setting: entry.setting,
        ppg: load_channel(base_dir, &c.ppg, "ppg")?,
        eda: load_channel(base_dir, &c.eda, "eda")?,
        thermopile: load_channel(base_dir, &c.thermopile, "thermopile")?,
        reference_temp: load_channel(base_dir, &c.reference_temp, "reference_temp")?,
        task_start_s: entry.task_start_s,
        task_end_s: entry.task_end_s,
        rating: entry.rating,
        duration_estimate_s: entry.duration_estimate_s,
    };
    let violations = validate_session(&session);
    if violations.is_empty() {
        Ok(session)
    } else {
        Err(IngestError::InvariantViolation {
            session: session.id(),
            violations,
        })
    }
}

/// All sessions of a manifest, in manifest order.
pub fn load_manifest(path: &Path) -> Result<Vec<SessionRecord>, IngestError> {
    let manifest = SessionManifest::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .sessions
        .par_iter()
        .map(|e| load_session(e, base))
        .collect()
}

fn channel_entry(file: String, series: &TimeSeries) -> ChannelFile {
    ChannelFile {
        path: PathBuf::from(file),
        sampling_rate_hz: series.sampling_rate_hz(),
        trim_head: 0,
        trim_tail: 0,
    }
}

/// Writes sessions as channel CSVs plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_corpus(sessions: &[SessionRecord], dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(dir)?;
    let entries = sessions
        .par_iter()
        .map(|s| {
            let id = s.id();
            let write = |name: &str, series: &TimeSeries| -> Result<ChannelFile, IngestError> {
                let file = format!("{id}_{name}.csv");
                write_channel_csv(&dir.join(&file), series)?;
                Ok(channel_entry(file, series))
            };
            Ok(ManifestEntry {
                participant_id: s.participant_id,
                session_index: s.session_index,
                setting: s.setting,
                rating: s.rating,
                task_start_s: s.task_start_s,
                task_end_s: s.task_end_s,
                duration_estimate_s: s.duration_estimate_s,
                channels: ChannelFiles {
                    ppg: write("ppg", &s.ppg)?,
                    eda: write("eda", &s.eda)?,
                    thermopile: write("thermopile", &s.thermopile)?,
                    reference_temp: write("reference_temp", &s.reference_temp)?,
                },
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let manifest = SessionManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        sessions: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IngestError::Manifest(e.to_string()))?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Language;

    fn write_csv(dir: &Path, name: &str, values: &[&str], fs_hz: f64) -> PathBuf {
        let mut text = String::from("timestamp_s,value\n");
        for (i, v) in values.iter().enumerate() {
            text.push_str(&format!("{},{v}\n", i as f64 / fs_hz));
        }
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn constant(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{}", 1.0 + (i % 7) as f64 * 0.01)).collect()
    }

    fn entry(ppg_tail: usize) -> ManifestEntry {
        let ch = |path: &str, rate| ChannelFile {
            path: path.into(),
            sampling_rate_hz: rate,
            trim_head: 0,
            trim_tail: 0,
        };
        ManifestEntry {
            participant_id: 3,
            session_index: 2,
            setting: SessionSetting { helicopters: 1, language: Language::English },
            rating: 4,
            task_start_s: 30.0,
            task_end_s: 150.0,
            duration_estimate_s: Some(170.0),
            channels: ChannelFiles {
                ppg: ChannelFile { trim_tail: ppg_tail, ..ch("ppg.csv", 25.0) },
                eda: ch("eda.csv", 15.0),
                thermopile: ch("th.csv", 7.5),
                reference_temp: ch("ref.csv", 7.5),
            },
        }
    }

    fn corpus(dir: &Path) {
        for (name, n, rate) in [
            ("ppg.csv", 4550, 25.0),
            ("eda.csv", 2730, 15.0),
            ("th.csv", 1365, 7.5),
            ("ref.csv", 1365, 7.5),
        ] {
            let v = constant(n);
            let refs: Vec<&str> = v.iter().map(String::as_str).collect();
            write_csv(dir, name, &refs, rate);
        }
    }

    #[test]
    fn tail_trim_applied() {
        let dir = tempfile::tempdir().unwrap();
        corpus(dir.path());
        let s = load_session(&entry(8), dir.path()).unwrap();
        assert_eq!(s.ppg.len(), 4542);
        let s = load_session(&entry(0), dir.path()).unwrap();
        assert_eq!(s.ppg.len(), 4550);
        assert_eq!(s.eda.len(), 2730);
    }

    #[test]
    fn nan_row_reported_by_sample_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = vec!["1.0"; 10];
        v[7] = "NaN";
        let p = write_csv(dir.path(), "x.csv", &v, 1.0);
        match read_channel_csv(&p) {
            Err(IngestError::NonFiniteSample { index, .. }) => assert_eq!(index, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "timestamp_s,value\n0,1\n0.1,abc\n").unwrap();
        match read_channel_csv(&p) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "timestamp_s,value\n0,1\n0,2\n").unwrap();
        assert!(matches!(read_channel_csv(&p), Err(IngestError::MalformedRow { line: 3, .. })));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_session(&entry(0), dir.path()),
            Err(IngestError::MissingFile(_))
        ));
    }

    #[test]
    fn invalid_session_lists_violations() {
        let dir = tempfile::tempdir().unwrap();
        corpus(dir.path());
        let mut e = entry(0);
        e.rating = 9;
        e.task_end_s = 1000.0;
        match load_session(&e, dir.path()) {
            Err(IngestError::InvariantViolation { violations, .. }) => {
                assert_eq!(violations.len(), 2)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corpus_round_trip_is_exact() {
        let cfg = SynthConfig {
            participants: 2,
            sessions_per_participant: 2,
            fast_to_slow_flips: 0,
            ..SynthConfig::default()
        };
        let sessions = synth_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&sessions, dir.path()).unwrap();
        let back = load_manifest(&manifest).unwrap();
        assert_eq!(sessions, back);
    }
}
