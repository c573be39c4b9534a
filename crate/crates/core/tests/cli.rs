use std::path::Path;
use std::process::{Command, Output};

use passage::ingest::{planted_dataset, synth_dataset, write_corpus, PlantedConfig, SynthConfig};
use passage::model::TimeSeries;
use passage::pipeline::write_dataset_csv;

fn passage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_passage")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    for (cmd, flags) in [
        ("synth", &["--config", "--out", "--seed"][..]),
        ("extract", &["--manifest", "--out"]),
        ("evaluate", &["--features", "--classifier", "--selection", "--scaling", "--seed", "--out"]),
        ("explain", &["--features", "--classifier", "--seed", "--out"]),
    ] {
        let o = passage(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} help lacks {f}");
        }
        assert_eq!(passage(&[cmd, "--no-such-flag"]).status.code(), Some(2));
    }
}

#[test]
fn synth_extract_evaluate_round() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    assert!(passage(&["synth", "--out", p(&corpus), "--seed", "7", "--preset", "separable"]).status.success());
    let features = tmp.path().join("features.csv");
    assert!(passage(&["extract", "--manifest", p(&corpus.join("manifest.json")), "--out", p(&features)]).status.success());
    let text = std::fs::read_to_string(&features).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2 + 48);
    assert_eq!(lines[1].split(',').count(), 26);

    let report = tmp.path().join("report.json");
    let o = passage(&[
        "evaluate", "--features", p(&features), "--classifier", "svc", "--selection", "none", "--scaling", "minmax",
        "--seed", "1", "--out", p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!(v["mean_accuracy"].as_f64().unwrap() >= 0.9);
    assert_eq!(v["per_fold"].as_array().unwrap().len(), 12);

    let o = passage(&["evaluate", "--features", p(&features), "--classifier", "knn", "--selection", "rfecv", "--out", p(&report)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("RFECV is not applicable"), "{}", stderr(&o));

    let o = passage(&["evaluate", "--features", p(&features), "--classifier", "nope", "--out", p(&report)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_matrix_has_eleven_by_five_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let sessions = synth_dataset(&SynthConfig::default()).unwrap();
    let corpus = tmp.path().join("c");
    let manifest = write_corpus(&sessions, &corpus).unwrap();
    let features = tmp.path().join("f.csv");
    assert!(passage(&["extract", "--manifest", p(&manifest), "--out", p(&features)]).status.success());
    let out = tmp.path().join("m.json");
    let o = passage(&["evaluate", "--features", p(&features), "--classifier", "all", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["columns"].as_array().unwrap().len(), 5);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 11);
    let na: usize = rows
        .iter()
        .flat_map(|r| r["cells"].as_array().unwrap())
        .filter(|c| c.as_str() == Some("N.A."))
        .count();
    assert_eq!(na, 4);
}

#[test]
fn flat_ppg_session_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sessions = synth_dataset(&SynthConfig::default()).unwrap();
    let s = &mut sessions[5];
    s.ppg = TimeSeries::new(vec![0.5; s.ppg.len()], s.ppg.sampling_rate_hz(), "ppg").unwrap();
    let id = s.id();
    let manifest = write_corpus(&sessions, &tmp.path().join("c")).unwrap();
    let o = passage(&["extract", "--manifest", p(&manifest), "--out", p(&tmp.path().join("f.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&id), "{}", stderr(&o));
    assert!(!tmp.path().join("f.csv").exists());
}

#[test]
fn explain_ranks_planted_signal_and_reports_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let features = tmp.path().join("planted.csv");
    let data = planted_dataset(&PlantedConfig::default());
    write_dataset_csv(&data, std::fs::File::create(&features).unwrap()).unwrap();
    let out = tmp.path().join("shap.csv");
    let o = passage(&["explain", "--features", p(&features), "--classifier", "lr", "--seed", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema_version: 1"));
    assert_eq!(lines.next(), Some("feature,mean_abs_shap,rank"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(first[0].starts_with("inf_"), "{first:?}");
    assert_eq!(first[2], "1");

    let missing = passage(&["explain", "--features", p(&tmp.path().join("none.csv")), "--classifier", "lr", "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = passage(&["synth", "--out", p(&blocker.join("sub")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"participants": 0}"#).unwrap();
    let o = passage(&["synth", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
