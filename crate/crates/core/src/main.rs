use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use passage::classifiers::{train, ClassifierConfig};
use passage::evaluate::{
    all_classifiers, losocv, report_json, report_matrix, write_report_csv, EvaluateError, SelectionMode,
};
use passage::explain::{mean_abs_shap, write_shap_csv};
use passage::features::ExtractConfig;
use passage::ingest::{load_manifest, synth_dataset, write_corpus, IngestError, SynthConfig};
use passage::model::Dataset;
use passage::pipeline::{
    apply_scaler, assemble, fit_scaler, read_dataset_csv, write_dataset_csv, LabelRule, PipelineError, ScalerMethod,
};

#[derive(Parser)]
#[command(name = "passage", version, about = "Passage-of-time classification from wearable signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Separable,
    Null,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: channel CSVs plus manifest.json.
    Synth {
        /// JSON generator configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in configuration used when no --config is given.
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract background-subtracted features for every manifest session.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-participant-out evaluation.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        /// Classifier name (svc, dtc, knn, gnb, lr, lda, qda, rf, gb, ab,
        /// xgb, svc-linear) or `all` for the full report matrix.
        #[arg(long)]
        classifier: String,
        /// none, sfs, rfecv, ppg or ppg+eda. With `all`, defaults to every mode.
        #[arg(long)]
        selection: Option<String>,
        #[arg(long, default_value = "minmax")]
        scaling: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; `.csv` writes CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on all rows and rank features by mean |SHAP value|.
    Explain {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        classifier: String,
        #[arg(long, default_value = "minmax")]
        scaling: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coalitions per instance for the kernel estimator.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with its exit code: 1 for IO, 2 for invalid input or domain errors.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn domain(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) | IngestError::MissingFile(_) => Failure::io(e.to_string()),
            _ => Failure::domain(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(_) => Failure::io(e.to_string()),
            _ => Failure::domain(e.to_string()),
        }
    }
}

impl From<EvaluateError> for Failure {
    fn from(e: EvaluateError) -> Self {
        Failure::domain(e.to_string())
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: io::Error| Failure::io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    write(tmp.as_file_mut()).map_err(fail)?;
    tmp.as_file_mut().flush().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn read_features(path: &Path) -> Result<Dataset, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(read_dataset_csv(BufReader::new(file))?)
}

fn parse_scaling(s: &str) -> Result<ScalerMethod, Failure> {
    s.parse().map_err(Failure::domain)
}

fn parse_classifier(s: &str, seed: u64) -> Result<ClassifierConfig, Failure> {
    ClassifierConfig::parse(s, seed).map_err(Failure::domain)
}

fn synth(config: Option<PathBuf>, preset: Preset, out: PathBuf, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Failure::domain(format!("{}: {e}", p.display())))?
        }
        None => match preset {
            Preset::Default => SynthConfig::default(),
            Preset::Separable => SynthConfig::separable(),
            Preset::Null => SynthConfig::null(),
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sessions = synth_dataset(&cfg)?;
    fs::create_dir_all(&out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    // stage everything, then move file by file with the manifest last
    let stage = tempfile::Builder::new()
        .prefix(".synth-")
        .tempdir_in(&out)
        .map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let manifest = write_corpus(&sessions, stage.path())?;
    let mut names: Vec<PathBuf> = fs::read_dir(stage.path())
        .and_then(|d| d.map(|e| e.map(|e| e.path())).collect())
        .map_err(|e| Failure::io(e.to_string()))?;
    names.retain(|p| *p != manifest);
    names.sort();
    names.push(manifest);
    for p in names {
        let target = out.join(p.file_name().expect("staged file has a name"));
        fs::rename(&p, &target).map_err(|e| Failure::io(format!("{}: {e}", target.display())))?;
    }
    println!("wrote {} sessions to {}", sessions.len(), out.display());
    Ok(())
}

fn extract(manifest: PathBuf, out: PathBuf) -> Result<(), Failure> {
    let sessions = load_manifest(&manifest)?;
    let dataset = assemble(&sessions, LabelRule::default(), &ExtractConfig::default())?;
    let mut buf = Vec::new();
    write_dataset_csv(&dataset, &mut buf)?;
    write_atomic(&out, |w| w.write_all(&buf))?;
    println!("wrote {} rows x {} features to {}", dataset.n_rows(), dataset.n_features(), out.display());
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn evaluate(
    features: PathBuf,
    classifier: String,
    selection: Option<String>,
    scaling: String,
    seed: u64,
    out: PathBuf,
) -> Result<(), Failure> {
    let scaler = parse_scaling(&scaling)?;
    let modes: Option<SelectionMode> = selection
        .as_deref()
        .map(|s| s.parse().map_err(Failure::domain))
        .transpose()?;
    let all = classifier.eq_ignore_ascii_case("all");
    let config = if all { None } else { Some(parse_classifier(&classifier, seed)?) };
    if let (Some(c), Some(m)) = (&config, &modes) {
        if !m.applicable(c) {
            return Err(EvaluateError::NotApplicable(c.name()).into());
        }
    }
    let dataset = read_features(&features)?;

    if let Some(config) = config {
        let mode = modes.unwrap_or(SelectionMode::None);
        let report = losocv(&dataset, &config, scaler, &mode, seed)?;
        if is_csv(&out) {
            write_atomic(&out, |w| write_report_csv(&report, w))?;
        } else {
            let json = report_json(&report);
            write_atomic(&out, |w| writeln!(w, "{json}"))?;
        }
        println!("{} / {} / {}: mean accuracy {:.4}", report.classifier, report.selection, report.scaling, report.mean_accuracy);
    } else {
        let columns: Vec<SelectionMode> = match modes {
            Some(m) => vec![m],
            None => SelectionMode::columns().to_vec(),
        };
        let matrix = report_matrix(&dataset, &all_classifiers(seed), &columns, scaler, seed)?;
        if is_csv(&out) {
            write_atomic(&out, |w| matrix.write_csv(w))?;
        } else {
            let json = matrix.to_json();
            write_atomic(&out, |w| writeln!(w, "{json}"))?;
        }
        let mut stdout = io::stdout().lock();
        let _ = matrix.write_csv(&mut stdout);
    }
    Ok(())
}

fn explain(
    features: PathBuf,
    classifier: String,
    scaling: String,
    seed: u64,
    samples: Option<usize>,
    out: PathBuf,
) -> Result<(), Failure> {
    let scaler = parse_scaling(&scaling)?;
    let config = parse_classifier(&classifier, seed)?;
    let dataset = read_features(&features)?;
    let params = fit_scaler(dataset.rows(), scaler)?;
    let rows = apply_scaler(&params, dataset.rows())?;
    let model = train(&config, &rows, dataset.labels()).map_err(|e| Failure::domain(e.to_string()))?;
    let ranking = mean_abs_shap(&model, &rows, &rows, dataset.feature_names(), samples, seed)
        .map_err(|e| Failure::domain(e.to_string()))?;
    write_atomic(&out, |w| write_shap_csv(&ranking, w))?;
    for f in ranking.iter().take(5) {
        println!("{:>2}  {:<22} {:.6}", f.rank, f.feature, f.mean_abs_shap);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, preset, out, seed } => synth(config, preset, out, seed),
        Command::Extract { manifest, out } => extract(manifest, out),
        Command::Evaluate { features, classifier, selection, scaling, seed, out } => {
            evaluate(features, classifier, selection, scaling, seed, out)
        }
        Command::Explain { features, classifier, scaling, seed, samples, out } => {
            explain(features, classifier, scaling, seed, samples, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
