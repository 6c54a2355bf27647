use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ekm_core::cnn::{load_model, save_model};
use ekm_core::eval::{per_class_csv, report_csv, report_table, ReportRow};
use ekm_core::pipeline::{self, Grid};
use ekm_core::{ConfigError, Error, RunConfig};

#[derive(Parser)]
#[command(name = "ekm", version, about = "ECG biometrics with electrocardiomatrix images")]
struct Cli {
    /// key=value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect beats, render EKMs and write a dataset directory.
    Build {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset; writes the model and history.csv.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        opts: Overrides,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on the dataset's test split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Also write per-class recall to this CSV.
        #[arg(long)]
        per_class: Option<PathBuf>,
    },
    /// Sweep bpf and epoch counts from a grid file into one report.
    Reproduce {
        #[command(flatten)]
        opts: Overrides,
        /// Lines `bpf=3,5,7` and `epochs=100,150`.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out>/report.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Flags that map onto configuration keys.
#[derive(Args, Default)]
struct Overrides {
    /// wfdb, plaintext or synthetic
    #[arg(long)]
    db: Option<String>,
    /// Database name used in reports.
    #[arg(long)]
    name: Option<String>,
    /// WFDB directory, or a plaintext file or directory of files.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Signal index within each WFDB record.
    #[arg(long)]
    channel: Option<usize>,
    /// Sampling rate for plaintext and synthetic input.
    #[arg(long)]
    fs: Option<f64>,
    /// Zero-based column of multi-column plaintext files.
    #[arg(long)]
    column: Option<usize>,
    /// Comma-separated pathology allowlist matched against header comments.
    #[arg(long)]
    pathology: Option<String>,
    #[arg(long)]
    verify_checksum: bool,
    /// Number of synthetic subjects.
    #[arg(long)]
    subjects: Option<usize>,
    /// Synthetic record length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Beats per EKM (matrix rows).
    #[arg(long)]
    bpf: Option<usize>,
    /// Fraction of the mean RR interval kept before each R-peak.
    #[arg(long)]
    alpha_i: Option<f64>,
    /// Fraction of the mean RR interval kept after each R-peak.
    #[arg(long)]
    alpha_e: Option<f64>,
    /// EKMs kept per subject.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Leading share of each subject's EKMs used for training.
    #[arg(long)]
    train_frac: Option<f64>,
    /// Share of the training EKMs held out for validation.
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Any configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("database", self.db.clone());
        put("name", self.name.clone());
        put("input", self.input.as_ref().map(|p| p.display().to_string()));
        put("channel", s(&self.channel));
        put("fs", s(&self.fs));
        put("plaintext_column", s(&self.column));
        put("pathology", self.pathology.clone());
        put("verify_checksum", self.verify_checksum.then(|| "true".into()));
        put("synth_subjects", s(&self.subjects));
        put("synth_duration", s(&self.duration));
        put("bpf", s(&self.bpf));
        put("alpha_i", s(&self.alpha_i));
        put("alpha_e", s(&self.alpha_e));
        put("cap", s(&self.cap));
        put("image_h", s(&self.height));
        put("image_w", s(&self.width));
        put("train_fraction", s(&self.train_frac));
        put("validation_fraction", s(&self.val_frac));
        put("seed", s(&self.seed));
        put("epochs", s(&self.epochs));
        put("batch", s(&self.batch));
        put("steps_per_epoch", s(&self.steps_per_epoch));
        put("learning_rate", s(&self.lr));
        put("dropout", s(&self.dropout));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("--set expects key=value, got {kv:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `base`, then the config file, then flags.
fn resolve(base: RunConfig, file: Option<&Path>, opts: &Overrides) -> Result<RunConfig, Error> {
    let mut cfg = base;
    if let Some(f) = file {
        cfg.apply_text(&read(f)?)?;
    }
    for (k, v) in opts.pairs()? {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let summary = pipeline::build_dataset(cfg, out)?;
    println!("{:<16} {:>6} {:>6} {:>6} {:>8} {:>8}", "subject", "ekms", "train", "test", "skip_oob", "skip_flat");
    for s in &summary.stats {
        println!(
            "{:<16} {:>6} {:>6} {:>6} {:>8} {:>8}",
            s.subject_id, s.ekms, s.train, s.test, s.skipped_out_of_bounds, s.skipped_constant
        );
    }
    for s in &summary.skipped {
        println!("skipped record {}: {}", s.source, s.reason);
    }
    println!("{} EKMs written to {}", summary.manifest.entries.len(), out.display());
    Ok(())
}

fn train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<(), Error> {
    let (model, history) = pipeline::train_model(cfg, dataset)?;
    save_model(&model, out)?;
    let history_path = out.parent().unwrap_or(Path::new(".")).join("history.csv");
    write(&history_path, &pipeline::history_csv(&history))?;
    log::info!("model written to {}, history to {}", out.display(), history_path.display());
    Ok(())
}

fn meta_usize(model: &ekm_core::cnn::Model<f32>, key: &str) -> usize {
    model.metadata(key).and_then(|v| v.parse().ok()).unwrap_or(0)
}

fn eval(dataset: &Path, model_path: &Path, report: &Path, batch: usize, per_class: Option<&Path>) -> Result<(), Error> {
    let model = load_model(model_path)?;
    let result = pipeline::evaluate_model(&model, dataset, batch)?;
    if let Some(p) = per_class {
        write(p, &per_class_csv(&result, &model.vocab))?;
    }
    let row = ReportRow {
        database: model.metadata("name").unwrap_or("unknown").to_string(),
        bpf: meta_usize(&model, "bpf"),
        epochs: meta_usize(&model, "epochs"),
        report: result,
    };
    report_csv(std::slice::from_ref(&row), &model.metadata, report)?;
    print!("{}", report_table(&[row]));
    Ok(())
}

fn reproduce(cfg: &RunConfig, grid: &Path, out: &Path, report: Option<&Path>) -> Result<(), Error> {
    let grid = Grid::from_text(&read(grid)?)?;
    let rows = pipeline::reproduce(cfg, &grid, out)?;
    let report = report.map_or_else(|| out.join("report.csv"), Path::to_path_buf);
    let mut meta = cfg.pairs();
    meta.push(("grid.bpf".into(), join(&grid.bpf)));
    meta.push(("grid.epochs".into(), join(&grid.epochs)));
    report_csv(&rows, &meta, &report)?;
    print!("{}", report_table(&rows));
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("EKM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::Invalid(format!("EKM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let file = cli.config.as_deref();
    match cli.command {
        Command::Build { opts, out } => build(&resolve(RunConfig::default(), file, &opts)?, &out),
        Command::Train { dataset, opts, out } => {
            let cfg = resolve(pipeline::dataset_config(&dataset)?, file, &opts)?;
            train(&cfg, &dataset, &out)
        }
        Command::Eval {
            dataset,
            model,
            report,
            batch,
            per_class,
        } => eval(&dataset, &model, &report, batch, per_class.as_deref()),
        Command::Reproduce {
            opts,
            grid,
            out,
            report,
        } => reproduce(&resolve(RunConfig::default(), file, &opts)?, &grid, &out, report.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
