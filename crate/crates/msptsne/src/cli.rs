//! Command-line surface: `gen`, `fit`, `transform`, `evaluate`, and the
//! multi-method `experiment` protocol.
//!
//! Every command is deterministic given its flags and `--seed`; subsystem
//! seeds are derived from the one user seed by fixed offsets. Output files
//! are written to a temporary name and renamed into place, so a failing run
//! never leaves a truncated artifact behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::datasets::{self, gen_helix_coils, load_csv, train_test_split, Dataset};
use crate::neural_net::MlpModel;
use crate::quality::{self, evaluate_embedding, QualityCurve};
use crate::trainer::{self, fit, transform, TrainConfig, TrainMode};

/// Seed offsets for the independent random streams of one run.
const SEED_SPLIT: u64 = 1;
const SEED_JITTER: u64 = 2;
/// Per-method model seeds start here and advance by method index.
const SEED_METHOD_BASE: u64 = 100;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Datasets(#[from] datasets::Error),
    #[error(transparent)]
    Trainer(#[from] trainer::Error),
    #[error(transparent)]
    Quality(#[from] quality::Error),
    #[error(transparent)]
    NeuralNet(#[from] crate::neural_net::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        source: Box<Error>,
    },
}

impl Error {
    fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Parser)]
#[command(
    name = "msptsne",
    version,
    about = "Multi-scale parametric t-SNE: train, project and score neural embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic helix dataset as CSV
    Gen(GenArgs),
    /// Train a parametric embedding and save the model plus a loss log
    Fit(FitArgs),
    /// Project a dataset through a trained model
    Transform(TransformArgs),
    /// Score an embedding against its source data (Q_NX/R_NX/AUC)
    Evaluate(EvaluateArgs),
    /// Split, train and score every method of the experiment protocol
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of points
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Standard deviation of isotropic Gaussian noise
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Number of coils of the closed helix
    #[arg(long, default_value_t = 10)]
    pub coils: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by every command that reads a dataset CSV.
#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Treat the last CSV column as integer labels
    #[arg(long)]
    pub labels: bool,
    /// Skip one header line
    #[arg(long)]
    pub skip_header: bool,
    /// Min-max scale each feature to [0, 1] before anything else
    #[arg(long)]
    pub scale: bool,
    /// Add seeded Gaussian noise of this standard deviation (breaks
    /// duplicate rows that the precision search rejects)
    #[arg(long)]
    pub jitter: Option<f64>,
}

/// Training hyperparameter flags shared by `fit` and `experiment`.
#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Hidden layer widths, e.g. 150,150,600,150
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Mini-batch size (used only when N exceeds the full-batch threshold)
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    /// Embedding dimensionality
    #[arg(long, default_value_t = 2)]
    pub output_dim: usize,
}

impl TrainArgs {
    fn config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed,
            hidden_widths: self.layers.clone().unwrap_or(defaults.hidden_widths),
            output_dim: self.output_dim,
            ..defaults
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Multiscale,
    Fixed,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_args: DataArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Multiscale)]
    pub mode: ModeArg,
    /// Perplexity for fixed mode
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output model path; the loss log goes next to it as `<out>.log.csv`
    #[arg(long, default_value = "model.mspt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Trained model file
    #[arg(long)]
    pub model: PathBuf,
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_args: DataArgs,
    /// Seed for the optional jitter preprocessing
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output embedding CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Data-space CSV
    #[arg(long)]
    pub hd: PathBuf,
    /// Embedding-space CSV with matching rows
    #[arg(long)]
    pub ld: PathBuf,
    /// Treat the last column of both files as labels
    #[arg(long)]
    pub labels: bool,
    /// Skip one header line in both files
    #[arg(long)]
    pub skip_header: bool,
    /// Output curve CSV (columns K,qnx,rnx; AUC in a leading comment)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_args: DataArgs,
    /// Fixed perplexities to sweep next to the multiscale method
    #[arg(long, value_delimiter = ',', default_values_t = vec![8.0, 32.0, 128.0])]
    pub perplexities: Vec<f64>,
    /// Held-out fraction
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Semicolon-separated width configurations to grid-search per method,
    /// e.g. "100,100,400,100;150,150,600,150"
    #[arg(long)]
    pub width_grid: Option<String>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for summary.csv, curves/, models/, embeddings/
    #[arg(long)]
    pub out: PathBuf,
}

/// Dispatch a parsed command line. Honors `MSPTSNE_THREADS`.
pub fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("MSPTSNE_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::Invalid(format!("MSPTSNE_THREADS must be a positive integer, got {v:?}"))
        })?;
        if n == 0 {
            return Err(Error::Invalid("MSPTSNE_THREADS must be positive".into()));
        }
        // ignore the error if a pool already exists (e.g. under tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Transform(args) => cmd_transform(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Experiment(args) => cmd_experiment(&args),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let dataset = gen_helix_coils(args.n, args.coils, args.noise, args.seed)?;
    save_csv_atomic(&dataset.x, None, &args.out)?;
    println!(
        "N={} M={} -> {}",
        dataset.x.nrows(),
        dataset.x.ncols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let dataset = load_prepared(&args.data, &args.data_args, args.seed)?;
    let mode = resolve_mode(args.mode, args.perplexity)?;
    let cfg = args.train.config(mode, args.seed);
    let (model, log) = fit(&dataset.x, &cfg)?;

    save_model_atomic(&model, &args.out)?;
    let log_path = log_path_for(&args.out);
    let mut csv = String::from("# epoch,loss\n");
    for (i, loss) in log.epoch_loss.iter().enumerate() {
        let _ = writeln!(csv, "{},{loss:?}", i + 1);
    }
    write_atomic(&log_path, csv.as_bytes())?;
    println!(
        "trained {} epochs, final loss {:?} -> {} (log: {})",
        cfg.epochs,
        log.final_loss,
        args.out.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_transform(args: &TransformArgs) -> Result<()> {
    let model = MlpModel::load(&args.model)?;
    let dataset = load_prepared(&args.data, &args.data_args, args.seed)?;
    let y = transform(&model, &dataset.x)?;
    save_csv_atomic(&y, dataset.labels.as_deref(), &args.out)?;
    println!(
        "embedded {} points into {} dims -> {}",
        y.nrows(),
        y.ncols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let hd = load_csv(&args.hd, args.labels, args.skip_header)?;
    let ld = load_csv(&args.ld, args.labels, args.skip_header)?;
    let curve = evaluate_embedding(&hd.x, &ld.x)?;
    write_atomic(&args.out, curve_csv(&curve).as_bytes())?;
    println!("auc={:?}", curve.auc);
    Ok(())
}

/// Everything `experiment` writes for one method.
struct MethodOutcome {
    label: String,
    widths: Vec<usize>,
    train_auc: f64,
    extended_auc: f64,
    train_curve: PathBuf,
    extended_curve: PathBuf,
}

#[derive(Serialize)]
struct ExperimentConfigEcho {
    dataset: String,
    n: usize,
    m: usize,
    seed: u64,
    test_fraction: f64,
    perplexities: Vec<f64>,
    width_grid: Vec<Vec<usize>>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    output_dim: usize,
    scale: bool,
    jitter: Option<f64>,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let dataset = load_prepared(&args.data, &args.data_args, args.seed)?;
    let (n, m) = dataset.x.dim();
    let split = train_test_split(n, args.test_fraction, args.seed.wrapping_add(SEED_SPLIT))?;
    let train_x = datasets::take_rows(&dataset.x, &split.train_indices);
    let test_x = datasets::take_rows(&dataset.x, &split.test_indices);
    let union_x = concatenate(Axis(0), &[train_x.view(), test_x.view()])
        .expect("matching column counts");

    let width_grid = match &args.width_grid {
        Some(spec) => parse_width_grid(spec)?,
        None => vec![args
            .train
            .layers
            .clone()
            .unwrap_or(TrainConfig::default().hidden_widths)],
    };

    let mut methods: Vec<(String, TrainMode)> = vec![("multiscale".into(), TrainMode::Multiscale)];
    for &p in &args.perplexities {
        methods.push((format!("perp{p}"), TrainMode::Fixed { perplexity: p }));
    }

    let out = &args.out;
    std::fs::create_dir_all(out.join("curves"))?;
    std::fs::create_dir_all(out.join("models"))?;
    std::fs::create_dir_all(out.join("embeddings"))?;

    let union_labels: Option<Vec<i64>> = dataset.labels.as_ref().map(|l| {
        split
            .train_indices
            .iter()
            .chain(&split.test_indices)
            .map(|&i| l[i])
            .collect()
    });
    let train_labels: Option<Vec<i64>> = dataset
        .labels
        .as_ref()
        .map(|l| split.train_indices.iter().map(|&i| l[i]).collect());

    // methods are independent; run them in parallel and assemble in order
    let outcomes: Vec<MethodOutcome> = methods
        .par_iter()
        .enumerate()
        .map(|(idx, (label, mode))| {
            run_method(
                args,
                out,
                label,
                *mode,
                args.seed.wrapping_add(SEED_METHOD_BASE + idx as u64),
                &width_grid,
                &train_x,
                &union_x,
                train_labels.as_deref(),
                union_labels.as_deref(),
            )
            .map_err(|e| e.context(format!("method {label}")))
        })
        .collect::<Result<_>>()?;

    let mut summary = String::from(
        "# method,widths,train_auc,extended_auc,train_curve,extended_curve\n",
    );
    for o in &outcomes {
        let widths = o
            .widths
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(
            summary,
            "{},{widths},{:?},{:?},{},{}",
            o.label,
            o.train_auc,
            o.extended_auc,
            o.train_curve.display(),
            o.extended_curve.display()
        );
    }
    write_atomic(&out.join("summary.csv"), summary.as_bytes())?;

    let echo = ExperimentConfigEcho {
        dataset: dataset.name.clone(),
        n,
        m,
        seed: args.seed,
        test_fraction: args.test_fraction,
        perplexities: args.perplexities.clone(),
        width_grid,
        epochs: args.train.epochs,
        learning_rate: args.train.lr,
        batch_size: args.train.batch_size,
        output_dim: args.train.output_dim,
        scale: args.data_args.scale,
        jitter: args.data_args.jitter,
        train_indices: split.train_indices.clone(),
        test_indices: split.test_indices.clone(),
    };
    let config_json =
        serde_json::to_string_pretty(&echo).expect("plain data serializes");
    write_atomic(&out.join("config.json"), config_json.as_bytes())?;

    println!("{}", out.join("summary.csv").display());
    for o in &outcomes {
        println!(
            "{}: train auc {:?}, extended auc {:?}",
            o.label, o.train_auc, o.extended_auc
        );
    }
    Ok(())
}

/// Fit one method (grid-searching widths on the training AUC when a grid is
/// given), then score and persist both scenarios.
#[allow(clippy::too_many_arguments)]
fn run_method(
    args: &ExperimentArgs,
    out: &Path,
    label: &str,
    mode: TrainMode,
    seed: u64,
    width_grid: &[Vec<usize>],
    train_x: &Array2<f64>,
    union_x: &Array2<f64>,
    train_labels: Option<&[i64]>,
    union_labels: Option<&[i64]>,
) -> Result<MethodOutcome> {
    let mut best: Option<(f64, Vec<usize>, MlpModel, QualityCurve)> = None;
    for widths in width_grid {
        let mut cfg = args.train.config(mode, seed);
        cfg.hidden_widths = widths.clone();
        let (model, log) = fit(train_x, &cfg)?;
        let train_curve = evaluate_embedding(train_x, &log.final_embedding)?;
        let auc = train_curve.auc;
        log::info!("method {label}: widths {widths:?} -> train auc {auc:.4}");
        if best.as_ref().is_none_or(|(b, ..)| auc > *b) {
            best = Some((auc, widths.clone(), model, train_curve));
        }
    }
    let (train_auc, widths, model, train_curve) = best.expect("nonempty width grid");

    let train_y = transform(&model, train_x)?;
    let union_y = transform(&model, union_x)?;
    let extended_curve = evaluate_embedding(union_x, &union_y)?;

    let train_curve_path = out.join("curves").join(format!("{label}_train.csv"));
    let extended_curve_path = out.join("curves").join(format!("{label}_extended.csv"));
    write_atomic(&train_curve_path, curve_csv(&train_curve).as_bytes())?;
    write_atomic(&extended_curve_path, curve_csv(&extended_curve).as_bytes())?;
    save_model_atomic(&model, &out.join("models").join(format!("{label}.mspt")))?;
    save_csv_atomic(
        &train_y,
        train_labels,
        &out.join("embeddings").join(format!("{label}_train.csv")),
    )?;
    save_csv_atomic(
        &union_y,
        union_labels,
        &out.join("embeddings").join(format!("{label}_extended.csv")),
    )?;

    Ok(MethodOutcome {
        label: label.to_string(),
        widths,
        train_auc,
        extended_auc: extended_curve.auc,
        train_curve: train_curve_path,
        extended_curve: extended_curve_path,
    })
}

fn resolve_mode(mode: ModeArg, perplexity: Option<f64>) -> Result<TrainMode> {
    match (mode, perplexity) {
        (ModeArg::Multiscale, None) => Ok(TrainMode::Multiscale),
        (ModeArg::Multiscale, Some(_)) => Err(Error::Invalid(
            "--perplexity only applies to --mode fixed".into(),
        )),
        (ModeArg::Fixed, Some(p)) => Ok(TrainMode::Fixed { perplexity: p }),
        (ModeArg::Fixed, None) => Err(Error::Invalid(
            "--mode fixed requires --perplexity".into(),
        )),
    }
}

/// Load a dataset and apply the requested preprocessing (scaling first,
/// then jitter).
fn load_prepared(path: &Path, data_args: &DataArgs, seed: u64) -> Result<Dataset> {
    let mut dataset = load_csv(path, data_args.labels, data_args.skip_header)?;
    if data_args.scale {
        dataset.x = datasets::min_max_scale(&dataset.x);
    }
    if let Some(sd) = data_args.jitter {
        dataset.x = datasets::jitter(&dataset.x, sd, seed.wrapping_add(SEED_JITTER))?;
    }
    Ok(dataset)
}

fn parse_width_grid(spec: &str) -> Result<Vec<Vec<usize>>> {
    let mut grid = Vec::new();
    for part in spec.split(';') {
        let widths: std::result::Result<Vec<usize>, _> =
            part.split(',').map(|w| w.trim().parse()).collect();
        match widths {
            Ok(w) if !w.is_empty() => grid.push(w),
            _ => {
                return Err(Error::Invalid(format!(
                    "cannot parse width configuration {part:?}"
                )))
            }
        }
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty width grid".into()));
    }
    Ok(grid)
}

fn curve_csv(curve: &QualityCurve) -> String {
    let mut out = format!("# auc={:?}\n", curve.auc);
    for (idx, (q, r)) in curve.qnx.iter().zip(&curve.rnx).enumerate() {
        let _ = writeln!(out, "{},{q:?},{r:?}", idx + 1);
    }
    out
}

fn log_path_for(model_path: &Path) -> PathBuf {
    let mut name = model_path
        .file_stem()
        .unwrap_or_default()
        .to_os_string();
    name.push(".log.csv");
    model_path.with_file_name(name)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write then rename, so interrupted runs never leave partial files under
/// the final name.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn save_csv_atomic(x: &Array2<f64>, labels: Option<&[i64]>, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    datasets::save_csv(x, labels, &tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn save_model_atomic(model: &MlpModel, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    model.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
