use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;

use opauc::data::{fit_scaling, scale_dataset, write_libsvm, Dataset, LabelMap, ScalingParams};
use opauc::error::{ConfigError, DataError, EvalError, HarnessError};
use opauc::eval::{auc_of, regret_trace, Checkpoints, RegretTrace};
use opauc::exact::ExactModel;
use opauc::harness::{self, load_libsvm, parse_grid, ExperimentConfig, DEFAULT_TAU};
use opauc::learner::{train_pass, StepPolicy};
use opauc::model::{Algorithm, LearnerSpec, Model, SavedModel};
use opauc::sketch::SketchModel;

#[derive(Parser)]
#[command(name = "opauc", version, about = "One-pass AUC optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model in a single pass and write it as JSON.
    Train(TrainArgs),
    /// Score a dataset with a saved model and print its AUC.
    Eval(EvalArgs),
    /// Repeated stratified cross-validation with grid search.
    Bench(BenchArgs),
    /// Record the cumulative online loss of one training pass as CSV.
    Trace(TraceArgs),
    /// Fit or apply [-1, 1] feature scaling.
    #[command(subcommand)]
    Scale(ScaleCommand),
}

#[derive(Args)]
struct DataArgs {
    /// LIBSVM-format input.
    data: PathBuf,
    /// Comma-separated labels treated as positive; others are negative.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    positive_labels: Option<Vec<f64>>,
}

impl DataArgs {
    fn label_map(&self) -> LabelMap {
        match &self.positive_labels {
            Some(set) => LabelMap::Positive(set.clone()),
            None => LabelMap::Binary,
        }
    }

    fn load(&self) -> Result<Dataset, CliError> {
        Ok(load_libsvm(&self.data, &self.label_map())?)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    algo: String,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Sketch size (required for opauc-r).
    #[arg(long)]
    tau: Option<usize>,
    /// Reduced dimension (required for opauc-f and opauc-rp).
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Seeds the stream shuffle, the sketch and the feature map. Without it
    /// the file order is used.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn algorithm(&self) -> Result<Algorithm, CliError> {
        let algo: Algorithm = self.algo.parse()?;
        if algo.needs_tau() && self.tau.is_none() {
            return Err(CliError::Usage(format!("--algo {algo} requires --tau")));
        }
        if algo.needs_proj_dim() && self.proj_dim.is_none() {
            return Err(CliError::Usage(format!(
                "--algo {algo} requires --proj-dim"
            )));
        }
        Ok(algo)
    }

    fn spec(&self, dim: usize) -> Result<LearnerSpec, CliError> {
        Ok(LearnerSpec {
            algo: self.algorithm()?,
            dim,
            lambda: self.lambda,
            tau: self.tau.unwrap_or(DEFAULT_TAU),
            proj_dim: self.proj_dim.unwrap_or(0),
            seed: self.seed.unwrap_or(0),
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    eta: f64,
    /// Scaling parameters applied before training.
    #[arg(long)]
    scaling: Option<PathBuf>,
    /// Model JSON destination (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scaling: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    algo: String,
    /// Stepsize grid, e.g. `2^[-12:10]` or `0.01,0.1,2^-3`.
    #[arg(long, default_value = "2^[-12:10]", allow_hyphen_values = true)]
    eta_grid: String,
    #[arg(long, default_value = "2^[-10:2]", allow_hyphen_values = true)]
    lambda_grid: String,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Constant stepsize; omit to use the smooth-regret schedule.
    #[arg(long)]
    eta: Option<f64>,
    /// Comparator norm bound for the smooth-regret schedule.
    #[arg(long)]
    bound_b: Option<f64>,
    /// Comparator average loss for the smooth-regret schedule.
    #[arg(long)]
    l_star: Option<f64>,
    /// Comma-separated steps to record (default: powers of two).
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Saved model whose weights serve as the fixed comparator.
    #[arg(long)]
    comparator: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Subcommand)]
enum ScaleCommand {
    /// Fit per-feature ranges and write them as JSON.
    Fit {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rescale a dataset with previously fitted ranges.
    Apply {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_scaling(path: Option<&Path>) -> Result<Option<ScalingParams>, CliError> {
    path.map(|p| Ok(ScalingParams::from_json(&read_text(p)?)?))
        .transpose()
}

fn read_model(path: &Path) -> Result<Model, CliError> {
    let saved: SavedModel = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Model::from_saved(&saved).map_err(|e| CliError::Data(e.to_string()))
}

fn load_scaled(data: &DataArgs, scaling: Option<&Path>) -> Result<Dataset, CliError> {
    let ds = data.load()?;
    Ok(match read_scaling(scaling)? {
        Some(params) => scale_dataset(&ds, &params),
        None => ds,
    })
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let spec = args.model.spec(0)?;
    let ds = load_scaled(&args.data, args.scaling.as_deref())?;
    let mut model = Model::build(&LearnerSpec {
        dim: ds.dim(),
        ..spec
    })?;
    train_pass(&mut model, ds.stream(args.model.seed), args.eta);
    let auc = auc_of(&model, &ds)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &model.to_saved()).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    if args.out.is_some() {
        println!("auc\t{auc}");
    } else {
        eprintln!("auc\t{auc}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let ds = load_scaled(&args.data, args.scaling.as_deref())?;
    println!("auc\t{}", auc_of(&model, &ds)?);
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let algo: Algorithm = args.algo.parse()?;
    if algo.needs_tau() && args.tau.is_none() {
        return Err(CliError::Usage(format!("--algo {algo} requires --tau")));
    }
    let config = ExperimentConfig {
        data_path: args.data.data.display().to_string(),
        algo,
        eta_grid: parse_grid(&args.eta_grid)?,
        lambda_grid: parse_grid(&args.lambda_grid)?,
        tau: args.tau.unwrap_or(DEFAULT_TAU),
        proj_dim: args.proj_dim,
        folds: args.folds,
        trials: args.trials,
        seed: args.seed,
        positive_labels: args.data.positive_labels.clone(),
    };
    config.validate()?;
    let report = harness::run_cv(&config)?;
    let mut out = output(args.out.as_deref())?;
    match args.format {
        ReportFormat::Json => writeln!(out, "{}", report.to_json())?,
        ReportFormat::Csv => report.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn trace(args: TraceArgs) -> Result<(), CliError> {
    let spec = args.model.spec(0)?;
    let policy = match (args.eta, args.bound_b, args.l_star) {
        (Some(eta), None, None) => StepPolicy::Constant { eta },
        (None, Some(bound_b), Some(l_star)) => StepPolicy::SmoothRegret {
            bound_b,
            l_star,
            horizon: 0.0,
        },
        _ => {
            return Err(CliError::Usage(
                "give either --eta or both --bound-b and --l-star".into(),
            ))
        }
    };
    let ds = args.data.load()?;
    let policy = match policy {
        StepPolicy::SmoothRegret {
            bound_b, l_star, ..
        } => StepPolicy::SmoothRegret {
            bound_b,
            l_star,
            horizon: ds.len() as f64,
        },
        p => p,
    };
    policy.validate().map_err(CliError::Usage)?;
    let comparator: Option<Array1<f64>> = match &args.comparator {
        Some(p) => {
            let model = read_model(p)?;
            let w = match &model {
                Model::Exact(m) => m.weights().to_owned(),
                Model::Sketch(m) => m.weights().to_owned(),
                _ => {
                    return Err(CliError::Usage(
                        "comparator must be an opauc or opauc-r model".into(),
                    ))
                }
            };
            if w.len() != ds.dim() {
                return Err(CliError::Data(format!(
                    "comparator has dimension {}, data has {}",
                    w.len(),
                    ds.dim()
                )));
            }
            Some(w)
        }
        None => None,
    };
    let checkpoints = match args.checkpoints {
        Some(ts) => Checkpoints::At(ts),
        None => Checkpoints::Geometric,
    };
    let eta = policy.eta(spec.lambda);
    let stream = ds.stream(args.model.seed);
    let cmp = comparator.as_ref().map(|w| w.view());
    let result: RegretTrace = match spec.algo {
        Algorithm::Opauc => {
            let mut m = ExactModel::new(ds.dim(), spec.lambda);
            regret_trace(&mut m, stream, eta, cmp, &checkpoints)
        }
        Algorithm::OpaucSketch => {
            let mut m = SketchModel::new(ds.dim(), spec.tau, spec.lambda, spec.seed);
            regret_trace(&mut m, stream, eta, cmp, &checkpoints)
        }
        other => {
            return Err(CliError::Usage(format!(
                "trace supports opauc and opauc-r, not {other}"
            )))
        }
    };
    let mut out = output(args.out.as_deref())?;
    result.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn scale(cmd: ScaleCommand) -> Result<(), CliError> {
    match cmd {
        ScaleCommand::Fit { out, data } => {
            let params = fit_scaling(&data.load()?)?;
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", params.to_json())?;
            w.flush()?;
        }
        ScaleCommand::Apply { params, out, data } => {
            let scaled = load_scaled(&data, Some(&params))?;
            let mut w = output(out.as_deref())?;
            write_libsvm(&scaled, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Trace(a) => trace(a),
        Command::Scale(c) => scale(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Data(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
