use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d2st::data::{self, GeneratorKind, GeneratorSpec, MatrixFormat, Role};
use d2st::experiment::{self, ExperimentConfig, Method, RunOptions, TestParams};
use d2st::featmap::{self, FeatureNet, TrainConfig};
use d2st::{Error, Matrix};

#[derive(Parser)]
#[command(name = "d2st", version, about = "Two-sample tests on learned deep features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a feature net on a transfer pair and write it as JSON.
    Train(TrainArgs),
    /// Run one two-sample test and print the result as a JSON line.
    Test(TestArgs),
    /// Estimate type-1/type-2 error rates over a sample-size sweep.
    Experiment(ExperimentArgs),
    /// Draw a synthetic sample and write it to a matrix file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    transfer_x: PathBuf,
    transfer_y: PathBuf,
    /// Output path for the net JSON.
    #[arg(long)]
    out: PathBuf,
    /// Training-trace CSV; defaults to `<out stem>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON file with training settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = featmap::DEFAULT_DEPTH)]
    depth: usize,
    /// Frobenius-product bound; defaults to 10·√d.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_format)]
    format: Option<MatrixFormat>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TestArgs {
    x: PathBuf,
    y: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Feature net JSON; without it the inputs are used as features.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, default_value_t = experiment::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = d2st::nulldist::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_format)]
    format: Option<MatrixFormat>,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Sweep CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Train one net up front and reuse it in every replicate.
    #[arg(long)]
    fixed_net: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: GeneratorKind,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    transfer_delta: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, value_parser = parse_role, default_value = "p")]
    role: Role,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<MatrixFormat>,
    #[arg(long)]
    overwrite: bool,
}

fn parse_format(s: &str) -> Result<MatrixFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<GeneratorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_role(s: &str) -> Result<Role, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(path: &Path, format: Option<MatrixFormat>) -> d2st::Result<Matrix> {
    data::load_matrix(path, format.unwrap_or_else(|| MatrixFormat::from_path(path)))
}

fn write_new(path: &Path, contents: &str, overwrite: bool) -> d2st::Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::AlreadyExists(path.to_path_buf()));
    }
    fs::write(path, contents)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> d2st::Result<()> {
    let xp = load(&args.transfer_x, args.format)?;
    let yp = load(&args.transfer_y, args.format)?;
    if xp.ncols() != yp.ncols() {
        return Err(Error::Shape {
            line: 1,
            expected: xp.ncols(),
            found: yp.ncols(),
        });
    }
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?,
        None => TrainConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;

    let d = xp.ncols();
    let beta = args.beta.unwrap_or_else(|| featmap::default_beta(d));
    let init = FeatureNet::init(d, args.depth, beta, d2st::data::rng::mix(args.seed, 1))?;
    let outcome = featmap::train(&init, &xp, &yp, &cfg)?;

    let trace_path = args.trace.unwrap_or_else(|| args.out.with_extension("trace.csv"));
    write_new(&args.out, &outcome.net.to_json(), args.overwrite)?;
    write_new(&trace_path, &featmap::trace_csv(&outcome.trace), args.overwrite)?;
    println!(
        "{}",
        serde_json::json!({
            "objective": outcome.best_objective(),
            "epochs": outcome.trace.len() - 1,
            "net": args.out,
            "trace": trace_path,
        })
    );
    Ok(())
}

fn cmd_test(args: TestArgs) -> d2st::Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Config(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if args.permutations < 1 {
        return Err(Error::Config("--permutations must be >= 1".into()));
    }
    let x = load(&args.x, args.format)?;
    let y = load(&args.y, args.format)?;
    let net = match &args.net {
        Some(path) => Some(FeatureNet::from_json(&fs::read_to_string(path)?)?),
        None => None,
    };
    let params = TestParams {
        alpha: args.alpha,
        permutations: args.permutations,
        seed: args.seed,
        ..TestParams::default()
    };
    let result = experiment::run_test(args.method, &x, &y, net.as_ref(), &params)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> d2st::Result<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(p) = args.permutations {
        cfg.permutations = p;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    if let Some(out) = &args.out {
        if !args.overwrite && out.exists() {
            return Err(Error::AlreadyExists(out.clone()));
        }
    }
    let opts = RunOptions {
        threads: args.threads,
        fixed_net: args.fixed_net,
    };
    let rows = experiment::run_experiment(&cfg, &opts)?;
    let csv = experiment::sweep_csv(&rows);
    match &args.out {
        Some(out) => write_new(out, &csv, true)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> d2st::Result<()> {
    let kind = match args.kind {
        GeneratorKind::GaussianShift { epsilon } => GeneratorKind::GaussianShift {
            epsilon: args.epsilon.unwrap_or(epsilon),
        },
        GeneratorKind::GaussianScale { scale } => GeneratorKind::GaussianScale {
            scale: args.scale.unwrap_or(scale),
        },
        GeneratorKind::Blobs { grid, ratio } => GeneratorKind::Blobs {
            grid: args.grid.unwrap_or(grid),
            ratio: args.ratio.unwrap_or(ratio),
        },
    };
    let spec = GeneratorSpec {
        kind,
        d: args.d,
        transfer_delta: args.transfer_delta,
    };
    spec.validate()?;
    let m = data::generate(&spec, args.n, args.role, args.seed)?;
    let format = args.format.unwrap_or_else(|| MatrixFormat::from_path(&args.out));
    data::save_matrix(&m, &args.out, format, args.overwrite)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Test(a) => cmd_test(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
