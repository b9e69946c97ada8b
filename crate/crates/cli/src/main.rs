//! `natgrad`: train small dense networks with SGD or natural-gradient
//! optimizers, run learning-rate and batch-size studies, benchmark scaling,
//! and verify the numerical identities behind the optimizers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use natgrad_core::harness::logs::{write_scaling_csv, write_train_csv};
use natgrad_core::harness::{
    batch_sweep, emit_checks, emit_logs, emit_scaling, grid_search_lr, load_csv_dataset, loglog_slope, make_synthetic,
    scaling_bench, standardize, train_run, AlphaPolicy, Dataset, RunConfig, ScalingConfig, SyntheticKind, Task,
    TrainRecord, DEFAULT_ALPHA_GRID,
};
use natgrad_core::oracle::{run_battery, BatteryConfig};
use natgrad_core::{Activation, Method, OptimConfig};

#[derive(Debug, Parser)]
#[command(name = "natgrad", version, about = "Natural-gradient optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and log every step.
    Train(TrainArgs),
    /// Train once per learning rate and report the best.
    GridSearch(GridArgs),
    /// Train once per batch size.
    BatchSweep(SweepArgs),
    /// Time one optimizer step across network depths.
    BenchScaling(BenchArgs),
    /// Run the numerical identity checks; exits 1 if any fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["dataset", "synthetic"])))]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Generated data: linreg_gaussian or blobs_classification.
    #[arg(long)]
    synthetic: Option<SyntheticKind>,
    /// Target column of the CSV file.
    #[arg(long, requires = "dataset")]
    target: Option<String>,
    /// regression or classification (CSV input only).
    #[arg(long, default_value = "regression")]
    task: Task,
    /// Rows of synthetic data.
    #[arg(long, default_value_t = 2048)]
    samples: usize,
    /// Features of synthetic data.
    #[arg(long, default_value_t = 8)]
    features: usize,
    /// Seed of the synthetic data generator.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Z-score features (and regression targets) before training.
    #[arg(long)]
    standardize: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden layer sizes, e.g. "20,20". Empty for a linear model.
    #[arg(long, default_value = "4", value_parser = parse_sizes)]
    hidden: Sizes,
    /// tanh, relu or identity.
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    activation: Activation,
    /// sgd, exact-ngd, block-ngd or tengrad.
    #[arg(long, default_value = "tengrad")]
    method: Method,
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write wall-clock step times to the log (makes output nondeterministic).
    #[arg(long)]
    record_timing: bool,
    /// Output CSV path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Candidate learning rates.
    #[arg(long, value_parser = parse_reals)]
    alphas: Option<Reals>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Batch sizes to compare.
    #[arg(long, default_value = "8,32,128,1024", value_parser = parse_sizes)]
    sizes: Sizes,
    /// Grid-search the learning rate separately for every batch size.
    #[arg(long)]
    grid_search: bool,
    /// Candidate learning rates for --grid-search.
    #[arg(long, value_parser = parse_reals, requires = "grid_search")]
    alphas: Option<Reals>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "1,2,3,4,16", value_parser = parse_sizes)]
    depths: Sizes,
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Methods to time, comma separated.
    #[arg(long, default_value = "sgd,exact-ngd,tengrad", value_parser = parse_methods)]
    methods: Methods,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    /// Largest parameter count for which exact NGD forms a dense Fisher.
    #[arg(long, default_value_t = 5000)]
    dense_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = BatteryConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = BatteryConfig::default().score_samples)]
    score_samples: usize,
    #[arg(long, default_value_t = BatteryConfig::default().fim_samples)]
    fim_samples: usize,
    /// Output CSV path.
    #[arg(long, default_value = "verify.csv")]
    out: PathBuf,
}

// clap treats a bare `Vec<T>` as a repeated flag; wrap the parsed lists instead
#[derive(Debug, Clone)]
struct Sizes(Vec<usize>);
#[derive(Debug, Clone)]
struct Reals(Vec<f64>);
#[derive(Debug, Clone)]
struct Methods(Vec<Method>);

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

fn parse_sizes(s: &str) -> Result<Sizes, String> {
    parse_list(s).map(Sizes)
}

fn parse_reals(s: &str) -> Result<Reals, String> {
    let v: Vec<f64> = parse_list(s)?;
    if v.is_empty() {
        return Err("need at least one value".into());
    }
    Ok(Reals(v))
}

fn parse_methods(s: &str) -> Result<Methods, String> {
    parse_list(s).map(Methods)
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        "identity" | "linear" => Ok(Activation::Identity),
        _ => Err(format!("unknown activation '{s}'")),
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    let ds = match (&args.dataset, args.synthetic) {
        (Some(path), _) => {
            let target = args.target.as_deref().ok_or("--dataset needs --target")?;
            let ds = load_csv_dataset(path, target, args.task)?;
            if ds.dropped_rows > 0 {
                eprintln!("dropped {} rows with unparseable values", ds.dropped_rows);
            }
            ds
        }
        (None, Some(kind)) => make_synthetic(kind, args.samples, args.features, args.data_seed)?,
        (None, None) => return Err("one of --dataset or --synthetic is required".into()),
    };
    Ok(if args.standardize { standardize(&ds)? } else { ds })
}

fn run_config(args: &RunArgs) -> RunConfig {
    let optim = OptimConfig {
        beta: args.beta,
        lr_decay: args.lr_decay,
        weight_decay: args.weight_decay,
        ..OptimConfig::new(args.method, args.alpha)
    };
    RunConfig {
        activation: args.activation,
        record_timing: args.record_timing,
        ..RunConfig::new(args.hidden.0.clone(), optim, args.batch_size, args.epochs, args.seed)
    }
}

fn write_records(records: &[TrainRecord], out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => emit_logs(records, path)?,
        None => write_train_csv(records, std::io::stdout().lock())?,
    }
    Ok(())
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let ds = load_data(&args.run.data)?;
    let outcome = train_run(&ds, &run_config(&args.run))?;
    write_records(&outcome.records, args.run.out.as_deref())?;
    let last = outcome.epoch_losses.last().copied().unwrap_or(outcome.initial_loss);
    eprintln!(
        "{}: {} steps, loss {:.6e} -> {:.6e} ({})",
        args.run.method,
        outcome.records.len(),
        outcome.initial_loss,
        last,
        outcome.status
    );
    Ok(())
}

fn grid_search(args: &GridArgs) -> CliResult<()> {
    let ds = load_data(&args.run.data)?;
    let alphas = args
        .alphas
        .as_ref()
        .map_or(DEFAULT_ALPHA_GRID.to_vec(), |a| a.0.clone());
    let result = grid_search_lr(&ds, &run_config(&args.run), &alphas)?;
    let records: Vec<TrainRecord> = result
        .runs
        .iter()
        .flat_map(|(_, o)| o.records.iter().cloned())
        .collect();
    write_records(&records, args.run.out.as_deref())?;
    for (alpha, outcome) in &result.runs {
        let fin = outcome
            .final_epoch_mean()
            .map_or("-".to_string(), |l| format!("{l:.6e}"));
        eprintln!("alpha {alpha:<10e} final-epoch loss {fin:<14} {}", outcome.status);
    }
    eprintln!("best alpha {:e}", result.best_alpha);
    Ok(())
}

fn sweep(args: &SweepArgs) -> CliResult<()> {
    let ds = load_data(&args.run.data)?;
    let policy = if args.grid_search {
        AlphaPolicy::GridSearch(
            args.alphas
                .as_ref()
                .map_or(DEFAULT_ALPHA_GRID.to_vec(), |a| a.0.clone()),
        )
    } else {
        AlphaPolicy::Fixed
    };
    let points = batch_sweep(&ds, &run_config(&args.run), &args.sizes.0, &policy)?;
    let records: Vec<TrainRecord> = points.iter().flat_map(|p| p.outcome.records.iter().cloned()).collect();
    write_records(&records, args.run.out.as_deref())?;
    eprintln!("{:>10}  {:>10}  {:>14}  status", "batch", "alpha", "final loss");
    for p in &points {
        let fin = p
            .outcome
            .final_epoch_mean()
            .map_or("-".to_string(), |l| format!("{l:.6e}"));
        eprintln!(
            "{:>10}  {:>10e}  {:>14}  {}",
            p.batch_size, p.alpha, fin, p.outcome.status
        );
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> CliResult<()> {
    let cfg = ScalingConfig {
        depths: args.depths.0.clone(),
        width: args.width,
        input_dim: args.features,
        batch_size: args.batch_size,
        methods: args.methods.0.clone(),
        warmup_steps: args.warmup,
        timed_steps: args.steps,
        beta: args.beta,
        dense_cap: args.dense_cap,
        seed: args.seed,
        ..ScalingConfig::default()
    };
    let records = scaling_bench(&cfg)?;
    match &args.out {
        Some(path) => emit_scaling(&records, path)?,
        None => write_scaling_csv(&records, std::io::stdout().lock())?,
    }
    for &method in &cfg.methods {
        match loglog_slope(&records, method) {
            Some(s) => eprintln!("{method}: log-log slope of step time vs parameters {s:.3}"),
            None => eprintln!("{method}: too few feasible sizes for a slope"),
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> CliResult<bool> {
    let cfg = BatteryConfig {
        seed: args.seed,
        score_samples: args.score_samples,
        fim_samples: args.fim_samples,
        ..BatteryConfig::default()
    };
    let reports = run_battery(&cfg)?;
    emit_checks(&reports, &args.out)?;
    println!(
        "{:<34} {:<30} {:>12} {:>12}  status",
        "check", "metric", "value", "tolerance"
    );
    for r in &reports {
        println!(
            "{:<34} {:<30} {:>12.4e} {:>12.4e}  {}",
            r.name,
            r.metric,
            r.value,
            r.tolerance,
            r.status()
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::GridSearch(a) => grid_search(a).map(|_| true),
        Command::BatchSweep(a) => sweep(a).map(|_| true),
        Command::BenchScaling(a) => bench(a).map(|_| true),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
