//! `layershuffle` command-line driver.
//!
//! Exit status: 0 on success, 2 on usage errors (including arguments that
//! do not fit the loaded checkpoint), 1 on runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use layershuffle::data::{generate_dataset, Dataset, SyntheticDatasetSpec};
use layershuffle::eval::{
    contribution_analysis, dump_embeddings, evaluate, sample_indices, EvalOrderSpec, KeepSpec,
    OrderMode,
};
use layershuffle::sim::{assign_layers, simulate, AssignStrategy, OrderPolicy, SimConfig};
use layershuffle::train::{metrics_log, train, TrainConfig, TrainMode};
use layershuffle::{Checkpoint, Error, ModelConfig, Permutation, VisionTransformer};

#[derive(Parser)]
#[command(name = "layershuffle", version, about = "Train and probe vision transformers under shuffled layer orders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint under a layer order.
    Eval(EvalArgs),
    /// Class-token contributions or layer embedding dumps.
    Analyze(AnalyzeArgs),
    /// Simulate inference over failing nodes.
    Sim(SimArgs),
    /// Generate the synthetic dataset.
    Dataset(DatasetArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Shuffle,
    ShufflePosition,
    ShufflePredict,
    Layerdrop,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file; generated from the checkpoint's data seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Drop probability for `--mode layerdrop`.
    #[arg(long, default_value_t = 0.2)]
    drop_prob: f64,
    /// Train only these layers (one-based, comma-separated).
    #[arg(long, value_delimiter = ',')]
    layers_subset: Option<Vec<usize>>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Dataset file; generated from `--data-seed` when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed of the generated dataset (defaults to `--seed`).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Also write the per-epoch metrics here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// `sequential`, `arbitrary` or `fixed:i,j,...` (one-based).
    #[arg(long, default_value = "sequential")]
    order: String,
    /// Keep this many randomly chosen layers.
    #[arg(long, conflicts_with = "subset")]
    keep: Option<usize>,
    /// Keep exactly these layers (one-based).
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Write class-token contributions as CSV.
    #[arg(long, conflicts_with = "dump_layer", required_unless_present = "dump_layer")]
    contributions: bool,
    /// Dump the outputs of this layer (one-based).
    #[arg(long)]
    dump_layer: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Passes per image for `--contributions`.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AssignArg {
    Roundrobin,
    Contiguous,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    ArrivalRandom,
    PlanSequential,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "roundrobin")]
    assign: AssignArg,
    #[arg(long, default_value_t = 0.0)]
    fail_prob: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, value_enum, default_value = "arrival-random")]
    order: PolicyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, required = true)]
    generate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::InvalidPermutation(_) => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Runtime(e),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Sim(a) => run_sim(a),
        Command::Dataset(a) => run_dataset(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// One-based ids to zero-based, rejecting 0.
fn zero_based(ids: &[usize], what: &str) -> Result<Vec<usize>, Failure> {
    ids.iter()
        .map(|&i| i.checked_sub(1).ok_or_else(|| usage(format!("{what} ids start at 1"))))
        .collect()
}

fn load_data(path: Option<&Path>, seed: u64) -> Result<Dataset, Failure> {
    Ok(match path {
        Some(p) => Dataset::load(p)?,
        None => generate_dataset(&SyntheticDatasetSpec::with_seed(seed))?,
    })
}

fn load_model(path: &Path) -> Result<(Checkpoint, VisionTransformer), Failure> {
    let ck = Checkpoint::load(path).map_err(Failure::Runtime)?;
    let model = ck.to_model().map_err(Failure::Runtime)?;
    Ok((ck, model))
}

fn run_train(a: TrainArgs) -> Result<(), Failure> {
    let mode = match a.mode {
        ModeArg::Baseline => TrainMode::Baseline,
        ModeArg::Shuffle => TrainMode::LayerShuffle,
        ModeArg::ShufflePosition => TrainMode::LayerShufflePosition,
        ModeArg::ShufflePredict => TrainMode::LayerShufflePredict,
        ModeArg::Layerdrop => TrainMode::LayerDrop(a.drop_prob),
    };
    let model = match &a.init {
        Some(p) => load_model(p)?.1,
        None => VisionTransformer::init(ModelConfig::default(), a.seed)?,
    };
    let data_seed = a.data_seed.unwrap_or(a.seed);
    let data = load_data(a.data.as_deref(), data_seed)?;
    let layers_subset = a
        .layers_subset
        .as_deref()
        .map(|ids| zero_based(ids, "layer"))
        .transpose()?;
    let cfg = TrainConfig {
        mode,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        lr: a.lr,
        layers_subset,
        checkpoint_path: Some(a.out.clone()),
        ..Default::default()
    };
    let outcome = train(model, &data, &cfg)?;
    let log = metrics_log(&outcome.log);
    print!("{log}");
    if let Some(path) = &a.log {
        fs::write(path, &log).map_err(|e| Failure::Runtime(e.into()))?;
    }
    eprintln!(
        "best epoch {} (val loss {:.6}) written to {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn parse_order(order: &str, layers: usize) -> Result<OrderChoice, Failure> {
    match order {
        "sequential" => Ok(OrderChoice::Mode(OrderMode::Sequential)),
        "arbitrary" => Ok(OrderChoice::Mode(OrderMode::Arbitrary)),
        _ => {
            let list = order
                .strip_prefix("fixed:")
                .ok_or_else(|| usage(format!("unknown order {order:?}")))?;
            let ids = list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| usage(format!("bad fixed order {list:?}")))?;
            let perm = Permutation::from_one_based(&ids)?;
            if perm.len() != layers {
                return Err(usage(format!(
                    "fixed order lists {} layers, checkpoint has {layers}",
                    perm.len()
                )));
            }
            Ok(OrderChoice::Fixed(perm))
        }
    }
}

enum OrderChoice {
    Mode(OrderMode),
    Fixed(Permutation),
}

fn run_eval(a: EvalArgs) -> Result<(), Failure> {
    let (ck, model) = load_model(&a.ckpt)?;
    let layers = model.layers();
    let order = parse_order(&a.order, layers)?;
    let keep = match (a.keep, &a.subset) {
        (Some(k), _) => {
            if k == 0 || k > layers {
                return Err(usage(format!("--keep {k} outside 1..={layers}")));
            }
            Some(KeepSpec::Count(k))
        }
        (None, Some(ids)) => Some(KeepSpec::Subset(zero_based(ids, "layer")?)),
        (None, None) => None,
    };
    let spec = match (order, keep) {
        (OrderChoice::Mode(OrderMode::Sequential), None) => EvalOrderSpec::Sequential,
        (OrderChoice::Mode(OrderMode::Arbitrary), None) => EvalOrderSpec::ArbitraryPerPass,
        (OrderChoice::Fixed(p), None) => EvalOrderSpec::Fixed(p),
        (OrderChoice::Mode(order), Some(keep)) => EvalOrderSpec::Pruned { keep, order },
        (OrderChoice::Fixed(_), Some(_)) => {
            return Err(usage("--keep/--subset need a sequential or arbitrary order"))
        }
    };
    spec.validate(layers)?;
    let data = load_data(a.data.data.as_deref(), ck.data_seed)?;
    let summary = evaluate(&model, &data.test, &spec, a.repeats, a.seed)?;
    for (i, acc) in summary.accuracies.iter().enumerate() {
        println!("repeat {}\taccuracy {acc:.6}", i + 1);
    }
    println!(
        "accuracy mean {:.6} std {:.6} repeats {}",
        summary.mean, summary.std, a.repeats
    );
    Ok(())
}

fn run_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let (ck, model) = load_model(&a.ckpt)?;
    let layers = model.layers();
    let dump_layer = match a.dump_layer {
        Some(l) if l == 0 || l > layers => {
            return Err(usage(format!("--dump-layer {l} outside 1..={layers}")))
        }
        other => other.map(|l| l - 1),
    };
    if a.passes == 0 {
        return Err(usage("--passes must be >= 1"));
    }
    let data = load_data(a.data.data.as_deref(), ck.data_seed)?;
    let images = sample_indices(data.test.len(), a.samples, a.seed)?;
    let write = |bytes: &[u8]| fs::write(&a.out, bytes).map_err(|e| Failure::Runtime(e.into()));
    match dump_layer {
        Some(layer) => {
            let dump = dump_embeddings(&model, &data.test, &images, layer, a.seed)?;
            write(&dump.to_bytes())?;
            eprintln!("{} records of length {}", dump.records.len(), dump.vector_len);
        }
        None => {
            let report = contribution_analysis(&model, &data.test, &images, a.passes, a.seed)?;
            write(report.to_csv().as_bytes())?;
            for l in 0..layers {
                println!(
                    "layer {}\tvariance across positions {:.6e}",
                    l + 1,
                    report.summary.variance_across_positions(l)
                );
            }
        }
    }
    Ok(())
}

fn run_sim(a: SimArgs) -> Result<(), Failure> {
    let (ck, model) = load_model(&a.ckpt)?;
    let strategy = match a.assign {
        AssignArg::Roundrobin => AssignStrategy::RoundRobin,
        AssignArg::Contiguous => AssignStrategy::Contiguous,
    };
    let policy = match a.order {
        PolicyArg::ArrivalRandom => OrderPolicy::ArrivalRandom,
        PolicyArg::PlanSequential => OrderPolicy::PlanSequential,
    };
    let plan = assign_layers(model.layers(), a.nodes, strategy)?;
    let cfg = SimConfig {
        fail_prob: a.fail_prob,
        policy,
        trials: a.trials,
        seed: a.seed,
    };
    cfg.validate()?;
    let data = load_data(a.data.data.as_deref(), ck.data_seed)?;
    let report = simulate(&model, &data.test, &plan, &cfg)?;
    let csv = report.to_csv();
    match &a.out {
        Some(path) => fs::write(path, csv).map_err(|e| Failure::Runtime(e.into()))?,
        None => print!("{csv}"),
    }
    eprintln!("overall accuracy {:.6}", report.overall_accuracy());
    Ok(())
}

fn run_dataset(a: DatasetArgs) -> Result<(), Failure> {
    debug_assert!(a.generate);
    let data = generate_dataset(&SyntheticDatasetSpec::with_seed(a.seed))?;
    data.save(&a.out).map_err(Failure::Runtime)?;
    println!("checksum {:016x}", data.checksum());
    Ok(())
}
