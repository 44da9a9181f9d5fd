use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use corinfomax::checkpoint::load_checkpoint;
use corinfomax::data::load_dataset;
use corinfomax::trainer::{evaluate, segment_angles, train, EpochReport, Evaluation, TrainOptions};
use corinfomax::{Error, RunConfig, Split};

#[derive(Parser)]
#[command(name = "corinfomax", version, about = "Train and inspect CorInfoMax networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a config file or resume a run.
    Train(TrainArgs),
    /// Free-phase accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Angle between W_ff and W_fb transposed for every segment.
    Angles { checkpoint: PathBuf },
    /// Print checkpoint metadata and layer shapes.
    Inspect { checkpoint: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config. Defaults to the config stored in the `--resume` checkpoint.
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Run directory for metrics, checkpoints and summary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Zero wall-clock columns so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Dump per-step u and r of this layer (1-based) to trace.csv.
    #[arg(long)]
    trace_layer: Option<usize>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Print the figures as JSON with full precision.
    #[arg(long)]
    json: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Data { .. } => 3,
        e if e.is_divergence() => 4,
        _ => 1,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

fn progress(r: &EpochReport) {
    let angles: Vec<String> = r.angles.iter().map(|a| format!("{a:.1}")).collect();
    eprintln!(
        "epoch {:>3}  train {:>7} mse {:.4}  test {:>7} top5 {:>7}  angles [{}]  {:.0}s",
        r.epoch,
        pct(Some(r.train.top1)),
        r.train.mse,
        pct(Some(r.test.top1)),
        pct(r.test.top5),
        angles.join(", "),
        r.seconds
    );
}

fn cmd_train(args: TrainArgs) -> corinfomax::Result<()> {
    let mut cfg = match (&args.config, &args.resume) {
        (Some(path), _) => RunConfig::from_toml_file(path)?,
        (None, Some(ck)) => load_checkpoint(ck)?.config,
        (None, None) => unreachable!("clap requires --config or --resume"),
    };
    if let Some(seed) = args.seed {
        cfg.network.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if args.deterministic {
        cfg.network.deterministic = true;
    }
    if let Some(dir) = args.dataset_dir {
        cfg.dataset.dir = dir;
    }
    cfg.validate()?;

    let mut opts = TrainOptions::new(&args.out);
    opts.resume = args.resume;
    opts.trace_layer = args.trace_layer;
    if !args.quiet {
        opts.on_epoch = Some(Box::new(progress));
    }
    let summary = train(&cfg, &opts)?;
    println!(
        "epochs {}  test top1 {}  top5 {}  best {} (epoch {})",
        summary.epochs_completed,
        pct(Some(summary.final_test.top1)),
        pct(summary.final_test.top5),
        pct(summary.best_test_top1),
        summary.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> corinfomax::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let mut dataset = ck.config.dataset.clone();
    if let Some(dir) = args.dataset_dir {
        dataset.dir = dir;
    }
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let data = load_dataset(&dataset, split)?;
    let (acc, mse) = evaluate(&ck.state, &ck.config.network, &data, dataset.eval_batch_size)?;
    if args.json {
        let e = Evaluation::from((acc, mse));
        println!(
            "{}",
            serde_json::to_string(&e).map_err(|e| Error::Io(std::io::Error::other(e)))?
        );
        return Ok(());
    }
    println!(
        "samples {}  top1 {}  top5 {}  mse {:.6}",
        acc.samples,
        pct(Some(acc.top1)),
        pct(acc.top5),
        mse
    );
    Ok(())
}

fn cmd_angles(path: PathBuf) -> corinfomax::Result<()> {
    let ck = load_checkpoint(&path)?;
    for (k, a) in segment_angles(&ck.state)?.iter().enumerate() {
        println!("segment {}  {a:.3}", k + 1);
    }
    Ok(())
}

fn cmd_inspect(path: PathBuf) -> corinfomax::Result<()> {
    let ck = load_checkpoint(&path)?;
    let m = &ck.meta;
    println!("epoch          {}", m.epoch);
    println!("mu_ff          {:?}", m.schedule.mu_ff);
    println!("mu_fb          {:?}", m.schedule.mu_fb);
    println!("best top1      {}", pct(m.best_test_top1));
    println!(
        "best epoch     {}",
        m.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string())
    );
    for (k, w) in ck.state.w_ff.iter().enumerate() {
        println!("W_ff[{k}]        {} x {}", w.nrows(), w.ncols());
    }
    for (k, w) in ck.state.w_fb.iter().enumerate() {
        println!("W_fb[{}]        {} x {}", k + 1, w.nrows(), w.ncols());
    }
    println!();
    print!("{}", ck.config.to_toml_string());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Angles { checkpoint } => cmd_angles(checkpoint),
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
