use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use kecae::datakit::{generate_pool, make_pairs, read_pairs, sample_pairs, write_pairs, Dataset, ImageSet};
use kecae::diffcore::primitive_suite;
use kecae::evalkit::{
    augmentation_eval, best_cell, decade_grid, exchange_semantics, grid_search, held_out_pairs, latent_probe,
    sample_size_study, write_augment, write_grid, write_sizes, AugmentConfigEval, ClassifierKind, InputSet, PROBE_PER_CLASS,
};
use kecae::runconfig::{RunConfig, KEYS};
use kecae::trainer::{generate, load_checkpoint, write_generated, TrainConfig, Trainer};
use kecae::Error;

const GRADCHECK_TOL: f64 = 1e-4;

fn default_of(key: &str) -> &'static str {
    KEYS.iter().find(|k| k.0 == key).map(|k| k.1).unwrap_or("")
}

#[derive(Parser)]
#[command(name = "kecae", version, about = "Key-exchange convolutional auto-encoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic KL-0 / KL-2 image pool
    GenData(Common),
    /// Split a pool into oversampled train / val / test sets
    Split(SplitArgs),
    /// Sample training pairs from the train split
    Pairs(Common),
    /// Train the auto-encoder and discriminator
    Train(Common),
    /// Write reconstructions and key-exchanged images from a checkpoint
    Generate(CheckpointArgs),
    /// Probe latent separability and exchange semantics of a checkpoint
    Probe(CheckpointArgs),
    /// Search the lambda1 x lambda2 decade grid
    Grid(Common),
    /// Sweep the number of training pairs
    Sizes(Common),
    /// Compare classifiers trained with and without generated images
    Augeval(CheckpointArgs),
    /// Finite-difference check of every differentiable primitive
    Gradcheck(Common),
    /// List every config key with its default
    Keys,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, value_name = "U64", default_value = default_of("seed"))]
    seed: u64,
    /// Network size: paper, desk or tiny
    #[arg(long, value_name = "NAME", default_value = default_of("preset"))]
    preset: String,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "runs/out")]
    out: PathBuf,
    /// Number of pairs (pairs, train, generate, probe)
    #[arg(long, value_name = "N", default_value = default_of("pair_n"))]
    n: usize,
    /// Training epochs
    #[arg(long, value_name = "N", default_value = default_of("epochs"))]
    epochs: usize,
    /// Weight of the exchanged-output cross-entropy
    #[arg(long, value_name = "F64", default_value = default_of("lambda1"))]
    lambda1: f64,
    /// Weight of the latent separation loss
    #[arg(long, value_name = "F64", default_value = default_of("lambda2"))]
    lambda2: f64,
    /// Override any config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SplitArgs {
    /// Pool directory written by gen-data
    #[arg(long, value_name = "DIR", default_value = "pool")]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Checkpoint directory written by train
    #[arg(long, value_name = "DIR", default_value = "runs/train/checkpoint")]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
}

struct Ctx {
    run: RunConfig,
    out: PathBuf,
    n: usize,
}

impl Ctx {
    fn write_config(&self) -> kecae::Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| io(&self.out, e))?;
        let path = self.out.join("config.txt");
        fs::write(&path, self.run.to_text()).map_err(|e| io(&path, e))
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Defaults, then the config file, then explicit flags.
fn context(c: &Common, m: &ArgMatches) -> kecae::Result<Ctx> {
    let mut run = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if from_cli(m, "seed") {
        run.seed = c.seed;
    }
    if from_cli(m, "preset") {
        run.set("preset", &c.preset)?;
    }
    if from_cli(m, "epochs") {
        run.epochs = c.epochs;
    }
    if from_cli(m, "lambda1") {
        run.lambda1 = c.lambda1;
    }
    if from_cli(m, "lambda2") {
        run.lambda2 = c.lambda2;
    }
    if from_cli(m, "n") {
        run.pair_n = c.n;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        run.set(k.trim(), v)?;
    }
    run.validate()?;
    Ok(Ctx { n: run.pair_n, run, out: c.out.clone() })
}

fn load_split(run: &RunConfig) -> kecae::Result<Dataset> {
    Dataset::load(&run.data_dir)
}

fn train_pairs(run: &RunConfig, set: &ImageSet, n: usize) -> kecae::Result<Vec<kecae::datakit::SamplePair>> {
    sample_pairs(&make_pairs(set.kl0.len(), set.kl2.len()), n, run.seed)
}

fn seeds(run: &RunConfig) -> Vec<u64> {
    (0..run.eval_seeds as u64).map(|i| run.seed + i).collect()
}

fn cmd_gen_data(ctx: &Ctx) -> kecae::Result<()> {
    let side = ctx.run.arch().input_side;
    let pool = generate_pool([ctx.run.kl0_count, ctx.run.kl2_count], side, ctx.run.seed)?;
    pool.save(&ctx.out)?;
    ctx.write_config()?;
    println!("wrote {} KL-0 and {} KL-2 images ({side}x{side}) to {}", pool.kl0.len(), pool.kl2.len(), ctx.out.display());
    Ok(())
}

fn cmd_split(ctx: &Ctx, input: &Path) -> kecae::Result<()> {
    let pool = ImageSet::load(input)?;
    let ds = Dataset::from_pool(&pool, ctx.run.seed)?;
    ds.save(&ctx.out)?;
    ctx.write_config()?;
    for (name, s) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        println!("{name}: {} KL-0, {} KL-2", s.kl0.len(), s.kl2.len());
    }
    Ok(())
}

fn cmd_pairs(ctx: &Ctx) -> kecae::Result<()> {
    let ds = load_split(&ctx.run)?;
    let pairs = train_pairs(&ctx.run, &ds.train, ctx.n)?;
    ctx.write_config()?;
    let path = ctx.out.join("pairs.csv");
    write_pairs(&path, &ds.train, &pairs)?;
    println!("{} of {} pairs -> {}", pairs.len(), make_pairs(ds.train.kl0.len(), ds.train.kl2.len()).len(), path.display());
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> kecae::Result<()> {
    let ds = load_split(&ctx.run)?;
    let pairs = train_pairs(&ctx.run, &ds.train, ctx.n)?;
    ctx.write_config()?;
    write_pairs(&ctx.out.join("pairs.csv"), &ds.train, &pairs)?;
    let mut t = Trainer::new(TrainConfig::from_run(&ctx.run)?)?;
    t.train(&ds.train, &pairs, Some(&ctx.out))?;
    if let Some(last) = t.history.last() {
        println!(
            "epochs {} | j_mse {:.5} (step 0: {:.5}) j_ce1 {:.4} j_ce2 {:.4} j_lda {:.4}",
            t.history.len(),
            last.j_mse,
            t.initial_mse.unwrap_or(f64::NAN),
            last.j_ce1,
            last.j_ce2,
            last.j_lda
        );
    }
    Ok(())
}

/// Reuses the run's `pairs.csv` next to the checkpoint unless `--n` asks for
/// a fresh sample.
fn cmd_generate(ctx: &Ctx, checkpoint: &Path, m: &ArgMatches) -> kecae::Result<()> {
    let mut t = load_checkpoint(checkpoint)?;
    let ds = load_split(&ctx.run)?;
    let pairs = match checkpoint.parent().map(|p| p.join("pairs.csv")) {
        Some(p) if p.exists() && !from_cli(m, "n") => read_pairs(&p, &ds.train)?,
        _ => train_pairs(&ctx.run, &ds.train, ctx.n)?,
    };
    let items = generate(&mut t.model, &ds.train, &pairs)?;
    ctx.write_config()?;
    write_generated(&ctx.out, ds.train.side, &items)?;
    println!("wrote {} images to {}", items.len(), ctx.out.display());
    Ok(())
}

fn cmd_probe(ctx: &Ctx, checkpoint: &Path) -> kecae::Result<()> {
    let mut t = load_checkpoint(checkpoint)?;
    let ds = load_split(&ctx.run)?;
    let probe = latent_probe(&mut t.model, &ds.train, &ds.test, Some(PROBE_PER_CLASS), ctx.run.probe_c)?;
    let n = (ds.test.kl0.len() * ds.test.kl2.len()).min(ctx.n);
    let pairs = held_out_pairs(&ds.test, n);
    let ex = exchange_semantics(&mut t.model, &ds.test, &pairs)?;
    ctx.write_config()?;
    let text = format!(
        "acc_hK,acc_hU,pairs,exchange_closer,exchange_fraction\n{},{},{},{},{}\n",
        probe.acc_hk, probe.acc_hu, ex.pairs, ex.closer, ex.fraction
    );
    let path = ctx.out.join("probe.csv");
    fs::write(&path, &text).map_err(|e| io(&path, e))?;
    print!("{text}");
    Ok(())
}

fn cmd_grid(ctx: &Ctx, m: &ArgMatches) -> kecae::Result<()> {
    let ds = load_split(&ctx.run)?;
    let epochs = if from_cli(m, "epochs") { ctx.run.epochs } else { ctx.run.grid_epochs };
    let grid = decade_grid();
    ctx.write_config()?;
    let rows = grid_search(&ds, &ctx.run, &grid, &grid, epochs)?;
    write_grid(&ctx.out.join("grid.csv"), &rows)?;
    if let Some(b) = best_cell(&rows) {
        println!("best lambda1 {} lambda2 {}: acc_hK {:.4} acc_hU {:.4}", b.lambda1, b.lambda2, b.acc_hk, b.acc_hu);
    }
    Ok(())
}

fn cmd_sizes(ctx: &Ctx) -> kecae::Result<()> {
    let ds = load_split(&ctx.run)?;
    ctx.write_config()?;
    let rows = sample_size_study(&ds, &ctx.run, &ctx.run.sizes, &seeds(&ctx.run))?;
    write_sizes(&ctx.out.join("sizes.csv"), &rows)?;
    for r in &rows {
        println!("N {}: final_loss {:.5} acc {:.4}", r.n, r.final_loss, r.acc);
    }
    Ok(())
}

fn cmd_augeval(ctx: &Ctx, checkpoint: &Path) -> kecae::Result<()> {
    let mut t = load_checkpoint(checkpoint)?;
    let ds = load_split(&ctx.run)?;
    let cfg = AugmentConfigEval {
        classifiers: ClassifierKind::ALL.to_vec(),
        input_sets: InputSet::ALL.to_vec(),
        seeds: seeds(&ctx.run),
        epochs: ctx.run.classifier_epochs,
        synth_pairs: ctx.n,
        arch: t.config.arch.clone(),
    };
    ctx.write_config()?;
    let rows = augmentation_eval(&mut t.model, &ds, &cfg)?;
    write_augment(&ctx.out, &rows)?;
    let summary = fs::read_to_string(ctx.out.join("augment_summary.csv")).map_err(|e| io(&ctx.out, e))?;
    print!("{summary}");
    Ok(())
}

fn cmd_gradcheck(ctx: &Ctx) -> kecae::Result<()> {
    let results = primitive_suite(ctx.run.seed)?;
    let mut worst: f64 = 0.0;
    for (name, err) in &results {
        println!("{name:<28} {err:.3e}");
        worst = worst.max(*err);
    }
    println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:e})");
    if worst < GRADCHECK_TOL {
        Ok(())
    } else {
        Err(Error::Divergence(format!("gradient check failed: {worst:.3e}")))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn threads() -> Result<usize, String> {
    match std::env::var("KECAE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("KECAE_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> kecae::Result<()> {
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Command::GenData(c) => cmd_gen_data(&context(&c, sub)?),
        Command::Split(a) => cmd_split(&context(&a.common, sub)?, &a.input),
        Command::Pairs(c) => cmd_pairs(&context(&c, sub)?),
        Command::Train(c) => cmd_train(&context(&c, sub)?),
        Command::Generate(a) => cmd_generate(&context(&a.common, sub)?, &a.checkpoint, sub),
        Command::Probe(a) => cmd_probe(&context(&a.common, sub)?, &a.checkpoint),
        Command::Grid(c) => cmd_grid(&context(&c, sub)?, sub),
        Command::Sizes(c) => cmd_sizes(&context(&c, sub)?),
        Command::Augeval(a) => cmd_augeval(&context(&a.common, sub)?, &a.checkpoint),
        Command::Gradcheck(c) => cmd_gradcheck(&context(&c, sub)?),
        Command::Keys => {
            for (k, d, doc) in KEYS {
                println!("{k:<18} {d:<22} {doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match threads() {
        Ok(n) => log::debug!("worker cap {n}; compute runs on the calling thread"),
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
