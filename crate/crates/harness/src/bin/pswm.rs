//! `pswm`: dataset generation, training, evaluation, imagination dumps,
//! planning and benchmarks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pswm_core::WorldModel;
use pswm_envs::{build_dataset, DatasetSpec, EnvKind, Split};
use pswm_harness::bench::{self, BenchSpec};
use pswm_harness::config::RunConfig;
use pswm_harness::data::EpisodeSet;
use pswm_harness::eval::{evaluate, write_report};
use pswm_harness::model::AnyModel;
use pswm_harness::mpc::{self, ModelImaginer, Oracle};
use pswm_harness::train::{best_checkpoint, train};
use pswm_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "pswm", version, about = "World models with parallelizable state space backbones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    GenData(GenData),
    /// Train a world model into a run directory.
    Train(Train),
    /// Evaluate a trained run on a dataset split.
    Eval(Eval),
    /// Write imagination grids (truth / imagination / error) as PNG.
    Imagine(Imagine),
    /// Skill-level planning on Multi Doors Keys.
    Mpc(Mpc),
    /// Training and imagination throughput.
    Bench(Bench),
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Distracting,
    Doors,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum)]
    env: Env,
    /// Corridor width (distracting) or number of keys (doors).
    #[arg(long, visible_alias = "width", visible_alias = "n-keys")]
    param: usize,
    #[arg(long, default_value_t = 32)]
    frame_size: usize,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    val: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    compress: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the laptop-sized preset.
    #[arg(long)]
    desk: bool,
    /// Override one key, e.g. `--set lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset file; overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop this invocation after N steps; continue later with --resume.
    #[arg(long)]
    session_steps: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint file; defaults to the run's best checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate only the first N episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Also write PNG grids of the first N episodes.
    #[arg(long, default_value_t = 0)]
    dump: usize,
    /// Output directory for eval.json and gen_mse.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Imagine {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 4)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Mpc {
    /// Run directory of a world model trained on Multi Doors Keys.
    #[arg(long, required_unless_present = "oracle")]
    run: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Plan with the environment itself instead of a learned model.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 3)]
    n_keys: usize,
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    /// First task seed.
    #[arg(long, default_value_t = 1_000_000)]
    seed: u64,
    /// Frame size for the oracle; a model run uses its own.
    #[arg(long, default_value_t = 32)]
    frame_size: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Bench {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 512)]
    train_len: usize,
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 100)]
    context: usize,
    #[arg(long, default_value_t = 100)]
    generate: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut text = match &args.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    for s in &args.sets {
        if !s.contains('=') {
            return Err(HarnessError::Usage(format!("--set expects key=value, got {s:?}")));
        }
        text.push('\n');
        text.push_str(s);
    }
    let mut cfg = RunConfig::from_text(&text, args.desk)?;
    let explicit_seed = text.lines().filter_map(|l| l.split('#').next()?.split_once('=')).any(|(k, _)| k.trim() == "seed");
    if !explicit_seed {
        if let Some(seed) = RunConfig::seed_from_env() {
            cfg.seed = seed;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_run(args: &RunArgs) -> Result<(RunConfig, AnyModel, pswm_core::ParamStore<f32>)> {
    let text = std::fs::read_to_string(args.run.join("config.txt"))
        .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", args.run.join("config.txt").display())))?;
    let cfg = RunConfig::from_text(&text, false)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| best_checkpoint(&args.run));
    let (model, store) = AnyModel::load(&cfg, &ckpt)?;
    Ok((cfg, model, store))
}

fn data_path(given: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    given
        .cloned()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| HarnessError::Usage("no dataset: pass --data or set data in the config".into()))
}

fn split(name: &str) -> Result<Split> {
    name.parse::<Split>().map_err(|e| HarnessError::Usage(e.to_string()))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(e.to_string()))?;
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let kind = match a.env {
                Env::Distracting => EnvKind::DistractingMemory { width: a.param },
                Env::Doors => EnvKind::MultiDoorsKeys { n_keys: a.param },
            };
            let seed = a.seed.or_else(RunConfig::seed_from_env).unwrap_or(0);
            let spec = DatasetSpec {
                kind,
                frame_size: a.frame_size,
                train: a.train,
                val: a.val,
                test: a.test,
                seed,
                compress: a.compress,
            };
            build_dataset(&spec, &a.out)?;
            eprintln!("wrote {} episodes to {}", spec.total(), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = resolve_config(&a.config)?;
            if let Some(d) = &a.data {
                cfg.data = Some(d.clone());
            }
            let path = data_path(None, &cfg)?;
            let train_set = EpisodeSet::load(&path, Split::Train)?;
            let val_set = EpisodeSet::load(&path, Split::Val)?;
            let outcome = train(&cfg, &train_set, &val_set, &a.out, a.resume, a.session_steps, |line| eprintln!("{line}"))?;
            eprintln!(
                "done: {} steps, best validation loss {:.3} at step {}, {:.0}s{}",
                outcome.steps,
                outcome.best_val,
                outcome.best_step,
                outcome.wallclock,
                if outcome.stopped_early { " (time budget reached)" } else { "" }
            );
        }
        Command::Eval(a) => {
            let (cfg, model, store) = load_run(&a.run)?;
            let mut set = EpisodeSet::load(&data_path(a.data.as_ref(), &cfg)?, split(&a.split)?)?;
            if let Some(n) = a.episodes {
                set = set.subset(n);
            }
            let dumps = a.out.join("images");
            let report = evaluate(&model, &store, &set, a.batch, &cfg.eval_horizons, (a.dump > 0).then_some(dumps.as_path()), a.dump)?;
            write_report(&a.out, &report)?;
            write_json(None, &report)?;
        }
        Command::Imagine(a) => {
            let (cfg, model, store) = load_run(&a.run)?;
            let set = EpisodeSet::load(&data_path(a.data.as_ref(), &cfg)?, split(&a.split)?)?.subset(a.episodes);
            let report = evaluate(&model, &store, &set, a.episodes.max(1), &cfg.eval_horizons, Some(&a.out), a.episodes)?;
            write_report(&a.out, &report)?;
            eprintln!("wrote {} grids to {}", set.len(), a.out.display());
        }
        Command::Mpc(a) => {
            let report = if a.oracle {
                mpc::run_tasks(&mut Oracle { frame_size: a.frame_size }, a.n_keys, a.seed, a.tasks, a.frame_size)?
            } else {
                let run = a.run.clone().expect("required unless oracle");
                let (_, model, store) = load_run(&RunArgs { run, checkpoint: a.checkpoint.clone() })?;
                let size = model.config().frame_height;
                let mut im = ModelImaginer { model: &model, store: &store, frame_size: size };
                mpc::run_tasks(&mut im, a.n_keys, a.seed, a.tasks, size)?
            };
            write_json(a.out.as_deref(), &report)?;
        }
        Command::Bench(a) => {
            let cfg = resolve_config(&a.config)?;
            let spec = BenchSpec {
                batch: cfg.train.batch_size,
                train_len: a.train_len,
                train_batches: a.batches,
                context: a.context,
                generate: a.generate,
            };
            let report = bench::run(&cfg, spec)?;
            write_json(a.out.as_deref(), &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
