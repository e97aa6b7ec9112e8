//! Command-line front end: data preparation, training, evaluation, K sweeps
//! and synthetic data generation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or I/O problem.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mmrec::experiment::{
    evaluate_checkpoint, load_data, make_synthetic, run_experiment, sweep_k, write_sweep, ExperimentConfig,
    SynthSpec,
};
use mmrec::Error;

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "MMREC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mmrec", version, about = "Multi-modal latent item-graph recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment INI file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set model_train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to `[cli] out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and split the data, writing the splits and cold-user list.
    Prepare(ConfigArgs),
    /// Train, evaluate on the test split and write all artifacts.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint on the configured split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Retrain for each neighbor count and write `sweep_k.csv`.
    SweepK {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated neighbor counts.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
    /// Write a block-structured synthetic dataset and a starter config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        modalities: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut overrides = args.overrides.clone();
    if let Ok(threads) = std::env::var(THREADS_ENV) {
        overrides.push(format!("cli.threads={threads}"));
    }
    let config = ExperimentConfig::from_file(&args.config)?.with_overrides(&overrides)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set [cli] out".into()))?;
    if let Some(n) = config.threads {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok((config, out))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn prepare(args: &ConfigArgs) -> Result<(), Error> {
    let (config, out) = load_config(args)?;
    let data = load_data(&config)?;
    create_dir(&out)?;
    let splits = &data.splits;
    for (name, set) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
        set.write_csv(&out.join(format!("{name}.csv")))?;
        info!("{name}: {} interactions", set.len());
    }
    let mut cold = String::from("user\n");
    for &u in &splits.cold_users {
        writeln!(cold, "{}", splits.train.users().id(u).expect("index in range")).expect("write to string");
    }
    let path = out.join("cold_users.csv");
    std::fs::write(&path, cold).map_err(|source| Error::Io { path, source })?;
    println!(
        "{} users, {} items, {} cold users; splits written to {}",
        splits.n_users(),
        splits.n_items(),
        splits.cold_users.len(),
        out.display()
    );
    Ok(())
}

fn train(args: &ConfigArgs) -> Result<(), Error> {
    let (config, out) = load_config(args)?;
    let outcome = run_experiment(&config, &out)?;
    println!("best epoch {}; artifacts in {}", outcome.model.best_epoch, out.display());
    Ok(())
}

fn evaluate(args: &ConfigArgs, checkpoint: &Path) -> Result<(), Error> {
    let (config, out) = load_config(args)?;
    let report = evaluate_checkpoint(&config, checkpoint)?;
    create_dir(&out)?;
    report.write(&out, "report")?;
    println!("report written to {}", out.display());
    Ok(())
}

fn sweep(args: &ConfigArgs, ks: &[usize]) -> Result<(), Error> {
    let (config, out) = load_config(args)?;
    let data = load_data(&config)?;
    let rows = sweep_k(&config, &data, ks)?;
    let path = write_sweep(&rows, &out)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prepare(args) => prepare(&args),
        Command::Train(args) => train(&args),
        Command::Evaluate { config, checkpoint } => evaluate(&config, &checkpoint),
        Command::SweepK { config, ks } => sweep(&config, &ks),
        Command::Synth {
            out,
            users,
            items,
            blocks,
            modalities,
            noise,
            seed,
        } => {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                n_users: users.unwrap_or(d.n_users),
                n_items: items.unwrap_or(d.n_items),
                n_blocks: blocks.unwrap_or(d.n_blocks),
                n_modalities: modalities.unwrap_or(d.n_modalities),
                noise: noise.unwrap_or(d.noise),
                seed,
                ..d
            };
            let files = make_synthetic(&spec)?.write(&out)?;
            println!("{}", files.config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(u8::try_from(err.exit_code()).unwrap_or(1))
        }
    }
}
