use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use embex::{
    make_hard_instance, make_synthetic_linear, make_synthetic_nonlinear, read_records, run_experiment,
    summarize, write_arms_csv, write_records, ConfigError, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "embex", version, about = "Best-arm identification with adaptive embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials described by a config file and write one CSV row per trial.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print success rate and pull statistics of a trial CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write a generated arm set with its true means as CSV.
    GenDataset {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Target accuracy, used by the hard instance.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SyntheticLinear,
    SyntheticNonlinear,
    HardInstance,
}

fn run(config: &PathBuf, out: Option<&PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    log::info!("running {} trials of {:?}", cfg.trials, cfg.algorithm);
    let records = run_experiment(&cfg)?;
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_records(BufWriter::new(file), &records)?;
        }
        None => write_records(io::stdout().lock(), &records)?,
    }
    Ok(())
}

fn summarize_file(input: &PathBuf) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let s = summarize(&read_records(file)?);
    let mut w = io::stdout().lock();
    writeln!(w, "trials       {}", s.trials)?;
    writeln!(w, "successes    {}", s.successes)?;
    writeln!(w, "failures     {}", s.failures)?;
    writeln!(w, "success rate {:.4}", s.success_rate)?;
    match s.pulls {
        Some(p) => {
            writeln!(w, "mean pulls   {:.1}", p.mean)?;
            writeln!(w, "median pulls {:.1}", p.median)?;
            writeln!(w, "pulls IQR    {:.1} .. {:.1}", p.q1, p.q3)?;
        }
        None => writeln!(w, "no successful trials")?,
    }
    Ok(())
}

fn gen_dataset(kind: Kind, k: usize, d: usize, seed: u64, eps: f64, out: &PathBuf) -> Result<()> {
    let (arms, rewards) = match kind {
        Kind::SyntheticLinear => make_synthetic_linear(k, d, seed)?,
        Kind::SyntheticNonlinear => make_synthetic_nonlinear(k, d, seed)?,
        Kind::HardInstance => {
            let inst = make_hard_instance(d, eps)?;
            (inst.arms, inst.rewards)
        }
    };
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_arms_csv(BufWriter::new(file), &arms, Some(&rewards))?;
    Ok(())
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.downcast_ref::<ConfigError>().is_some()
        || matches!(err.downcast_ref::<HarnessError>(), Some(HarnessError::Config(_)))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => run(config, out.as_ref()),
        Command::Summarize { input } => summarize_file(input),
        Command::GenDataset { kind, k, d, seed, eps, out } => gen_dataset(*kind, *k, *d, *seed, *eps, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
