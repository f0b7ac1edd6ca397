use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bharp::comparators::Method;
use bharp::harness::config::OneOrMany;
use bharp::harness::{self, load_raw_config, Mode, RawConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bharp", version, about = "Partition-based subgroup borrowing: fits, replicate studies and adaptive trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one dataset (a CSV of arm,subgroup,y or a draw from the scenario)
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns arm, subgroup, y
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replicated one-shot studies with RMSE/MAE/variance per subgroup
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Replicated adaptive enrichment trials with operating characteristics
    Trial {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the posterior summary from a draws file
    Summarize {
        #[command(flatten)]
        common: Common,
        /// Draws file written by `fit` (default: <out>/draws_bharp.csv)
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario (S1..S9, partner-step-t2d) or scenario TOML path
    #[arg(long)]
    scenario: Option<String>,
    /// Analysis model(s): BHARP, IND, BHM, BLAST; repeat or comma-separate
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn raw_config(&self, mode: Mode) -> anyhow::Result<RawConfig> {
        let mut raw = match &self.config {
            Some(p) => load_raw_config(p)?,
            None => RawConfig::default(),
        };
        raw.mode = Some(mode);
        if let Some(s) = &self.scenario {
            raw.scenario = Some(s.clone());
        }
        if !self.method.is_empty() {
            raw.method = Some(OneOrMany::Many(self.method.clone()));
        }
        if self.replicates.is_some() {
            raw.n_replicates = self.replicates;
        }
        if self.seed.is_some() {
            raw.master_seed = self.seed;
        }
        if self.workers.is_some() {
            raw.workers = self.workers;
        }
        if let Some(out) = &self.out {
            raw.output_dir = Some(std::path::absolute(out).context("resolving --out")?);
        }
        Ok(raw)
    }
}

fn absolute(p: &PathBuf) -> anyhow::Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let raw = match &cli.command {
        Command::Fit { common, data } => {
            let mut raw = common.raw_config(Mode::Fit)?;
            if let Some(d) = data {
                raw.data = Some(absolute(d)?);
            }
            raw
        }
        Command::Simulate { common } => common.raw_config(Mode::Simulate)?,
        Command::Trial { common } => common.raw_config(Mode::Trial)?,
        Command::Summarize { common, input } => {
            let mut raw = common.raw_config(Mode::Summarize)?;
            if let Some(i) = input {
                raw.input = Some(absolute(i)?);
            }
            raw
        }
    };
    let cfg = raw.resolve()?;
    log::info!(
        "{:?}: scenario {}, methods {:?}, {} replicate(s), seed {}",
        cfg.mode,
        cfg.scenario_ref,
        cfg.methods,
        cfg.n_replicates,
        cfg.master_seed
    );
    for f in harness::run(&cfg)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
