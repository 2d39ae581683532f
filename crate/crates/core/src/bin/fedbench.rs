use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fedbe::config::ExperimentConfig;
use fedbe::experiment::{
    monitor_bayesian_ensemble, run_experiment, run_one_round_study, ExperimentOutput, OneRoundOptions,
    METRICS_HEADER,
};
use fedbe::posterior::ModelSetSpec;

#[derive(Parser)]
#[command(name = "fedbench", about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-round simulation.
    Run(Common),
    /// Train clients once and compare averaging, ensembles, and distillation.
    OneRound {
        #[command(flatten)]
        common: Common,
        /// Local epochs for the single round.
        #[arg(long, default_value_t = 200)]
        epochs: usize,
    },
    /// Run FedAvg while scoring a Bayesian ensemble each round.
    Monitor {
        #[command(flatten)]
        common: Common,
        /// Posterior samples per round (overrides the config's monitor section).
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn print_records(out: &ExperimentOutput) {
    println!("{METRICS_HEADER}");
    for r in &out.records {
        println!("{}", r.csv_line());
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(common) => {
            let cfg = common.load()?;
            print_records(&run_experiment(&cfg)?);
        }
        Command::OneRound { common, epochs } => {
            let cfg = common.load()?;
            let opts = OneRoundOptions::from_config(&cfg, epochs);
            let report = run_one_round_study(&cfg, &opts)?;
            print!("{}", report.to_csv());
        }
        Command::Monitor { common, samples } => {
            let cfg = common.load()?;
            let mut spec = cfg.monitor.unwrap_or(ModelSetSpec {
                samples: 10,
                include_avg: false,
                include_clients: false,
                ..Default::default()
            });
            if let Some(m) = samples {
                spec.samples = m;
            }
            print_records(&monitor_bayesian_ensemble(&cfg, spec)?);
        }
    }
    Ok(())
}
