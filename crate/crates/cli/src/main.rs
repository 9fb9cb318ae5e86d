use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oma_cli::{cmd_capacity, cmd_experiment, cmd_identify, cmd_simulate, CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "oma", version, about = "Output-only modal analysis of under-determined systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the benchmark chain and write signals plus analytical modes.
    Simulate(Common),
    /// Identify modes from a signal CSV (header `t,ch1,...,chM`).
    Identify {
        signal: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo identification over sensor counts.
    Experiment(Common),
    /// Print the identifiable-mode capacity for 2 to 12 sensors.
    Capacity {
        /// Also write the table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            for p in cmd_simulate(&c.load()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Identify { signal, common } => {
            let est = cmd_identify(&signal, &common.load()?)?;
            println!("{:>4} {:>10} {:>9}", "mode", "freq_hz", "zeta");
            for (i, m) in est.modes.iter().enumerate() {
                println!("{:>4} {:>10.4} {:>9.5}", i + 1, m.freq_hz, m.damping_ratio);
            }
        }
        Command::Experiment(c) => {
            let cfg = c.load()?;
            let summary = cmd_experiment(&cfg)?;
            println!("{:>7} {:>5} {:>10} {:>8}", "sensors", "ok", "rank_mean", "2sigma");
            for g in &summary.groups {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:>7} {:>5} {:>10} {:>8}",
                    g.sensor_count,
                    g.ok_runs,
                    f(g.rank_mean),
                    f(g.rank_two_sigma)
                );
            }
            println!("results in {}", cfg.output_dir.display());
        }
        Command::Capacity { out } => {
            cmd_capacity(io::stdout().lock())?;
            if let Some(path) = out {
                let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
                cmd_capacity(BufWriter::new(file))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
