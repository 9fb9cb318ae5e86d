//! Entry points behind the subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use oma_core::covariance::SignalBlock;
use oma_core::modal::{capacity, ModalEstimate};
use oma_core::simulator::{analytic_modes, simulate, GroundTruthModes, SimConfig};
use serde::Serialize;

use crate::config::{ExperimentConfig, SystemSpec, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::experiment::{run_experiment, write_json, ExperimentSummary};
use crate::pipeline::identify;

pub const SIGNALS_CSV: &str = "signals.csv";
pub const GROUND_TRUTH_JSON: &str = "ground_truth.json";
pub const MODES_JSON: &str = "modes.json";
pub const FIT_TRACE_JSON: &str = "fit_trace.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Serialize)]
pub struct GroundTruthReport<'a> {
    pub schema_version: u32,
    pub system: &'a SystemSpec,
    #[serde(flatten)]
    pub modes: &'a GroundTruthModes,
}

/// Simulate the configured chain with `master_seed` as the simulation seed
/// and write every DOF to `signals.csv` plus `ground_truth.json`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.sim.validate()?;
    let sys = cfg.system.build()?;
    let sim = SimConfig {
        seed: cfg.master_seed,
        ..cfg.sim.clone()
    };
    let x = simulate(&sys, &sim)?;
    let truth = analytic_modes(&sys)?;
    create_dir(&cfg.output_dir)?;

    let csv_path = cfg.output_dir.join(SIGNALS_CSV);
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    x.write_csv(BufWriter::new(file)).map_err(|e| match e {
        oma_core::OmaError::Io { source, .. } => CliError::io(&csv_path, source),
        other => other.into(),
    })?;
    let json_path = cfg.output_dir.join(GROUND_TRUTH_JSON);
    write_json(
        &json_path,
        &GroundTruthReport {
            schema_version: SCHEMA_VERSION,
            system: &cfg.system,
            modes: &truth,
        },
    )?;
    Ok(vec![csv_path, json_path])
}

#[derive(Debug, Serialize)]
pub struct ModesReport<'a> {
    pub schema_version: u32,
    pub estimated_rank: usize,
    #[serde(flatten)]
    pub estimate: &'a ModalEstimate,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub elbo: Vec<f64>,
    pub rank: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub refinements: usize,
    pub data_scale: f64,
    pub beta_init: f64,
    pub expected_lambda: Vec<f64>,
    pub expected_beta: f64,
    pub wall_ms: f64,
}

/// Identify modes from a signal CSV using the config's covariance and
/// factorization settings; `master_seed` seeds the factorization. Writes
/// `modes.json` and `fit_trace.json`.
pub fn cmd_identify(signal: &Path, cfg: &ExperimentConfig) -> Result<ModalEstimate> {
    cfg.bcpf.validate()?;
    let file = File::open(signal).map_err(|e| CliError::io(signal, e))?;
    let x = SignalBlock::read_csv(BufReader::new(file)).map_err(|e| match e {
        oma_core::OmaError::Data(msg) => oma_core::OmaError::Data(format!("{}: {msg}", signal.display())),
        other => other,
    })?;
    let start = Instant::now();
    let id = identify(&x, &cfg.cov, &cfg.bcpf, cfg.refine_rounds, cfg.master_seed)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    create_dir(&cfg.output_dir)?;
    write_json(
        &cfg.output_dir.join(MODES_JSON),
        &ModesReport {
            schema_version: SCHEMA_VERSION,
            estimated_rank: id.estimated_rank(),
            estimate: &id.estimate,
        },
    )?;
    write_json(
        &cfg.output_dir.join(FIT_TRACE_JSON),
        &FitReport {
            schema_version: SCHEMA_VERSION,
            elbo: id.trace.elbo.clone(),
            rank: id.trace.rank.clone(),
            converged: id.trace.converged,
            iterations: id.trace.iterations,
            refinements: id.refinements,
            data_scale: id.trace.data_scale,
            beta_init: id.trace.beta_init,
            expected_lambda: id.posterior.expected_lambda().iter().copied().collect(),
            expected_beta: id.posterior.expected_beta(),
            wall_ms,
        },
    )?;
    Ok(id.estimate)
}

pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment(cfg)
}

/// Sensor counts 2..=12 with the number of identifiable modes, written as
/// CSV.
pub fn cmd_capacity<W: Write>(mut out: W) -> Result<Vec<(usize, usize)>> {
    let rows = (2..=12).map(|m| Ok((m, capacity(m)?))).collect::<Result<Vec<_>>>()?;
    let io = |e| CliError::io(Path::new("<output>"), e);
    writeln!(out, "sensors,capacity").map_err(io)?;
    for (m, n) in &rows {
        writeln!(out, "{m},{n}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(rows)
}
