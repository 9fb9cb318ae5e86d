//! Experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use oma_core::bcpf::BcpfHyperparams;
use oma_core::covariance::CovarianceTensorSpec;
use oma_core::simulator::{benchmark_nonuniform, benchmark_uniform, ChainSystem, NonuniformProfile, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Which benchmark chain to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSpec {
    #[default]
    Uniform,
    Nonuniform {
        #[serde(default)]
        profile: NonuniformProfile,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<ChainSystem> {
        Ok(match self {
            SystemSpec::Uniform => benchmark_uniform(),
            SystemSpec::Nonuniform { profile } => benchmark_nonuniform(profile)?,
        })
    }
}

/// Everything needed to reproduce an experiment. Missing JSON fields take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub sensor_counts: Vec<usize>,
    /// Monte-Carlo runs per sensor count.
    pub repetitions: usize,
    pub sim: SimConfig,
    pub cov: CovarianceTensorSpec,
    pub bcpf: BcpfHyperparams,
    /// Times a fit is resumed after dropping columns that gave no mode or split
    /// off a stronger one.
    pub refine_rounds: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemSpec::Uniform,
            sensor_counts: (5..=10).collect(),
            repetitions: 20,
            sim: SimConfig::default(),
            cov: CovarianceTensorSpec::default(),
            bcpf: BcpfHyperparams::default(),
            refine_rounds: 3,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.repetitions == 0 {
            return Err(CliError::Usage("repetitions must be at least 1".into()));
        }
        let dofs = self.system.build()?.dofs();
        if self.sensor_counts.is_empty() {
            return Err(CliError::Usage("sensor_counts is empty".into()));
        }
        if let Some(&bad) = self.sensor_counts.iter().find(|&&m| m < 2 || m > dofs) {
            return Err(CliError::Usage(format!("sensor count {bad} outside 2..={dofs}")));
        }
        self.sim.validate()?;
        self.bcpf.validate()?;
        self.cov.validate(self.sim.n_samples())?;
        Ok(())
    }
}
