//! Signal to modal estimate.

use oma_core::bcpf::{self, BcpfHyperparams, CpPosterior, FitTrace};
use oma_core::covariance::{build_covariance_tensor, CovarianceTensorSpec, SignalBlock};
use oma_core::modal::{split_columns, extract_modes, ModalEstimate};
use oma_core::OmaError;

use crate::error::{CliError, Result};

pub struct Identification {
    pub estimate: ModalEstimate,
    pub posterior: CpPosterior,
    /// Traces of the initial fit and every refinement, concatenated.
    pub trace: FitTrace,
    /// Refinement rounds actually run.
    pub refinements: usize,
}

impl Identification {
    pub fn estimated_rank(&self) -> usize {
        self.posterior.rank()
    }
}

fn stage(name: &'static str) -> impl Fn(OmaError) -> CliError {
    move |source| CliError::Stage { stage: name, source }
}

/// Time between consecutive tensor slices; the lags must be evenly spaced.
pub fn lag_spacing(spec: &CovarianceTensorSpec, dt: f64) -> Result<f64> {
    let step = match spec.lags.as_slice() {
        [a, b, ..] => b - a,
        _ => return Err(CliError::Usage("need at least 2 lags".into())),
    };
    if step == 0 || spec.lags.windows(2).any(|w| w[1] != w[0] + step) {
        return Err(CliError::Usage("lags must be evenly spaced and increasing".into()));
    }
    Ok(step as f64 * dt)
}

/// Covariance tensor, factorization, extraction. While some columns give no
/// mode or split off a stronger mode, they are dropped and the fit resumed, at
/// most `refine_rounds` times.
pub fn identify(
    x: &SignalBlock,
    cov: &CovarianceTensorSpec,
    h: &BcpfHyperparams,
    refine_rounds: usize,
    seed: u64,
) -> Result<Identification> {
    let dt_lag = lag_spacing(cov, x.dt())?;
    let t = build_covariance_tensor(x, cov).map_err(stage("covariance"))?;
    let (mut posterior, mut trace) = bcpf::fit(&t, h, seed).map_err(stage("factorization"))?;
    let mut estimate = extract_modes(&posterior, dt_lag, x.channel_ids()).map_err(stage("extraction"))?;

    let mut refinements = 0;
    while refinements < refine_rounds {
        let split = split_columns(&estimate, &posterior).map_err(stage("extraction"))?;
        if estimate.rejected.is_empty() && split.is_empty() {
            break;
        }
        let mut keep: Vec<usize> = estimate
            .modes
            .iter()
            .filter_map(|m| m.column)
            .filter(|c| !split.contains(c))
            .collect();
        keep.sort_unstable();
        log::debug!("refinement {}: keeping {} of {} columns", refinements + 1, keep.len(), posterior.rank());
        let (p, tr) = bcpf::refit(&t, &posterior, &keep, h).map_err(stage("refinement"))?;
        trace.elbo.extend(tr.elbo);
        trace.rank.extend(tr.rank);
        trace.iterations += tr.iterations;
        trace.converged = tr.converged;
        posterior = p;
        estimate = extract_modes(&posterior, dt_lag, x.channel_ids()).map_err(stage("extraction"))?;
        refinements += 1;
    }
    Ok(Identification {
        estimate,
        posterior,
        trace,
        refinements,
    })
}
