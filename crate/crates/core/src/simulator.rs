//! Benchmark data: an N-DOF mass-spring chain with mass-proportional
//! damping under random forcing at every DOF, and its analytical modes.
//!
//! Spring `i` connects mass `i` to mass `i - 1`; spring 0 connects mass 0
//! to the ground. Damping is `C = α M`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::SignalBlock;
use crate::error::{OmaError, Result};
use crate::modal::{canonical_shape, ModalEstimate, Mode};

/// Uniform benchmark mass, kg (100 t).
pub const BENCHMARK_MASS: f64 = 1.0e5;
/// Uniform benchmark stiffness, N/m (176.729 MN/m).
pub const BENCHMARK_STIFFNESS: f64 = 1.76729e8;
/// Mass-proportional damping coefficient of the benchmark, 1/s.
pub const BENCHMARK_ALPHA: f64 = 0.2 * PI;
pub const BENCHMARK_DOFS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSystem {
    /// kg
    pub masses: Vec<f64>,
    /// N/m
    pub stiffnesses: Vec<f64>,
    /// `C = damping_alpha * M`, 1/s.
    pub damping_alpha: f64,
}

impl ChainSystem {
    pub fn new(masses: Vec<f64>, stiffnesses: Vec<f64>, damping_alpha: f64) -> Result<Self> {
        let sys = Self {
            masses,
            stiffnesses,
            damping_alpha,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.is_empty() {
            return Err(OmaError::usage("chain needs at least one DOF"));
        }
        if self.masses.len() != self.stiffnesses.len() {
            return Err(OmaError::usage("one stiffness per mass required"));
        }
        if self.masses.iter().chain(&self.stiffnesses).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(OmaError::usage("masses and stiffnesses must be positive and finite"));
        }
        if !(self.damping_alpha >= 0.0 && self.damping_alpha.is_finite()) {
            return Err(OmaError::usage("damping_alpha must be non-negative"));
        }
        Ok(())
    }

    pub fn dofs(&self) -> usize {
        self.masses.len()
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.masses))
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = self.dofs();
        let k = &self.stiffnesses;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = k[i] + if i + 1 < n { k[i + 1] } else { 0.0 };
            if i + 1 < n {
                out[(i, i + 1)] = -k[i + 1];
                out[(i + 1, i)] = -k[i + 1];
            }
        }
        out
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        self.mass_matrix() * self.damping_alpha
    }
}

/// 10-DOF chain with 100 t masses, 176.729 MN/m springs and `α = 0.2π`.
pub fn benchmark_uniform() -> ChainSystem {
    ChainSystem {
        masses: vec![BENCHMARK_MASS; BENCHMARK_DOFS],
        stiffnesses: vec![BENCHMARK_STIFFNESS; BENCHMARK_DOFS],
        damping_alpha: BENCHMARK_ALPHA,
    }
}

/// Placement of per-DOF constants inside `m ∈ [100, 200] t`,
/// `k ∈ [176.729, 353.458] MN/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NonuniformProfile {
    /// Linear ramp from the range minimum at DOF 1 to the maximum at DOF 10.
    LinearRamp,
    /// Independent uniform draws inside the ranges.
    Random { seed: u64 },
    /// Explicit positions in `[0, 1]` within each range.
    Fractions { mass: Vec<f64>, stiffness: Vec<f64> },
}

impl Default for NonuniformProfile {
    fn default() -> Self {
        NonuniformProfile::LinearRamp
    }
}

pub fn benchmark_nonuniform(profile: &NonuniformProfile) -> Result<ChainSystem> {
    let n = BENCHMARK_DOFS;
    let (mass_frac, stiff_frac): (Vec<f64>, Vec<f64>) = match profile {
        NonuniformProfile::LinearRamp => {
            let ramp: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            (ramp.clone(), ramp)
        }
        NonuniformProfile::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let m = (0..n).map(|_| rng.random::<f64>()).collect();
            let k = (0..n).map(|_| rng.random::<f64>()).collect();
            (m, k)
        }
        NonuniformProfile::Fractions { mass, stiffness } => {
            if mass.len() != n || stiffness.len() != n {
                return Err(OmaError::usage(format!("profile needs {n} mass and {n} stiffness fractions")));
            }
            if mass.iter().chain(stiffness).any(|f| !(0.0..=1.0).contains(f)) {
                return Err(OmaError::usage("profile fractions must lie in [0, 1]"));
            }
            (mass.clone(), stiffness.clone())
        }
    };
    ChainSystem::new(
        mass_frac.iter().map(|f| BENCHMARK_MASS * (1.0 + f)).collect(),
        stiff_frac.iter().map(|f| BENCHMARK_STIFFNESS * (1.0 + f)).collect(),
        BENCHMARK_ALPHA,
    )
}

/// Analytical modes of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModes {
    /// Ascending.
    pub freqs_hz: Vec<f64>,
    pub damping_ratios: Vec<f64>,
    /// Column `i` is the unit-norm, sign-canonical shape of mode `i`.
    pub shapes: Vec<Vec<f64>>,
}

impl GroundTruthModes {
    pub fn shape_matrix(&self) -> DMatrix<f64> {
        let n = self.shapes.len();
        DMatrix::from_fn(self.shapes[0].len(), n, |i, j| self.shapes[j][i])
    }

    /// Reference modes seen by a subset of sensors, as a [`ModalEstimate`]
    /// usable with [`crate::modal::pair_modes`].
    pub fn restricted_to(&self, sensor_ids: &[usize]) -> Result<ModalEstimate> {
        let n = self.freqs_hz.len();
        if let Some(&bad) = sensor_ids.iter().find(|&&id| id >= n) {
            return Err(OmaError::usage(format!("sensor id {bad} out of range for {n} DOFs")));
        }
        let modes = (0..n)
            .map(|m| Mode {
                shape: sensor_ids.iter().map(|&id| self.shapes[m][id]).collect(),
                freq_hz: self.freqs_hz[m],
                damping_ratio: self.damping_ratios[m],
                fit_residual: 0.0,
                valid: true,
                column: None,
            })
            .collect();
        ModalEstimate::new(modes, sensor_ids.to_vec())
    }
}

/// Solve `K φ = ω² M φ`; `ζ_i = α / (2 ω_i)`.
pub fn analytic_modes(sys: &ChainSystem) -> Result<GroundTruthModes> {
    sys.validate()?;
    let n = sys.dofs();
    let inv_sqrt_m: Vec<f64> = sys.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
    let k = sys.stiffness_matrix();
    let sym = DMatrix::from_fn(n, n, |i, j| inv_sqrt_m[i] * k[(i, j)] * inv_sqrt_m[j]);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(OmaError::usage("stiffness matrix is not positive definite"));
    }

    let mut freqs_hz = Vec::with_capacity(n);
    let mut damping_ratios = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for &idx in &order {
        let omega = eig.eigenvalues[idx].sqrt();
        freqs_hz.push(omega / (2.0 * PI));
        damping_ratios.push(sys.damping_alpha / (2.0 * omega));
        let phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] * inv_sqrt_m[i]).collect();
        shapes.push(canonical_shape(&phi));
    }
    Ok(GroundTruthModes {
        freqs_hz,
        damping_ratios,
        shapes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputQuantity {
    #[default]
    Displacement,
    Acceleration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub duration_s: f64,
    pub sample_hz: f64,
    /// Standard deviation of the per-DOF force, N.
    pub force_std: f64,
    pub seed: u64,
    pub output: OutputQuantity,
    /// Additive white measurement noise on every channel; off when `None`.
    pub measurement_noise_std: Option<f64>,
}

impl Default for SimConfig {
    /// 180 s at 100 Hz with 1 kN force standard deviation.
    fn default() -> Self {
        Self {
            duration_s: 180.0,
            sample_hz: 100.0,
            force_std: 1e3,
            seed: 0,
            output: OutputQuantity::Displacement,
            measurement_noise_std: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(OmaError::usage("duration_s must be positive"));
        }
        if !(self.sample_hz > 0.0 && self.sample_hz.is_finite()) {
            return Err(OmaError::usage("sample_hz must be positive"));
        }
        if !(self.force_std >= 0.0 && self.force_std.is_finite()) {
            return Err(OmaError::usage("force_std must be non-negative"));
        }
        if let Some(s) = self.measurement_noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(OmaError::usage("measurement_noise_std must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_hz).round() as usize
    }
}

/// Exact zero-order-hold discretization of `ż = A z + B f` with
/// `z = [x; v]`. Returns `(A_d, B_d)`.
pub fn discretize(sys: &ChainSystem, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.dofs();
    let m_inv: Vec<f64> = sys.masses.iter().map(|m| 1.0 / m).collect();
    let k = sys.stiffness_matrix();
    // augmented generator [[A, B], [0, 0]] so that exp() yields both blocks
    let mut gen = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        gen[(i, n + i)] = 1.0;
        for j in 0..n {
            gen[(n + i, j)] = -m_inv[i] * k[(i, j)];
        }
        gen[(n + i, n + i)] = -sys.damping_alpha;
        gen[(n + i, 2 * n + i)] = m_inv[i];
    }
    let phi = (gen * dt).exp();
    (
        phi.view((0, 0), (2 * n, 2 * n)).into_owned(),
        phi.view((0, 2 * n), (2 * n, n)).into_owned(),
    )
}

/// Response at every DOF to i.i.d. Gaussian forces held constant over each
/// sample interval, from rest. Sample `n` is the state at `t = n / sample_hz`.
pub fn simulate(sys: &ChainSystem, cfg: &SimConfig) -> Result<SignalBlock> {
    sys.validate()?;
    cfg.validate()?;
    let n = sys.dofs();
    let steps = cfg.n_samples();
    if steps == 0 {
        return Err(OmaError::usage("configuration yields zero samples"));
    }
    let dt = 1.0 / cfg.sample_hz;
    let (ad, bd) = discretize(sys, dt);
    let radius = ad.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !(radius <= 1.0 + 1e-9) {
        return Err(OmaError::numerical(
            "simulation",
            0,
            format!("discrete transition matrix has spectral radius {radius}"),
        ));
    }

    let k = sys.stiffness_matrix();
    let m_inv: Vec<f64> = sys.masses.iter().map(|m| 1.0 / m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = DVector::zeros(2 * n);
    let mut force = DVector::zeros(n);
    let mut channels = vec![Vec::with_capacity(steps); n];
    for _ in 0..steps {
        for f in force.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *f = cfg.force_std * z;
        }
        match cfg.output {
            OutputQuantity::Displacement => {
                for (i, ch) in channels.iter_mut().enumerate() {
                    ch.push(state[i]);
                }
            }
            OutputQuantity::Acceleration => {
                let kx = &k * state.rows(0, n);
                for (i, ch) in channels.iter_mut().enumerate() {
                    let v = state[n + i];
                    ch.push(m_inv[i] * (force[i] - kx[i]) - sys.damping_alpha * v);
                }
            }
        }
        state = &ad * &state + &bd * &force;
    }
    if channels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(OmaError::numerical("simulation", 0, "response diverged"));
    }

    if let Some(std) = cfg.measurement_noise_std.filter(|&s| s > 0.0) {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(1);
        for ch in channels.iter_mut() {
            for v in ch.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *v += std * z;
            }
        }
    }
    SignalBlock::new(dt, channels)
}

/// Channel subset by position, keeping the original DOF labels.
pub fn select_sensors(x: &SignalBlock, ids: &[usize]) -> Result<SignalBlock> {
    x.select_channels(ids)
}

/// `count` distinct positions out of `total`, uniform over subsets, sorted.
pub fn random_sensor_ids(total: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(OmaError::usage(format!("cannot draw {count} of {total} sensors")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = sample(&mut rng, total, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}
