//! Modal parameters from a fitted CP posterior.
//!
//! Mode shapes come from the mixing-matrix columns. Each column of `Rs` is
//! the lagged auto-covariance of one modal response, which for a lightly
//! damped mode is a damped cosine `u e^{-σ τ} cos(ω_d τ + θ)`; fitting it
//! gives the pole `-σ ± j ω_d` and hence frequency and damping ratio.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bcpf::CpPosterior;
use crate::error::{OmaError, Result};

/// Largest relative RMS misfit for which a damped-cosine fit is accepted as
/// a mode.
pub const MAX_FIT_RESIDUAL: f64 = 0.5;

/// A mode fitted worse than this whose shape reaches [`SPLIT_MAC`] against a
/// stronger mode is taken to be part of that mode.
pub const SPLIT_RESIDUAL: f64 = 0.1;
pub const SPLIT_MAC: f64 = 0.5;

const ZERO_PAD: usize = 8;
const LM_MAX_ITERS: usize = 200;
const LM_STEP_TOL: f64 = 1e-10;

/// Largest number of sources identifiable from `m` sensors with a
/// `m x m x K` covariance tensor: the largest `N` with
///
/// ```text
/// N(N-1)/2 <= M(M-1)/4 * (M(M-1)/2 + 1) - C(M,4)   (last term only for M >= 4)
/// ```
pub fn capacity(m: usize) -> Result<usize> {
    if m < 2 {
        return Err(OmaError::usage(format!("capacity needs at least 2 sensors, got {m}")));
    }
    let m = m as u128;
    let pairs = m * (m - 1) / 2;
    let quartets = if m >= 4 { m * (m - 1) * (m - 2) * (m - 3) / 24 } else { 0 };
    let bound = pairs * (pairs + 1) / 2 - quartets;
    let mut n: u128 = 1;
    while (n + 1) * n / 2 <= bound {
        n += 1;
    }
    Ok(n as usize)
}

/// Kruskal's sufficient uniqueness condition for a CP model `[[A, A, R]]`:
/// `2 k_A + k_R >= 2D + 2`.
pub fn kruskal_ok(k_a: usize, k_r: usize, d: usize) -> bool {
    2 * k_a + k_r >= 2 * d + 2
}

/// Parameters of `u e^{-σ τ} cos(ω_d τ + θ)` fitted over `τ = n * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampedCosineFit {
    /// Decay rate, 1/s.
    pub sigma: f64,
    /// Damped angular frequency, rad/s.
    pub omega_d: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// RMS misfit divided by the RMS of the data.
    pub residual: f64,
}

fn model(p: &Vector4<f64>, tau: f64) -> f64 {
    p[0] * (-p[1] * tau).exp() * (p[2] * tau + p[3]).cos()
}

fn sum_sq_misfit(p: &Vector4<f64>, rho: &[f64], dt: f64) -> f64 {
    rho.iter()
        .enumerate()
        .map(|(n, &y)| {
            let e = y - model(p, n as f64 * dt);
            e * e
        })
        .sum()
}

/// Bring parameters to canonical form: `u >= 0`, `σ >= 0`, `ω_d >= 0`,
/// `θ ∈ (-π, π]`.
fn canonical(mut p: Vector4<f64>) -> Vector4<f64> {
    if p[2] < 0.0 {
        p[2] = -p[2];
        p[3] = -p[3];
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[3] += PI;
    }
    p[1] = p[1].max(0.0);
    p[3] = (p[3] + PI).rem_euclid(2.0 * PI) - PI;
    if p[3] <= -PI {
        p[3] += 2.0 * PI;
    }
    p
}

/// Levenberg-Marquardt refinement from `start`. Returns the parameters and
/// whether the iteration converged.
fn levenberg_marquardt(rho: &[f64], dt: f64, start: Vector4<f64>) -> (Vector4<f64>, bool) {
    let mut p = canonical(start);
    let mut cost = sum_sq_misfit(&p, rho, dt);
    let mut mu = 1e-3;
    for _ in 0..LM_MAX_ITERS {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (n, &y) in rho.iter().enumerate() {
            let tau = n as f64 * dt;
            let env = (-p[1] * tau).exp();
            let (s, c) = (p[2] * tau + p[3]).sin_cos();
            let j = Vector4::new(env * c, -tau * p[0] * env * c, -tau * p[0] * env * s, -p[0] * env * s);
            let r = y - p[0] * env * c;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        loop {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&jtr)) else {
                mu *= 10.0;
                if mu > 1e16 {
                    return (p, true);
                }
                continue;
            };
            let trial = canonical(p + step);
            let trial_cost = sum_sq_misfit(&trial, rho, dt);
            if trial_cost <= cost {
                let rel_step = step.norm() / p.norm().max(f64::MIN_POSITIVE);
                p = trial;
                cost = trial_cost;
                mu = (mu * 0.3).max(1e-12);
                if rel_step < LM_STEP_TOL {
                    return (p, true);
                }
                break;
            }
            mu *= 10.0;
            if mu > 1e16 {
                // no descent direction left at working precision
                return (p, true);
            }
        }
    }
    (p, false)
}

/// Frequency (rad/s) of the largest interior spectral peak of the zero-padded
/// sequence, or `None` when no peak rises above the mean spectrum.
fn spectral_peak(rho: &[f64], dt: f64) -> Option<f64> {
    let n = rho.len() * ZERO_PAD;
    let mut buf: Vec<Complex<f64>> = rho.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    let mean = mag.iter().sum::<f64>() / mag.len() as f64;
    let (mut best, mut best_mag) = (None, 0.0);
    for b in 1..mag.len() - 1 {
        if mag[b] >= mag[b - 1] && mag[b] >= mag[b + 1] && mag[b] > best_mag {
            best = Some(b);
            best_mag = mag[b];
        }
    }
    let b = best?;
    if best_mag <= mean {
        return None;
    }
    // parabolic interpolation of the peak on the log magnitude
    let (l, c, r) = (mag[b - 1].max(1e-300).ln(), mag[b].ln(), mag[b + 1].max(1e-300).ln());
    let denom = l - 2.0 * c + r;
    let offset = if denom.abs() > 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(2.0 * PI * (b as f64 + offset) / (n as f64 * dt))
}

/// Decay rate from a straight-line fit of log |local maxima| against lag.
fn envelope_decay(rho: &[f64], dt: f64) -> f64 {
    let peaks: Vec<(f64, f64)> = (1..rho.len().saturating_sub(1))
        .filter(|&n| rho[n].abs() >= rho[n - 1].abs() && rho[n].abs() >= rho[n + 1].abs() && rho[n] != 0.0)
        .map(|n| (n as f64 * dt, rho[n].abs().ln()))
        .collect();
    if peaks.len() < 2 {
        return 0.0;
    }
    let len = peaks.len() as f64;
    let mx = peaks.iter().map(|p| p.0).sum::<f64>() / len;
    let my = peaks.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx > 0.0 {
        (-sxy / sxx).max(0.0)
    } else {
        0.0
    }
}

/// Two-pole linear prediction `ρ[n+2] = a ρ[n+1] + b ρ[n]`, whose
/// characteristic roots are `e^{(-σ ± j ω_d) dt}`.
fn linear_prediction_pole(rho: &[f64], dt: f64) -> Option<(f64, f64)> {
    let mut g = nalgebra::Matrix2::zeros();
    let mut h = nalgebra::Vector2::zeros();
    for w in rho.windows(3) {
        let x = nalgebra::Vector2::new(w[1], w[0]);
        g += x * x.transpose();
        h += x * w[2];
    }
    let coef = g.lu().solve(&h)?;
    let (a, b) = (coef[0], coef[1]);
    let disc = a * a + 4.0 * b;
    if disc >= 0.0 || b >= 0.0 {
        return None;
    }
    let modulus = (-b).sqrt();
    let angle = (a / (2.0 * modulus)).clamp(-1.0, 1.0).acos();
    Some(((-modulus.ln() / dt).max(0.0), angle / dt))
}

/// Least-squares fit of `u e^{-σ τ} cos(ω_d τ + θ)` to `rho` sampled at
/// `τ = n * dt_lag`.
///
/// Starts from the zero-padded spectral peak and the log-envelope slope (and
/// from a two-pole linear prediction when it yields an oscillatory pole),
/// refines each start by Levenberg-Marquardt and keeps the best converged
/// fit. Fails when the sequence has no spectral peak, no start converges, or
/// the best misfit exceeds [`MAX_FIT_RESIDUAL`].
pub fn fit_damped_cosine(rho: &[f64], dt_lag: f64) -> Result<DampedCosineFit> {
    if rho.len() < 8 {
        return Err(OmaError::usage(format!("damped-cosine fit needs at least 8 lags, got {}", rho.len())));
    }
    if !(dt_lag > 0.0) {
        return Err(OmaError::usage("lag spacing must be positive"));
    }
    let rms = (rho.iter().map(|v| v * v).sum::<f64>() / rho.len() as f64).sqrt();
    if !(rms > 0.0) || !rms.is_finite() {
        return Err(OmaError::FitFailure("sequence is identically zero".into()));
    }
    let omega0 = spectral_peak(rho, dt_lag)
        .ok_or_else(|| OmaError::FitFailure("no spectral peak above the mean spectrum".into()))?;
    let sigma0 = envelope_decay(rho, dt_lag);

    let mut starts = Vec::new();
    for (sigma, omega) in std::iter::once((sigma0, omega0)).chain(linear_prediction_pole(rho, dt_lag)) {
        // amplitude and phase from a linear fit at fixed (σ, ω)
        let mut g = nalgebra::Matrix2::zeros();
        let mut h = nalgebra::Vector2::zeros();
        for (n, &y) in rho.iter().enumerate() {
            let tau = n as f64 * dt_lag;
            let env = (-sigma * tau).exp();
            let x = nalgebra::Vector2::new(env * (omega * tau).cos(), -env * (omega * tau).sin());
            g += x * x.transpose();
            h += x * y;
        }
        let (c, s) = g.lu().solve(&h).map(|v| (v[0], v[1])).unwrap_or((rho[0], 0.0));
        starts.push(Vector4::new(c.hypot(s), sigma, omega, s.atan2(c)));
    }

    let best = starts
        .into_iter()
        .map(|s| levenberg_marquardt(rho, dt_lag, s))
        .filter(|(p, ok)| *ok && p[2] > 0.0)
        .map(|(p, _)| (sum_sq_misfit(&p, rho, dt_lag), p))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let Some((cost, p)) = best else {
        return Err(OmaError::FitFailure("damped-cosine fit did not converge".into()));
    };
    let residual = (cost / rho.len() as f64).sqrt() / rms;
    if residual > MAX_FIT_RESIDUAL {
        return Err(OmaError::FitFailure(format!(
            "relative misfit {residual:.3} exceeds {MAX_FIT_RESIDUAL}"
        )));
    }
    Ok(DampedCosineFit {
        sigma: p[1],
        omega_d: p[2],
        amplitude: p[0],
        phase: p[3],
        residual,
    })
}

impl DampedCosineFit {
    pub fn modal(&self) -> Result<(f64, f64)> {
        poles_to_modal(self.sigma, self.omega_d)
    }
}

/// Pole `-σ ± j ω_d` to `(f, ζ)` with `f = |s| / 2π`, `ζ = σ / |s|`.
pub fn poles_to_modal(sigma: f64, omega_d: f64) -> Result<(f64, f64)> {
    if !(omega_d > 0.0) {
        return Err(OmaError::usage(format!("damped frequency must be positive, got {omega_d}")));
    }
    if !(sigma >= 0.0) {
        return Err(OmaError::usage(format!("decay rate must be non-negative, got {sigma}")));
    }
    let mag = sigma.hypot(omega_d);
    Ok((mag / (2.0 * PI), sigma / mag))
}

/// `(f, ζ)` to `(σ, ω_d) = (ζ ω, ω sqrt(1 - ζ²))`.
pub fn modal_to_poles(freq_hz: f64, damping_ratio: f64) -> (f64, f64) {
    let omega = 2.0 * PI * freq_hz;
    (damping_ratio * omega, omega * (1.0 - damping_ratio * damping_ratio).sqrt())
}

/// Modal assurance criterion `|a·e|² / ((a·a)(e·e))`.
pub fn mac(phi_a: &[f64], phi_e: &[f64]) -> Result<f64> {
    if phi_a.len() != phi_e.len() || phi_a.is_empty() {
        return Err(OmaError::usage(format!(
            "MAC needs equal non-empty lengths, got {} and {}",
            phi_a.len(),
            phi_e.len()
        )));
    }
    let aa: f64 = phi_a.iter().map(|v| v * v).sum();
    let ee: f64 = phi_e.iter().map(|v| v * v).sum();
    if aa == 0.0 || ee == 0.0 {
        return Err(OmaError::usage("MAC of a zero vector is undefined"));
    }
    let ae: f64 = phi_a.iter().zip(phi_e).map(|(a, e)| a * e).sum();
    Ok((ae * ae / (aa * ee)).clamp(0.0, 1.0))
}

/// Unit L2 norm with the largest-magnitude entry positive.
pub fn canonical_shape(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    let pivot = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    let s = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
    v.iter().map(|x| x * s).collect()
}

/// One identified (or ground-truth) mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Unit-norm, sign-canonical shape on the measured DOFs.
    pub shape: Vec<f64>,
    pub freq_hz: f64,
    pub damping_ratio: f64,
    pub fit_residual: f64,
    /// Damping ratio lies in (0, 1).
    pub valid: bool,
    /// Source column in the CP posterior, when identified from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

/// Factor column that did not yield a mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedColumn {
    pub column: usize,
    pub reason: String,
}

/// Modes sorted by ascending frequency, with their sensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalEstimate {
    pub modes: Vec<Mode>,
    /// Original DOF index of each shape entry.
    pub sensor_ids: Vec<usize>,
    #[serde(default)]
    pub rejected: Vec<RejectedColumn>,
}

impl ModalEstimate {
    /// Build from raw modes: shapes are canonicalized and modes sorted by
    /// frequency.
    pub fn new(mut modes: Vec<Mode>, sensor_ids: Vec<usize>) -> Result<Self> {
        for m in &mut modes {
            if m.shape.len() != sensor_ids.len() {
                return Err(OmaError::usage("mode shape length differs from the sensor count"));
            }
            m.shape = canonical_shape(&m.shape);
            m.valid = m.damping_ratio > 0.0 && m.damping_ratio < 1.0;
        }
        modes.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
        Ok(Self {
            modes,
            sensor_ids,
            rejected: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn freqs_hz(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.freq_hz).collect()
    }
}

/// Turn every posterior column into a mode: shape from the averaged `A`
/// modes, `(f, ζ)` from a damped-cosine fit of the `Rs` column sampled at
/// lag spacing `dt_lag`. Columns whose fit fails are listed in `rejected`.
pub fn extract_modes(post: &CpPosterior, dt_lag: f64, sensor_ids: &[usize]) -> Result<ModalEstimate> {
    if sensor_ids.len() != post.a1_mean.nrows() {
        return Err(OmaError::usage(format!(
            "{} sensor ids for a {}-row mixing matrix",
            sensor_ids.len(),
            post.a1_mean.nrows()
        )));
    }
    let mixing = post.mixing_matrix();
    let mut modes = Vec::new();
    let mut rejected = Vec::new();
    for r in 0..post.rank() {
        let rho: Vec<f64> = post.rs_mean.column(r).iter().copied().collect();
        let shape: Vec<f64> = mixing.column(r).iter().copied().collect();
        if shape.iter().all(|&v| v == 0.0) {
            rejected.push(RejectedColumn {
                column: r,
                reason: "zero mode shape".into(),
            });
            continue;
        }
        match fit_damped_cosine(&rho, dt_lag).and_then(|fit| Ok((fit, fit.modal()?))) {
            Ok((fit, (freq_hz, damping_ratio))) => modes.push(Mode {
                shape,
                freq_hz,
                damping_ratio,
                fit_residual: fit.residual,
                valid: false,
                column: Some(r),
            }),
            Err(e) => rejected.push(RejectedColumn {
                column: r,
                reason: e.to_string(),
            }),
        }
    }
    if modes.is_empty() {
        return Err(OmaError::Extraction(format!(
            "all {} factor columns were rejected",
            post.rank()
        )));
    }
    let mut est = ModalEstimate::new(modes, sensor_ids.to_vec())?;
    est.rejected = rejected;
    Ok(est)
}

/// Posterior columns that split off a stronger mode: the column's
/// auto-covariance is a poor damped cosine (residual above
/// [`SPLIT_RESIDUAL`]) and its shape is close to that of a stronger mode
/// (MAC at least [`SPLIT_MAC`]). Strength is the norm of a column's rank-one
/// term. Sorted ascending.
pub fn split_columns(est: &ModalEstimate, post: &CpPosterior) -> Result<Vec<usize>> {
    let strength: Vec<f64> = (0..post.rank())
        .map(|r| post.a1_mean.column(r).norm() * post.a2_mean.column(r).norm() * post.rs_mean.column(r).norm())
        .collect();
    let mut order: Vec<(&Mode, usize)> = est
        .modes
        .iter()
        .filter_map(|m| m.column.filter(|&c| c < strength.len()).map(|c| (m, c)))
        .collect();
    order.sort_by(|a, b| strength[b.1].total_cmp(&strength[a.1]));
    let mut split = Vec::new();
    for (i, &(m, col)) in order.iter().enumerate() {
        if m.fit_residual <= SPLIT_RESIDUAL {
            continue;
        }
        for &(stronger, _) in &order[..i] {
            if mac(&m.shape, &stronger.shape)? >= SPLIT_MAC {
                split.push(col);
                break;
            }
        }
    }
    split.sort_unstable();
    Ok(split)
}

/// MAC values between estimated (rows) and reference (columns) modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacMatrix {
    pub values: Vec<Vec<f64>>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl MacMatrix {
    pub fn between(est: &ModalEstimate, truth: &ModalEstimate) -> Result<Self> {
        let values = est
            .modes
            .iter()
            .map(|e| truth.modes.iter().map(|t| mac(&t.shape, &e.shape)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values,
            row_ids: (1..=est.len()).map(|i| format!("est{i}")).collect(),
            col_ids: (1..=truth.len()).map(|i| format!("mode{i}")).collect(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }
}

/// One-to-one pairing of estimated to reference modes maximizing the total
/// MAC. `assignment[i]` is the reference index paired with estimated mode
/// `i`, or `None` when there are more estimates than references.
pub fn pair_modes(est: &ModalEstimate, truth: &ModalEstimate) -> Result<(Vec<Option<usize>>, MacMatrix)> {
    if est.sensor_ids != truth.sensor_ids {
        return Err(OmaError::usage("reference shapes must be restricted to the estimate's sensors"));
    }
    let macs = MacMatrix::between(est, truth)?;
    let cost = DMatrix::from_fn(est.len(), truth.len(), |i, j| 1.0 - macs.values[i][j]);
    Ok((min_cost_assignment(&cost), macs))
}

/// Rectangular assignment problem (Hungarian algorithm with potentials).
/// Returns, for each row, the column assigned to it.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transposed = rows > cols;
    let c = if transposed { cost.transpose() } else { cost.clone() };
    let (n, m) = c.shape(); // n <= m

    // 1-based arrays as in the classical formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = Some(j - 1);
        }
    }
    if !transposed {
        return row_to_col;
    }
    let mut out = vec![None; rows];
    for (r, c) in row_to_col.into_iter().enumerate() {
        if let Some(c) = c {
            out[c] = Some(r);
        }
    }
    out
}

/// Damped cosine samples `u e^{-σ n dt} cos(ω_d n dt + θ)`.
pub fn damped_cosine(len: usize, dt: f64, amplitude: f64, sigma: f64, omega_d: f64, phase: f64) -> Vec<f64> {
    let p = Vector4::new(amplitude, sigma, omega_d, phase);
    (0..len).map(|n| model(&p, n as f64 * dt)).collect()
}

/// Mean of the diagonal and the largest off-diagonal entry of each row of
/// a square MAC matrix.
pub fn diagonal_dominance(values: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..values.nrows())
        .map(|i| {
            let off = (0..values.ncols())
                .filter(|&j| j != i)
                .map(|j| values[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
            (values[(i, i)], off)
        })
        .collect()
}
