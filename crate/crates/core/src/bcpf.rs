//! Variational Bayesian CP factorization of an `M x M x K` covariance
//! tensor with automatic rank determination.
//!
//! The generative model is
//!
//! ```text
//! R[i,j,k] ~ N( Σ_r A1[i,r] A2[j,r] Rs[k,r], 1/β )
//! A1[i,:], A2[j,:], Rs[k,:] ~ N(0, diag(λ)^-1)
//! λ_r ~ Gamma(c0, d0),   β ~ Gamma(a0, b0)
//! ```
//!
//! and the posterior is approximated by the mean-field family
//! `q(A1) q(A2) q(Rs) q(λ) q(β)` with Gaussian rows and Gamma precisions.
//! Each `update_*` function is an exact coordinate-ascent step on the
//! evidence lower bound, so the bound is non-decreasing across a sweep.
//! Columns whose precision drives them to zero are pruned; the number of
//! surviving columns is the estimated CP rank.
//!
//! The two `A` modes are kept as separate factors (the symmetric structure of
//! the data is not imposed); [`CpPosterior::mixing_matrix`] averages them
//! after sign alignment.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{OmaError, Result};
use crate::modal::capacity;
use crate::tensor::{khatri_rao_unchecked, unfold, Mode, Tensor3};

/// Hyperparameters and loop controls of a factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcpfHyperparams {
    /// Gamma shape of the column precision prior.
    pub c0: f64,
    /// Gamma rate of the column precision prior.
    pub d0: f64,
    /// Gamma shape of the noise precision prior.
    pub a0: f64,
    /// Gamma rate of the noise precision prior.
    pub b0: f64,
    /// Initial rank. `None` uses the identifiability capacity of the sensor
    /// count (see [`crate::modal::capacity`]).
    pub d_init: Option<usize>,
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    /// Columns whose power falls below this fraction of the largest column
    /// power are removed.
    pub prune_ratio: f64,
    /// Iterations before pruning is first evaluated.
    pub prune_burn_in: usize,
    /// Noise precisions expected by the first sweep, relative to a tensor
    /// scaled to unit RMS. One fit is run from each and the one with the
    /// highest final bound is kept. Large values let weak columns lock onto
    /// data before the noise estimate absorbs them; small values avoid
    /// spending early sweeps on noise.
    pub beta_init: Vec<f64>,
}

impl Default for BcpfHyperparams {
    fn default() -> Self {
        Self {
            c0: 1e-6,
            d0: 1e-6,
            a0: 1e-6,
            b0: 1e-6,
            d_init: None,
            max_iters: 500,
            elbo_rel_tol: 1e-6,
            prune_ratio: 1e-6,
            prune_burn_in: 5,
            beta_init: vec![1e2, 1e4, 1e6],
        }
    }
}

impl BcpfHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("c0", self.c0), ("d0", self.d0), ("a0", self.a0), ("b0", self.b0)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OmaError::usage(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta_init.is_empty() {
            return Err(OmaError::usage("beta_init needs at least one value"));
        }
        if let Some(v) = self.beta_init.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(OmaError::usage(format!("beta_init values must be positive, got {v}")));
        }
        if self.d_init == Some(0) {
            return Err(OmaError::usage("d_init must be at least 1"));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(OmaError::usage("elbo_rel_tol must be positive"));
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio < 1.0) {
            return Err(OmaError::usage("prune_ratio must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(OmaError::usage("max_iters must be at least 1"));
        }
        Ok(())
    }

    /// Initial rank for a tensor with `m` sensors.
    pub fn initial_rank(&self, m: usize) -> usize {
        self.d_init
            .unwrap_or_else(|| if m >= 2 { capacity(m).unwrap_or(1) } else { 1 })
    }
}

/// Factor of the CP model addressed by an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    A1,
    A2,
    Rs,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::A1, Factor::A2, Factor::Rs];

    fn mode(self) -> Mode {
        match self {
            Factor::A1 => Mode::One,
            Factor::A2 => Mode::Two,
            Factor::Rs => Mode::Three,
        }
    }

    fn stage(self) -> &'static str {
        match self {
            Factor::A1 => "factor update (mode 1)",
            Factor::A2 => "factor update (mode 2)",
            Factor::Rs => "factor update (mode 3)",
        }
    }
}

/// Mean-field posterior over the CP factors and precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct CpPosterior {
    pub a1_mean: DMatrix<f64>,
    pub a2_mean: DMatrix<f64>,
    pub rs_mean: DMatrix<f64>,
    /// Row covariances of `a1_mean`, one `D x D` matrix per row.
    pub a1_cov: Vec<DMatrix<f64>>,
    pub a2_cov: Vec<DMatrix<f64>>,
    pub rs_cov: Vec<DMatrix<f64>>,
    pub lambda_shape: DVector<f64>,
    pub lambda_rate: DVector<f64>,
    pub beta_shape: f64,
    pub beta_rate: f64,
}

impl CpPosterior {
    pub fn rank(&self) -> usize {
        self.a1_mean.ncols()
    }

    pub fn mean(&self, f: Factor) -> &DMatrix<f64> {
        match f {
            Factor::A1 => &self.a1_mean,
            Factor::A2 => &self.a2_mean,
            Factor::Rs => &self.rs_mean,
        }
    }

    pub fn cov(&self, f: Factor) -> &[DMatrix<f64>] {
        match f {
            Factor::A1 => &self.a1_cov,
            Factor::A2 => &self.a2_cov,
            Factor::Rs => &self.rs_cov,
        }
    }

    fn parts_mut(&mut self, f: Factor) -> (&mut DMatrix<f64>, &mut Vec<DMatrix<f64>>) {
        match f {
            Factor::A1 => (&mut self.a1_mean, &mut self.a1_cov),
            Factor::A2 => (&mut self.a2_mean, &mut self.a2_cov),
            Factor::Rs => (&mut self.rs_mean, &mut self.rs_cov),
        }
    }

    /// `E[β] = a_L / b_L`.
    pub fn expected_beta(&self) -> f64 {
        self.beta_shape / self.beta_rate
    }

    /// `E[λ_r] = c_L^r / d_L^r`.
    pub fn expected_lambda(&self) -> DVector<f64> {
        self.lambda_shape.component_div(&self.lambda_rate)
    }

    /// Second moment `E[F^T F] = F̃^T F̃ + Σ_n V_n` of one factor.
    pub fn second_moment(&self, f: Factor) -> DMatrix<f64> {
        let mean = self.mean(f);
        let mut g = mean.transpose() * mean;
        for v in self.cov(f) {
            g += v;
        }
        g
    }

    /// Combined expected squared norm of each column across the three factors.
    pub fn column_powers(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.rank());
        for f in Factor::ALL {
            p += self.second_moment(f).diagonal();
        }
        p
    }

    /// Squared norm of each column of the factor means, summed over factors.
    pub fn mean_column_powers(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.rank());
        for f in Factor::ALL {
            let m = self.mean(f);
            for r in 0..m.ncols() {
                p[r] += m.column(r).norm_squared();
            }
        }
        p
    }

    /// Reconstruction from the posterior means.
    pub fn mean_reconstruction(&self) -> Tensor3 {
        crate::tensor::cp_reconstruct_unchecked(&self.a1_mean, &self.a2_mean, &self.rs_mean)
    }

    /// Column-wise average of the two `A` modes after normalizing each
    /// column to unit length and aligning the sign of `a2` to `a1`.
    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.a1_mean.nrows(), self.rank());
        for r in 0..self.rank() {
            let a = self.a1_mean.column(r);
            let b = self.a2_mean.column(r);
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 && nb == 0.0 {
                continue;
            }
            let ua = if na > 0.0 { a / na } else { a.into_owned() };
            let mut ub = if nb > 0.0 { b / nb } else { b.into_owned() };
            if ua.dot(&ub) < 0.0 {
                ub = -ub;
            }
            out.set_column(r, &((ua + ub) * 0.5));
        }
        out
    }

    /// Cosine between matching columns of `a1_mean` and `a2_mean`, sign-free.
    pub fn a_mode_congruence(&self) -> DVector<f64> {
        DVector::from_fn(self.rank(), |r, _| {
            let a = self.a1_mean.column(r);
            let b = self.a2_mean.column(r);
            let denom = a.norm() * b.norm();
            if denom > 0.0 {
                a.dot(&b).abs() / denom
            } else {
                0.0
            }
        })
    }

    /// Validate dimensions, finiteness and positive-definiteness of every
    /// row covariance.
    pub fn check(&self) -> Result<()> {
        let d = self.rank();
        if d == 0 {
            return Err(OmaError::usage("posterior has rank 0"));
        }
        for f in Factor::ALL {
            let mean = self.mean(f);
            let cov = self.cov(f);
            if mean.ncols() != d || cov.len() != mean.nrows() {
                return Err(OmaError::usage(format!("{f:?} block has inconsistent dimensions")));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(OmaError::usage(format!("{f:?} mean has non-finite entries")));
            }
            for v in cov {
                if v.shape() != (d, d) || !is_spd(v) {
                    return Err(OmaError::usage(format!("{f:?} row covariance is not SPD")));
                }
            }
        }
        if self.lambda_shape.len() != d || self.lambda_rate.len() != d {
            return Err(OmaError::usage("precision parameters do not match the rank"));
        }
        if self.lambda_rate.iter().any(|&v| !(v > 0.0)) || !(self.beta_rate > 0.0) {
            return Err(OmaError::usage("Gamma rates must be positive"));
        }
        Ok(())
    }
}

/// Symmetric with a Cholesky factor and smallest eigenvalue above
/// `-1e-10 * trace`.
pub(crate) fn is_spd(v: &DMatrix<f64>) -> bool {
    if v.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let tr = v.trace();
    if !(tr > 0.0) {
        return false;
    }
    let asym = (v - v.transpose()).norm();
    if asym > 1e-8 * v.norm() {
        return false;
    }
    let min_eig = v.clone().symmetric_eigenvalues().min();
    min_eig > -1e-10 * tr && Cholesky::new(v.clone()).is_some()
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Lower bound after each sweep, in the normalized units.
    pub elbo: Vec<f64>,
    /// Rank after each sweep.
    pub rank: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// The tensor was divided by this before fitting; the returned posterior
    /// is mapped back to the original units.
    pub data_scale: f64,
    /// Starting noise precision of the kept run.
    pub beta_init: f64,
}

impl FitTrace {
    pub fn final_elbo(&self) -> f64 {
        self.elbo.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Initialize the posterior from truncated SVDs of the three unfoldings.
///
/// Column `r` of each factor mean is `u_r * sqrt(s_r)` for the leading
/// singular pairs of that mode's unfolding; columns past its numerical rank
/// are filled with seeded standard-normal draws. Row covariances start at the
/// identity, the column precisions at their prior and the noise precision
/// at a mean of the first `beta_init` value.
pub fn init_posterior(t: &Tensor3, h: &BcpfHyperparams, seed: u64) -> Result<CpPosterior> {
    h.validate()?;
    init_with_beta(t, h, seed, h.beta_init[0])
}

fn init_with_beta(t: &Tensor3, h: &BcpfHyperparams, seed: u64, beta0: f64) -> Result<CpPosterior> {
    let (m, m2, k) = t.dims();
    if m != m2 {
        return Err(OmaError::usage(format!("covariance tensor must be M x M x K, got {m}x{m2}x{k}")));
    }
    let d = h.initial_rank(m);
    if d > m * m {
        log::warn!("initial rank {d} exceeds M^2 = {}", m * m);
    }
    if m >= 2 {
        if let Ok(cap) = capacity(m) {
            if d > cap {
                log::warn!("initial rank {d} exceeds the identifiable capacity {cap} for {m} sensors");
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init_mode = |mode: Mode| -> DMatrix<f64> {
        let x = unfold(t, mode);
        let rows = x.nrows();
        let svd = x.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let tol = smax * f64::EPSILON * rows.max(t.data().len() / rows) as f64;
        let numerical_rank = s.iter().filter(|&&v| v > tol && smax > 0.0).count();
        let mut out = DMatrix::zeros(rows, d);
        for r in 0..d {
            if r < numerical_rank {
                out.set_column(r, &(u.column(r) * s[r].sqrt()));
            } else {
                for i in 0..rows {
                    out[(i, r)] = StandardNormal.sample(&mut rng);
                }
            }
        }
        out
    };
    let a1_mean = init_mode(Mode::One);
    let a2_mean = init_mode(Mode::Two);
    let rs_mean = init_mode(Mode::Three);

    let eye = DMatrix::identity(d, d);
    Ok(CpPosterior {
        a1_mean,
        a2_mean,
        rs_mean,
        a1_cov: vec![eye.clone(); m],
        a2_cov: vec![eye.clone(); m],
        rs_cov: vec![eye; k],
        lambda_shape: DVector::from_element(d, h.c0),
        lambda_rate: DVector::from_element(d, h.d0),
        beta_shape: h.a0,
        beta_rate: h.a0 / beta0,
    })
}

/// Invert an SPD matrix by Cholesky, retrying once with `1e-12 * trace`
/// added to the diagonal.
fn spd_inverse(p: &DMatrix<f64>, stage: &'static str) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::<f64, Dyn>::new(p.clone()) {
        return Ok(ch.inverse());
    }
    let jitter = 1e-12 * p.trace().abs();
    let mut q = p.clone();
    for i in 0..q.nrows() {
        q[(i, i)] += jitter;
    }
    log::debug!("{stage}: precision matrix not positive definite, retrying with jitter {jitter:e}");
    Cholesky::<f64, Dyn>::new(q)
        .map(|ch| ch.inverse())
        .ok_or_else(|| OmaError::numerical(stage, 0, "precision matrix is singular after jitter"))
}

/// Replace the posterior of one factor given the current state of the rest.
///
/// Row covariance: `V = (E[β] E[(B ⊙ C)^T (B ⊙ C)] + E[Λ])^-1` with the
/// Gram expectation `(E[B^T B]) ∘ (E[C^T C])`; row means
/// `E[β] V (B̃ ⊙ C̃)^T x_n` with `x_n` the matching row of the unfolding.
pub fn update_factor(t: &Tensor3, post: &CpPosterior, factor: Factor) -> Result<CpPosterior> {
    let mut next = post.clone();
    update_factor_in_place(t, &mut next, factor)?;
    Ok(next)
}

pub fn update_factor_mode1(t: &Tensor3, post: &CpPosterior) -> Result<CpPosterior> {
    update_factor(t, post, Factor::A1)
}

pub fn update_factor_mode2(t: &Tensor3, post: &CpPosterior) -> Result<CpPosterior> {
    update_factor(t, post, Factor::A2)
}

pub fn update_factor_mode3(t: &Tensor3, post: &CpPosterior) -> Result<CpPosterior> {
    update_factor(t, post, Factor::Rs)
}

pub(crate) fn update_factor_in_place(t: &Tensor3, post: &mut CpPosterior, factor: Factor) -> Result<()> {
    // (slow, fast) operands of the Khatri-Rao product for this mode's unfolding
    let (slow, fast) = match factor {
        Factor::A1 => (Factor::Rs, Factor::A2),
        Factor::A2 => (Factor::Rs, Factor::A1),
        Factor::Rs => (Factor::A2, Factor::A1),
    };
    let d = post.rank();
    let beta = post.expected_beta();
    let gram = post.second_moment(slow).component_mul(&post.second_moment(fast));
    let mut precision = gram * beta;
    let lambda = post.expected_lambda();
    for r in 0..d {
        precision[(r, r)] += lambda[r];
    }
    let cov = spd_inverse(&precision, factor.stage())?;

    let kr = khatri_rao_unchecked(post.mean(slow), post.mean(fast));
    let x = unfold(t, factor.mode());
    let mean = (x * kr) * &cov * beta;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(OmaError::numerical(factor.stage(), 0, "non-finite factor mean"));
    }

    let rows = mean.nrows();
    let (m, c) = post.parts_mut(factor);
    *m = mean;
    *c = vec![cov; rows];
    Ok(())
}

/// Gamma posterior of the column precisions:
/// `c_L = c0 + (2M + K)/2`, `d_L = d0 + ½ (E‖a1_r‖² + E‖a2_r‖² + E‖rs_r‖²)`.
pub fn update_lambda(post: &CpPosterior, h: &BcpfHyperparams) -> Result<CpPosterior> {
    let mut next = post.clone();
    update_lambda_in_place(&mut next, h)?;
    Ok(next)
}

pub(crate) fn update_lambda_in_place(post: &mut CpPosterior, h: &BcpfHyperparams) -> Result<()> {
    let n_rows = post.a1_mean.nrows() + post.a2_mean.nrows() + post.rs_mean.nrows();
    let shape = h.c0 + n_rows as f64 / 2.0;
    let powers = post.column_powers();
    let rate = powers.map(|p| h.d0 + 0.5 * p);
    if rate.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(OmaError::numerical("precision update", 0, "non-finite column power"));
    }
    post.lambda_shape = DVector::from_element(post.rank(), shape);
    post.lambda_rate = rate;
    Ok(())
}

/// `E_q ‖R - Σ_r a1_r ∘ a2_r ∘ rs_r‖²_F` expanded as
/// `‖R‖² - 2 <R, [[Ã1, Ã2, R̃s]]> + Σ (E[A1ᵀA1] ∘ E[A2ᵀA2] ∘ E[RsᵀRs])`.
///
/// Slightly negative values from cancellation are clamped to zero; values
/// below `-1e-8 ‖R‖²` are reported as a numerical failure.
pub fn expected_residual(t: &Tensor3, post: &CpPosterior) -> Result<f64> {
    let norm2 = t.norm_squared();
    let cross = t.inner(&post.mean_reconstruction());
    let quad = post
        .second_moment(Factor::A1)
        .component_mul(&post.second_moment(Factor::A2))
        .component_mul(&post.second_moment(Factor::Rs))
        .sum();
    let e = norm2 - 2.0 * cross + quad;
    if !e.is_finite() {
        return Err(OmaError::numerical("noise update", 0, "non-finite expected residual"));
    }
    if e < 0.0 {
        if e < -1e-8 * norm2 {
            return Err(OmaError::numerical(
                "noise update",
                0,
                format!("expected residual {e:e} is negative beyond tolerance"),
            ));
        }
        return Ok(0.0);
    }
    Ok(e)
}

/// Gamma posterior of the noise precision:
/// `a_L = a0 + ½ M²K`, `b_L = b0 + ½ E‖R - reconstruction‖²`.
pub fn update_beta(t: &Tensor3, post: &CpPosterior, h: &BcpfHyperparams) -> Result<CpPosterior> {
    let mut next = post.clone();
    update_beta_in_place(t, &mut next, h)?;
    Ok(next)
}

pub(crate) fn update_beta_in_place(t: &Tensor3, post: &mut CpPosterior, h: &BcpfHyperparams) -> Result<()> {
    let resid = expected_residual(t, post)?;
    post.beta_shape = h.a0 + 0.5 * t.data().len() as f64;
    post.beta_rate = h.b0 + 0.5 * resid;
    Ok(())
}

/// Evidence lower bound.
///
/// Valid once the precision shapes hold their posterior values
/// (`c_L`, `a_L`), i.e. after the first sweep.
pub fn elbo(t: &Tensor3, post: &CpPosterior, h: &BcpfHyperparams) -> Result<f64> {
    let resid = expected_residual(t, post)?;
    let (a_l, b_l) = (post.beta_shape, post.beta_rate);
    let data_term = -(a_l / (2.0 * b_l)) * resid;

    let lambda = post.expected_lambda();
    let powers = post.column_powers();
    let prior_term = -0.5 * lambda.dot(&powers);

    let mut entropy = 0.0;
    for f in Factor::ALL {
        for v in post.cov(f) {
            entropy += 0.5 * log_det_spd(v).ok_or_else(|| OmaError::numerical("lower bound", 0, "row covariance is not SPD"))?;
        }
    }

    let lambda_term: f64 = post
        .lambda_shape
        .iter()
        .zip(post.lambda_rate.iter())
        .map(|(&c, &d)| ln_gamma(c) + c * (1.0 - d.ln() - h.d0 / d))
        .sum();
    let beta_term = ln_gamma(a_l) + a_l * (1.0 - b_l.ln() - h.b0 / b_l);

    // Normalizers that depend only on sizes and the prior; they are kept so
    // bounds of fits with different ranks can be compared.
    let rows = (post.a1_mean.nrows() + post.a2_mean.nrows() + post.rs_mean.nrows()) as f64;
    let d = post.rank() as f64;
    let n = t.data().len() as f64;
    let constant = 0.5 * rows * d + d * (h.c0 * h.d0.ln() - ln_gamma(h.c0)) + h.a0 * h.b0.ln()
        - ln_gamma(h.a0)
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

    Ok(data_term + prior_term + entropy + lambda_term + beta_term + constant)
}

fn log_det_spd(v: &DMatrix<f64>) -> Option<f64> {
    let ch = Cholesky::new(v.clone())?;
    Some(2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

/// Drop columns whose power is below `prune_ratio` times the largest column
/// power. The strongest column always survives.
///
/// Power is measured on the means ([`CpPosterior::mean_column_powers`]): a
/// column switched off by its precision keeps a posterior variance of the
/// order of `1 / λ_r`, which would hide it from an expected-power test.
pub fn prune_columns(post: &CpPosterior, h: &BcpfHyperparams) -> CpPosterior {
    let powers = post.mean_column_powers();
    let max = powers.max();
    let keep: Vec<usize> = (0..post.rank()).filter(|&r| !(powers[r] < h.prune_ratio * max)).collect();
    if keep.len() == post.rank() || keep.is_empty() {
        return post.clone();
    }
    retain_columns(post, &keep)
}

fn retain_columns(post: &CpPosterior, keep: &[usize]) -> CpPosterior {
    let cols = |m: &DMatrix<f64>| m.select_columns(keep);
    let sub = |v: &DMatrix<f64>| v.select_rows(keep).select_columns(keep);
    CpPosterior {
        a1_mean: cols(&post.a1_mean),
        a2_mean: cols(&post.a2_mean),
        rs_mean: cols(&post.rs_mean),
        a1_cov: post.a1_cov.iter().map(sub).collect(),
        a2_cov: post.a2_cov.iter().map(sub).collect(),
        rs_cov: post.rs_cov.iter().map(sub).collect(),
        lambda_shape: post.lambda_shape.select_rows(keep),
        lambda_rate: post.lambda_rate.select_rows(keep),
        beta_shape: post.beta_shape,
        beta_rate: post.beta_rate,
    }
}

/// Rescale each column across the three factors (scales `s1 s2 s3 = 1`) to
/// the values that maximize the lower bound.
///
/// The mean reconstruction and the expected residual do not change; the
/// prior and entropy terms give `Σ_n rows_n ln s_n - ½ E[λ_r] Σ_n s_n² p_n`,
/// maximized by `s_n² = (rows_n - μ) / (E[λ_r] p_n)` with `μ` fixed by the
/// product constraint. Without this step the CP scale indeterminacy is only
/// resolved by the weak prior pull, and columns drift into unbalanced
/// scalings that hide dead columns from the precision update.
pub(crate) fn rebalance_columns(post: &mut CpPosterior) {
    let lam = post.expected_lambda();
    let rows: [f64; 3] = [
        post.a1_mean.nrows() as f64,
        post.a2_mean.nrows() as f64,
        post.rs_mean.nrows() as f64,
    ];
    let min_rows = rows.iter().cloned().fold(f64::INFINITY, f64::min);
    for r in 0..post.rank() {
        let mut p = [0.0; 3];
        for (n, f) in Factor::ALL.into_iter().enumerate() {
            p[n] = post.mean(f).column(r).norm_squared() + post.cov(f).iter().map(|v| v[(r, r)]).sum::<f64>();
        }
        if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) || !(lam[r] > 0.0) {
            continue;
        }
        // log of the scale product; strictly decreasing in mu below min_rows
        let log_product = |mu: f64| -> f64 { (0..3).map(|n| ((rows[n] - mu) / (lam[r] * p[n])).ln()).sum() };
        let mut lo = min_rows - 1.0;
        while log_product(lo) < 0.0 {
            lo = min_rows - 2.0 * (min_rows - lo);
        }
        let mut hi = min_rows;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if log_product(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        for (n, f) in Factor::ALL.into_iter().enumerate() {
            let s = ((rows[n] - mu) / (lam[r] * p[n])).sqrt();
            let (m, c) = post.parts_mut(f);
            m.column_mut(r).scale_mut(s);
            for v in c.iter_mut() {
                v.row_mut(r).scale_mut(s);
                v.column_mut(r).scale_mut(s);
            }
        }
    }
}

/// One full sweep: the three factor updates, column rebalancing, then the
/// precisions.
pub fn sweep(t: &Tensor3, post: &mut CpPosterior, h: &BcpfHyperparams) -> Result<()> {
    for f in Factor::ALL {
        update_factor_in_place(t, post, f)?;
    }
    rebalance_columns(post);
    update_lambda_in_place(post, h)?;
    update_beta_in_place(t, post, h)
}

/// Fit the model to `t` by coordinate ascent until the relative change of
/// the lower bound drops below `elbo_rel_tol` or `max_iters` sweeps ran.
///
/// The tensor is divided by its RMS entry before fitting so the unit
/// initial precisions are on the data's scale; the returned posterior is
/// mapped back so that its mean reconstruction approximates `t` itself.
/// The lower-bound trace is reported in the normalized units.
pub fn fit(t: &Tensor3, h: &BcpfHyperparams, seed: u64) -> Result<(CpPosterior, FitTrace)> {
    h.validate()?;
    let scale = rms_scale(t);
    let tn = t.scaled(1.0 / scale);
    let mut best: Option<(CpPosterior, FitTrace)> = None;
    for &beta0 in &h.beta_init {
        let post = init_with_beta(&tn, h, seed, beta0)?;
        let (post, mut trace) = iterate(&tn, post, h, scale)?;
        trace.beta_init = beta0;
        log::debug!("start beta {beta0:e}: rank {}, bound {:e}", post.rank(), trace.final_elbo());
        if best.as_ref().is_none_or(|(_, b)| trace.final_elbo() > b.final_elbo()) {
            best = Some((post, trace));
        }
    }
    Ok(best.expect("beta_init is non-empty"))
}

/// Continue a fit after dropping every column not listed in `keep`.
///
/// `post` is a posterior returned by [`fit`] or [`refit`] for the same
/// tensor. Iteration resumes from the reduced state with the usual stopping
/// rule; pruning stays active from the first sweep.
pub fn refit(t: &Tensor3, post: &CpPosterior, keep: &[usize], h: &BcpfHyperparams) -> Result<(CpPosterior, FitTrace)> {
    h.validate()?;
    let d = post.rank();
    if keep.is_empty() || keep.iter().any(|&r| r >= d) {
        return Err(OmaError::usage(format!("refit needs a non-empty subset of the {d} columns")));
    }
    let scale = rms_scale(t);
    let reduced = rescale(retain_columns(post, keep), 1.0 / scale);
    let resumed = BcpfHyperparams { prune_burn_in: 0, ..h.clone() };
    iterate(&t.scaled(1.0 / scale), reduced, &resumed, scale)
}

fn rms_scale(t: &Tensor3) -> f64 {
    let rms = (t.norm_squared() / t.data().len() as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

fn iterate(tn: &Tensor3, mut post: CpPosterior, h: &BcpfHyperparams, scale: f64) -> Result<(CpPosterior, FitTrace)> {
    let mut trace = FitTrace {
        elbo: Vec::new(),
        rank: Vec::new(),
        converged: false,
        iterations: 0,
        data_scale: scale,
        beta_init: post.expected_beta(),
    };

    for it in 1..=h.max_iters {
        sweep(tn, &mut post, h).map_err(|e| e.at_iteration(it))?;
        let before = post.rank();
        if it > h.prune_burn_in {
            post = prune_columns(&post, h);
        }
        let pruned = post.rank() != before;
        if pruned {
            log::debug!("iteration {it}: pruned rank {before} -> {}", post.rank());
        }

        let bound = elbo(tn, &post, h).map_err(|e| e.at_iteration(it))?;
        trace.iterations = it;
        trace.rank.push(post.rank());
        let prev = trace.elbo.last().copied();
        trace.elbo.push(bound);

        if let (Some(prev), false) = (prev, pruned) {
            let rel = (bound - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < h.elbo_rel_tol {
                trace.converged = true;
                break;
            }
        }
    }

    Ok((rescale(post, scale), trace))
}

/// Map a posterior fitted on `t / scale` back to `t`: each factor absorbs a
/// cube root of the scale, precisions transform accordingly.
fn rescale(mut post: CpPosterior, scale: f64) -> CpPosterior {
    if scale == 1.0 {
        return post;
    }
    let f = scale.cbrt();
    let f2 = f * f;
    for factor in Factor::ALL {
        let (m, c) = post.parts_mut(factor);
        *m *= f;
        for v in c.iter_mut() {
            *v *= f2;
        }
    }
    post.lambda_rate *= f2;
    post.beta_rate *= scale * scale;
    post
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one_posterior(a: &[f64], r: &[f64]) -> CpPosterior {
        let m = a.len();
        let k = r.len();
        CpPosterior {
            a1_mean: DMatrix::from_column_slice(m, 1, a),
            a2_mean: DMatrix::from_column_slice(m, 1, a),
            rs_mean: DMatrix::from_column_slice(k, 1, r),
            a1_cov: vec![DMatrix::from_element(1, 1, 1e-3); m],
            a2_cov: vec![DMatrix::from_element(1, 1, 1e-3); m],
            rs_cov: vec![DMatrix::from_element(1, 1, 1e-3); k],
            lambda_shape: DVector::from_element(1, 1.0),
            lambda_rate: DVector::from_element(1, 1.0),
            beta_shape: 1.0,
            beta_rate: 1.0,
        }
    }

    #[test]
    fn hyperparam_validation() {
        assert!(BcpfHyperparams::default().validate().is_ok());
        let bad = [
            BcpfHyperparams { c0: 0.0, ..Default::default() },
            BcpfHyperparams { b0: -1.0, ..Default::default() },
            BcpfHyperparams { d_init: Some(0), ..Default::default() },
            BcpfHyperparams { prune_ratio: 1.0, ..Default::default() },
            BcpfHyperparams { elbo_rel_tol: 0.0, ..Default::default() },
        ];
        for h in bad {
            assert!(matches!(h.validate(), Err(OmaError::Usage(_))), "{h:?}");
        }
    }

    #[test]
    fn default_initial_rank_is_capacity() {
        let h = BcpfHyperparams::default();
        assert_eq!(h.initial_rank(6), 15);
        assert_eq!(h.initial_rank(10), 41);
        assert_eq!(BcpfHyperparams { d_init: Some(3), ..h }.initial_rank(10), 3);
    }

    #[test]
    fn init_zero_tensor_is_seeded_noise() {
        let t = Tensor3::zeros((3, 3, 4));
        let h = BcpfHyperparams { d_init: Some(2), ..Default::default() };
        let p = init_posterior(&t, &h, 7).unwrap();
        let q = init_posterior(&t, &h, 7).unwrap();
        assert_eq!(p, q);
        assert!(p.a1_mean.norm() > 0.0 && p.rs_mean.norm() > 0.0);
        let other = init_posterior(&t, &h, 8).unwrap();
        assert_ne!(p.a1_mean, other.a1_mean);
        assert_eq!(p.lambda_shape[0], h.c0);
        assert_eq!(p.expected_beta(), h.beta_init[0]);
        assert!(p.a1_cov.iter().all(|v| *v == DMatrix::identity(2, 2)));
    }

    #[test]
    fn init_rejects_non_square_slices() {
        let t = Tensor3::zeros((3, 2, 4));
        assert!(init_posterior(&t, &BcpfHyperparams::default(), 0).is_err());
    }

    #[test]
    fn huge_precision_shrinks_means() {
        let a = [1.0, 2.0];
        let r = [1.0, 0.5, -0.5];
        let t = Tensor3::from_fn((2, 2, 3), |i, j, k| a[i] * a[j] * r[k]).unwrap();
        let mut post = rank_one_posterior(&a, &r);
        post.lambda_rate[0] = 1.0 / 1e12;
        let next = update_factor_mode1(&t, &post).unwrap();
        assert!(next.a1_mean.norm() < post.a1_mean.norm());
        assert!(next.a1_mean.norm() < 1e-6);
    }

    #[test]
    fn update_touches_only_its_block() {
        let a = [1.0, 2.0];
        let r = [1.0, 0.5, -0.5];
        let t = Tensor3::from_fn((2, 2, 3), |i, j, k| a[i] * a[j] * r[k]).unwrap();
        let post = rank_one_posterior(&a, &r);
        let next = update_factor_mode2(&t, &post).unwrap();
        assert_eq!(next.a1_mean, post.a1_mean);
        assert_eq!(next.rs_mean, post.rs_mean);
        assert_eq!(next.rs_cov, post.rs_cov);
        assert_eq!(next.lambda_rate, post.lambda_rate);
        assert_ne!(next.a2_mean, post.a2_mean);
    }

    #[test]
    fn lambda_symmetry_and_monotonicity() {
        let h = BcpfHyperparams::default();
        let d = 3;
        let zero = |rows| DMatrix::zeros(rows, d);
        let eye = DMatrix::identity(d, d);
        let post = CpPosterior {
            a1_mean: zero(2),
            a2_mean: zero(2),
            rs_mean: zero(4),
            a1_cov: vec![eye.clone(); 2],
            a2_cov: vec![eye.clone(); 2],
            rs_cov: vec![eye; 4],
            lambda_shape: DVector::from_element(d, 1.0),
            lambda_rate: DVector::from_element(d, 1.0),
            beta_shape: 1.0,
            beta_rate: 1.0,
        };
        let next = update_lambda(&post, &h).unwrap();
        let e = next.expected_lambda();
        assert!(e.iter().all(|&v| v == e[0]));

        let mut bigger = post.clone();
        bigger.a1_mean.column_mut(1).fill(1.0);
        let base = update_lambda(&bigger, &h).unwrap();
        let mut doubled = bigger.clone();
        doubled.a1_mean.column_mut(1).scale_mut(2.0);
        let after = update_lambda(&doubled, &h).unwrap();
        assert!(after.lambda_rate[1] > base.lambda_rate[1]);
        assert!(after.expected_lambda()[1] < base.expected_lambda()[1]);
    }

    #[test]
    fn lambda_hand_evaluation() {
        let h = BcpfHyperparams::default();
        let s = 0.5f64.sqrt();
        let mut post = rank_one_posterior(&[s, s], &[1.0, 0.0, 0.0]);
        for f in Factor::ALL {
            post.parts_mut(f).1.iter_mut().for_each(|v| v.fill(0.0));
        }
        let next = update_lambda(&post, &h).unwrap();
        assert!((next.lambda_shape[0] - (1e-6 + 3.5)).abs() < 1e-15);
        assert!((next.lambda_rate[0] - (1e-6 + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn beta_perfect_fit_and_zero_factors() {
        let h = BcpfHyperparams::default();
        let a = [1.0, -2.0];
        let r = [0.5, 0.25];
        let t = Tensor3::from_fn((2, 2, 2), |i, j, k| a[i] * a[j] * r[k]).unwrap();
        let mut post = rank_one_posterior(&a, &r);
        for f in Factor::ALL {
            post.parts_mut(f).1.iter_mut().for_each(|v| v.fill(0.0));
        }
        assert!(expected_residual(&t, &post).unwrap().abs() < 1e-12);
        let next = update_beta(&t, &post, &h).unwrap();
        assert!((next.beta_rate - h.b0).abs() < 1e-12);
        assert_eq!(next.beta_shape, h.a0 + 4.0);

        let mut zeroed = post.clone();
        zeroed.a1_mean.fill(0.0);
        let e = expected_residual(&t, &zeroed).unwrap();
        assert!((e - t.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn prune_equal_powers_keeps_everything() {
        let h = BcpfHyperparams::default();
        let d = 3;
        let ones = |rows| DMatrix::from_element(rows, d, 1.0);
        let eye = DMatrix::identity(d, d);
        let post = CpPosterior {
            a1_mean: ones(2),
            a2_mean: ones(2),
            rs_mean: ones(3),
            a1_cov: vec![eye.clone(); 2],
            a2_cov: vec![eye.clone(); 2],
            rs_cov: vec![eye; 3],
            lambda_shape: DVector::from_element(d, 1.0),
            lambda_rate: DVector::from_element(d, 1.0),
            beta_shape: 1.0,
            beta_rate: 1.0,
        };
        assert_eq!(prune_columns(&post, &h), post);
    }

    #[test]
    fn prune_removes_dead_column_consistently() {
        let h = BcpfHyperparams::default();
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand = |rows: usize| DMatrix::from_fn(rows, d, |_, _| StandardNormal.sample(&mut rng));
        let mut post = CpPosterior {
            a1_mean: rand(3),
            a2_mean: rand(3),
            rs_mean: rand(5),
            a1_cov: vec![DMatrix::identity(d, d) * 0.1; 3],
            a2_cov: vec![DMatrix::identity(d, d) * 0.1; 3],
            rs_cov: vec![DMatrix::identity(d, d) * 0.1; 5],
            lambda_shape: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            lambda_rate: DVector::from_vec(vec![4.0, 5.0, 6.0]),
            beta_shape: 1.0,
            beta_rate: 1.0,
        };
        for f in Factor::ALL {
            let (m, c) = post.parts_mut(f);
            m.column_mut(1).fill(0.0);
            for v in c.iter_mut() {
                v.row_mut(1).fill(0.0);
                v.column_mut(1).fill(0.0);
            }
        }
        let pruned = prune_columns(&post, &h);
        assert_eq!(pruned.rank(), 2);
        assert_eq!(pruned.lambda_rate.as_slice(), &[4.0, 6.0]);
        assert_eq!(pruned.a1_mean.column(1), post.a1_mean.column(2));
        assert!(pruned.a1_cov.iter().chain(&pruned.rs_cov).all(|v| v.shape() == (2, 2)));
        pruned.check().unwrap();
    }

    #[test]
    fn prune_never_empties() {
        let h = BcpfHyperparams::default();
        let post = rank_one_posterior(&[0.0, 0.0], &[0.0]);
        assert_eq!(prune_columns(&post, &h).rank(), 1);
    }

    #[test]
    fn rescale_preserves_reconstruction_shape() {
        let post = rank_one_posterior(&[1.0, 2.0], &[3.0, -1.0]);
        let before = post.mean_reconstruction();
        let after = rescale(post, 8.0).mean_reconstruction();
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a * 8.0 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rebalancing_keeps_reconstruction_and_raises_bound() {
        let t = Tensor3::from_fn((3, 3, 5), |i, j, k| ((i + 1) * (j + 2)) as f64 * (k as f64 * 0.4).cos()).unwrap();
        let mut post = rank_one_posterior(&[1.0, 2.0, 3.0], &[1.0, 0.9, 0.5, -0.2, 0.1]);
        post.a1_mean *= 0.01;
        post.rs_mean *= 100.0;
        let h = BcpfHyperparams::default();
        let before = elbo(&t, &post, &h).unwrap();
        let rec = post.mean_reconstruction();
        rebalance_columns(&mut post);
        for (a, b) in rec.data().iter().zip(post.mean_reconstruction().data()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        assert!(elbo(&t, &post, &h).unwrap() > before);
        // already balanced: a second pass is a fixed point
        let again = {
            let mut p = post.clone();
            rebalance_columns(&mut p);
            p
        };
        assert!((&again.a1_mean - &post.a1_mean).norm() < 1e-9 * post.a1_mean.norm());
    }
}
