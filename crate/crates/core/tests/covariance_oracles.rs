use nalgebra::DMatrix;
use oma_core::covariance::{build_covariance_tensor, lagged_covariance, CovarianceTensorSpec, SignalBlock};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn white(m: usize, n: usize, seed: u64) -> SignalBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chans = (0..m)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    SignalBlock::new(0.01, chans).unwrap()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn iid_noise_covariance_is_identity_at_zero_lag_and_small_elsewhere() {
    let x = white(4, 200_000, 3);
    let r0 = lagged_covariance(&x, 0, true).unwrap();
    assert!(max_abs(&(r0 - DMatrix::identity(4, 4))) < 0.02);
    for tau in [1, 5, 50] {
        assert!(max_abs(&lagged_covariance(&x, tau, true).unwrap()) < 0.02, "lag {tau}");
    }
}

#[test]
fn mixing_identity_holds_for_every_lag() {
    // x = A s  =>  R_x(τ) = A R_s(τ) Aᵀ, exactly, for the sample estimator
    let s = white(3, 2000, 9);
    let a = DMatrix::from_row_slice(5, 3, &[1.0, 0.5, -0.2, 0.3, -1.0, 0.4, 0.0, 0.7, 1.1, -0.6, 0.2, 0.9, 0.8, 0.8, 0.1]);
    let x = SignalBlock::from_matrix(0.01, &(&a * s.to_matrix())).unwrap();
    for tau in [0, 1, 7, 40] {
        for demean in [false, true] {
            let rx = lagged_covariance(&x, tau, demean).unwrap();
            let rs = lagged_covariance(&s, tau, demean).unwrap();
            let want = &a * rs * a.transpose();
            assert!(max_abs(&(rx - &want)) <= 1e-12 * max_abs(&want), "lag {tau} demean {demean}");
        }
    }
}

#[test]
fn single_decaying_mode_gives_rank_one_slices() {
    // a single mode seen through a fixed shape yields R(τ) = φ φᵀ ρ(τ)
    let n = 20_000;
    let dt: f64 = 0.01;
    let (sigma, omega): (f64, f64) = (0.3, 2.0 * std::f64::consts::PI * 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (c1, c2) = (2.0 * (-sigma * dt).exp() * (omega * dt).cos(), -(-2.0 * sigma * dt).exp());
    let mut q = vec![0.0; n];
    for t in 2..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        q[t] = c1 * q[t - 1] + c2 * q[t - 2] + e;
    }
    let phi = [1.0, -0.5, 0.25];
    let chans = phi.iter().map(|p| q.iter().map(|v| p * v).collect()).collect();
    let x = SignalBlock::new(dt, chans).unwrap();
    let t = build_covariance_tensor(&x, &CovarianceTensorSpec::with_lags((1..=30).collect())).unwrap();
    for k in 0..30 {
        let sv = t.slice(k).singular_values();
        let top = sv.max();
        assert!(top > 0.0);
        let mut rest: Vec<f64> = sv.iter().copied().collect();
        rest.sort_by(|a, b| b.total_cmp(a));
        assert!(rest[1] <= 1e-10 * top, "slice {k} has second singular value {}", rest[1] / top);
    }
}

#[test]
fn tensor_slices_are_the_symmetrized_lagged_covariances() {
    let x = white(3, 500, 5);
    let spec = CovarianceTensorSpec::with_lags(vec![1, 2, 5, 9]);
    let t = build_covariance_tensor(&x, &spec).unwrap();
    assert_eq!(t.dims(), (3, 3, 4));
    for (k, &tau) in spec.lags.iter().enumerate() {
        let r = lagged_covariance(&x, tau, true).unwrap();
        let sym = oma_core::covariance::symmetrized(&r);
        assert_eq!(t.slice(k), sym, "slice {k}");
    }
    let raw = CovarianceTensorSpec {
        symmetrize: false,
        ..spec.clone()
    };
    let t = build_covariance_tensor(&x, &raw).unwrap();
    for (k, &tau) in spec.lags.iter().enumerate() {
        assert_eq!(t.slice(k), lagged_covariance(&x, tau, true).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_lag_covariance_is_symmetric_psd(
        data in (1usize..5, 3usize..40).prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), m)),
        demean in any::<bool>(),
    ) {
        let x = SignalBlock::new(1.0, data).unwrap();
        let r = lagged_covariance(&x, 0, demean).unwrap();
        prop_assert!(max_abs(&(&r - r.transpose())) <= 1e-12 * max_abs(&r).max(1.0));
        let min_eig = r.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10 * max_abs(&r).max(1.0));
    }

    #[test]
    fn symmetrized_tensor_slices_are_bit_symmetric(seed in any::<u64>(), m in 1usize..5) {
        let x = white(m, 64, seed);
        let t = build_covariance_tensor(&x, &CovarianceTensorSpec::with_lags(vec![1, 3, 4])).unwrap();
        for k in 0..3 {
            let s = t.slice(k);
            prop_assert_eq!(&s, &s.transpose());
        }
    }
}
