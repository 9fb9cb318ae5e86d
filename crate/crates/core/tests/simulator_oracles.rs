use nalgebra::{DMatrix, DVector};
use oma_core::simulator::{
    analytic_modes, benchmark_nonuniform, benchmark_uniform, discretize, simulate, NonuniformProfile, SimConfig,
    BENCHMARK_ALPHA,
};
use rustfft::{num_complex::Complex, FftPlanner};

const TABLE_FREQS: [f64; 10] = [1.00, 2.98, 4.89, 6.69, 8.34, 9.81, 11.1, 12.1, 12.8, 13.2];
const TABLE_DAMPING_PCT: [f64; 10] = [5.00, 1.68, 1.02, 0.750, 0.600, 0.510, 0.450, 0.410, 0.390, 0.380];

#[test]
fn uniform_chain_matches_reference_table() {
    let modes = analytic_modes(&benchmark_uniform()).unwrap();
    for i in 0..10 {
        let rel = (modes.freqs_hz[i] - TABLE_FREQS[i]).abs() / TABLE_FREQS[i];
        assert!(rel < 0.005, "mode {} frequency {} vs {}", i + 1, modes.freqs_hz[i], TABLE_FREQS[i]);
        let pp = (100.0 * modes.damping_ratios[i] - TABLE_DAMPING_PCT[i]).abs();
        assert!(pp < 0.02, "mode {} damping {}%", i + 1, 100.0 * modes.damping_ratios[i]);
    }
}

#[test]
fn modes_solve_the_generalized_eigenproblem_and_are_mass_orthogonal() {
    for sys in [
        benchmark_uniform(),
        benchmark_nonuniform(&NonuniformProfile::LinearRamp).unwrap(),
        benchmark_nonuniform(&NonuniformProfile::Random { seed: 4 }).unwrap(),
    ] {
        let modes = analytic_modes(&sys).unwrap();
        let (m, k) = (sys.mass_matrix(), sys.stiffness_matrix());
        let phi = modes.shape_matrix();
        for i in 0..10 {
            let w2 = (2.0 * std::f64::consts::PI * modes.freqs_hz[i]).powi(2);
            let v = phi.column(i);
            let resid = (&k * v - &m * v * w2).norm() / (&k * v).norm();
            assert!(resid < 1e-10, "mode {i} residual {resid}");
            // ζ ω is the same for every mode under mass-proportional damping
            let zw = modes.damping_ratios[i] * w2.sqrt();
            assert!((zw - BENCHMARK_ALPHA / 2.0).abs() < 1e-12);
        }
        let gram = phi.transpose() * &m * &phi;
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    let scale = (gram[(i, i)] * gram[(j, j)]).sqrt();
                    assert!(gram[(i, j)].abs() < 1e-10 * scale, "modes {i},{j} not M-orthogonal");
                }
            }
        }
        assert!(modes.freqs_hz.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn free_response_follows_modal_superposition() {
    let sys = benchmark_uniform();
    let modes = analytic_modes(&sys).unwrap();
    let dt = 0.01;
    let (ad, _) = discretize(&sys, dt);
    for i in [0, 4, 9] {
        let phi = DVector::from_column_slice(&modes.shapes[i]);
        let mut z = DVector::zeros(20);
        z.rows_mut(0, 10).copy_from(&phi);
        let w = 2.0 * std::f64::consts::PI * modes.freqs_hz[i];
        let zeta = modes.damping_ratios[i];
        let wd = w * (1.0 - zeta * zeta).sqrt();
        for n in 1..=500 {
            z = &ad * &z;
            let t = n as f64 * dt;
            let q = (-zeta * w * t).exp() * ((wd * t).cos() + zeta * w / wd * (wd * t).sin());
            let err = (z.rows(0, 10) - &phi * q).norm();
            assert!(err < 1e-9, "mode {i} step {n}: error {err}");
        }
    }
}

#[test]
fn unforced_energy_never_increases() {
    let sys = benchmark_nonuniform(&NonuniformProfile::Random { seed: 1 }).unwrap();
    let (m, k) = (sys.mass_matrix(), sys.stiffness_matrix());
    let (ad, _) = discretize(&sys, 0.01);
    let mut z = DVector::from_fn(20, |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
    let energy = |z: &DVector<f64>| {
        let (x, v) = (z.rows(0, 10), z.rows(10, 10));
        0.5 * (v.transpose() * &m * v)[0] + 0.5 * (x.transpose() * &k * x)[0]
    };
    let mut prev = energy(&z);
    for _ in 0..2000 {
        z = &ad * &z;
        let e = energy(&z);
        assert!(e <= prev * (1.0 + 1e-12));
        prev = e;
    }
    assert!(prev < 1e-3 * energy(&DVector::from_fn(20, |i, _| ((i * 7 + 3) % 5) as f64 - 2.0)));
}

#[test]
fn held_force_matches_integrated_input_matrix() {
    // B_d = A⁻¹ (A_d - I) B for the continuous generator A
    let sys = benchmark_uniform();
    let n = 10;
    let dt = 0.01;
    let (ad, bd) = discretize(&sys, dt);
    let (m, k) = (sys.mass_matrix(), sys.stiffness_matrix());
    let m_inv = m.clone().try_inverse().unwrap();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    a.view_mut((n, 0), (n, n)).copy_from(&(-&m_inv * &k));
    a.view_mut((n, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * -sys.damping_alpha));
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).copy_from(&m_inv);
    let want = a.lu().solve(&((&ad - DMatrix::identity(2 * n, 2 * n)) * b)).unwrap();
    assert!((&bd - &want).norm() < 1e-9 * want.norm());
}

/// Stationary state covariance of `z' = A z + B f`, `f ~ N(0, s² I)`, by doubling.
fn stationary_covariance(ad: &DMatrix<f64>, bd: &DMatrix<f64>, force_std: f64) -> DMatrix<f64> {
    let mut p = bd * bd.transpose() * force_std.powi(2);
    let mut a = ad.clone();
    for _ in 0..40 {
        p = &p + &a * &p * a.transpose();
        a = &a * &a;
    }
    p
}

#[test]
fn long_record_variance_matches_stationary_covariance() {
    let sys = benchmark_uniform();
    let cfg = SimConfig {
        duration_s: 1800.0,
        seed: 21,
        ..SimConfig::default()
    };
    let x = simulate(&sys, &cfg).unwrap();
    let (ad, bd) = discretize(&sys, 0.01);
    let p = stationary_covariance(&ad, &bd, cfg.force_std);
    let skip = 6000;
    for ch in [0, 4, 9] {
        let tail = &x.channel(ch)[skip..];
        let var = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
        let ratio = var / p[(ch, ch)];
        assert!((0.8..1.25).contains(&ratio), "channel {ch}: variance ratio {ratio}");
        let half = tail.len() / 2;
        let v1 = tail[..half].iter().map(|v| v * v).sum::<f64>();
        let v2 = tail[half..].iter().map(|v| v * v).sum::<f64>();
        assert!((0.6..1.67).contains(&(v1 / v2)), "channel {ch}: halves {}", v1 / v2);
    }
}

fn welch_psd(x: &[f64], seg: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let hann: Vec<f64> = (0..seg)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / seg as f64).cos())
        .collect();
    let mut psd = vec![0.0; seg / 2 + 1];
    let mut start = 0;
    while start + seg <= x.len() {
        let mut buf: Vec<Complex<f64>> = (0..seg).map(|n| Complex::new(x[start + n] * hann[n], 0.0)).collect();
        fft.process(&mut buf);
        for (p, c) in psd.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        start += seg / 2;
    }
    psd
}

#[test]
fn response_spectrum_peaks_at_the_first_seven_modes() {
    let sys = benchmark_uniform();
    let modes = analytic_modes(&sys).unwrap();
    let x = simulate(&sys, &SimConfig { duration_s: 600.0, seed: 8, ..SimConfig::default() }).unwrap();
    let seg = 4096;
    let mut total = vec![0.0; seg / 2 + 1];
    for ch in x.channels() {
        for (t, p) in total.iter_mut().zip(welch_psd(ch, seg)) {
            *t += p;
        }
    }
    let df = 100.0 / seg as f64;
    for i in 0..7 {
        let f = modes.freqs_hz[i];
        let lo = ((f - 0.4) / df).floor() as usize;
        let hi = ((f + 0.4) / df).ceil() as usize;
        let peak = (lo..=hi).max_by(|&a, &b| total[a].total_cmp(&total[b])).unwrap();
        let f_peak = peak as f64 * df;
        assert!((f_peak - f).abs() <= 0.1, "mode {}: peak {f_peak} Hz vs {f} Hz", i + 1);
        assert!(peak > lo && peak < hi, "mode {} peak sits on the search edge", i + 1);
    }
}
