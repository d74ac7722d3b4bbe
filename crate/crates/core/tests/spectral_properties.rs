use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use specreg_core::linalg::{EigenSolver, Matrix};
use specreg_core::spectral::{
    measure_alpha, spectral_loss, spectral_loss_and_grad, spectrum, SpectralLossConfig, SpectrumPath,
};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Modified Gram-Schmidt on the columns; optionally removes the all-ones direction first.
fn orthonormal_columns(mut m: Matrix<f64>, centered: bool) -> Matrix<f64> {
    let (rows, cols) = m.shape();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    if centered {
        basis.push(vec![1.0 / (rows as f64).sqrt(); rows]);
    }
    for c in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|r| m[(r, c)]).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        for r in 0..rows {
            m[(r, c)] = v[r];
        }
        basis.push(v);
    }
    m
}

/// Activations whose centered covariance has eigenvalues exactly `i^-alpha`.
fn planted(rng: &mut ChaCha8Rng, samples: usize, features: usize, alpha: f64) -> Matrix<f64> {
    let u = orthonormal_columns(gaussian(rng, samples, features), true);
    let v = orthonormal_columns(gaussian(rng, features, features), false);
    let scales: Vec<f64> = (1..=features).map(|i| (i as f64).powf(-alpha / 2.0)).collect();
    let mut a = u.matmul(&Matrix::from_diag(&scales)).unwrap().matmul_nt(&v).unwrap();
    let offset: Vec<f64> = (0..features).map(|_| rng.random_range(-3.0..3.0)).collect();
    a.subtract_row_vector(&offset);
    a
}

fn decaying(rng: &mut ChaCha8Rng, samples: usize, features: usize) -> Matrix<f64> {
    Matrix::from_fn(samples, features, |_, c| rng.sample::<f64, _>(StandardNormal) * 0.8f64.powi(c as i32))
}

fn config(target: f64, beta: f64) -> SpectralLossConfig<f64> {
    SpectralLossConfig { solver: EigenSolver::Jacobi, ..SpectralLossConfig::new(target, beta) }
}

#[test]
fn planted_exponents_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &alpha in &[0.5, 1.0, 2.0, 3.0, 5.0] {
        let a = planted(&mut rng, 64, 24, alpha);
        for solver in [EigenSolver::Jacobi, EigenSolver::Tridiagonal] {
            let cfg = SpectralLossConfig { solver, ..config(1.0, 0.0) };
            let fit = measure_alpha(&a, &cfg).unwrap();
            assert!((fit.alpha - alpha).abs() < 1e-10, "{alpha}: {}", fit.alpha);
            assert_eq!(fit.window.first, 1);
            assert_eq!(fit.window.last, 23);
        }
    }
}

#[test]
fn white_noise_is_flatter_than_decaying() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let white = gaussian(&mut rng, 200, 40);
    let decay = decaying(&mut rng, 200, 40);
    let cfg = config(1.0, 0.0);
    assert!(measure_alpha(&white, &cfg).unwrap().alpha < measure_alpha(&decay, &cfg).unwrap().alpha);
}

#[test]
fn loss_is_zero_at_target_and_linear_away_from_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = planted(&mut rng, 40, 12, 2.0);
    let (at, _) = spectral_loss(&a, &config(2.0, 1.0)).unwrap();
    assert!(at.abs() < 1e-10);
    let (away, _) = spectral_loss(&a, &config(3.5, 0.5)).unwrap();
    assert!((away - 0.75).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_and_feature_paths_agree(seed in any::<u64>(), n in 3usize..20, f in 3usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, n, f);
        let g = spectrum(&a, SpectrumPath::Gram, EigenSolver::Jacobi).unwrap();
        let c = spectrum(&a, SpectrumPath::Feature, EigenSolver::Jacobi).unwrap();
        prop_assert_eq!(g.len(), c.len());
        let top = c.lambdas[0];
        for (x, y) in g.lambdas.iter().zip(&c.lambdas) {
            prop_assert!((x - y).abs() <= 1e-8 * top.max(1.0));
        }
    }

    #[test]
    fn alpha_is_invariant_to_scale_shift_and_rotation(seed in any::<u64>(), c in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = decaying(&mut rng, 30, 10);
        let cfg = config(1.0, 0.0);
        let base = measure_alpha(&a, &cfg).unwrap().alpha;
        let q = orthonormal_columns(gaussian(&mut rng, 10, 10), false);
        let mut moved = a.scaled(c).matmul(&q).unwrap();
        moved.subtract_row_vector(&[1.5; 10]);
        let other = measure_alpha(&moved, &cfg).unwrap().alpha;
        prop_assert!((base - other).abs() < 1e-8, "{} vs {}", base, other);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 8usize..40, f in 4usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = decaying(&mut rng, n, f);
        let cfg = config(10.0, 0.7);
        let eval = spectral_loss_and_grad(&a, &cfg).unwrap();
        prop_assume!(!eval.fit.near_degenerate);
        let h = 1e-6;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for r in 0..n {
            for c in 0..f {
                let mut plus = a.clone();
                plus[(r, c)] += h;
                let mut minus = a.clone();
                minus[(r, c)] -= h;
                let fd = (spectral_loss(&plus, &cfg).unwrap().0 - spectral_loss(&minus, &cfg).unwrap().0) / (2.0 * h);
                worst = worst.max((fd - eval.grad[(r, c)]).abs());
                scale = scale.max(fd.abs());
            }
        }
        prop_assert!(worst <= 1e-4 * scale.max(1e-12), "{} vs {}", worst, scale);
    }
}
