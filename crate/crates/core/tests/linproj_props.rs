use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rtbust_core::linproj::{pca_fit, tica_fit, tica_solve, LinearProjector};

fn random_rows(seed: u64, n: usize, l: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..l).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn orthonormality_residual(p: &LinearProjector) -> f64 {
    let gram = p.basis.transpose() * &p.basis;
    (gram - DMatrix::identity(p.dim(), p.dim())).abs().max()
}

fn reconstruct(p: &LinearProjector, x: &[f64]) -> Vec<f64> {
    let z = p.transform(x);
    (0..x.len())
        .map(|i| p.mean[i] + (0..p.dim()).map(|k| p.basis[(i, k)] * z[k]).sum::<f64>())
        .collect()
}

#[test]
fn full_rank_pca_reconstructs_ten_by_three() {
    let rows = random_rows(3, 10, 3);
    let p = pca_fit(&rows, 3).unwrap();
    assert!(orthonormality_residual(&p) <= 1e-8);
    for r in &rows {
        let back = reconstruct(&p, r);
        let err = r.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "reconstruction error {err}");
    }
    let ratios = p.explained_variance_ratio();
    assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn pca_eigenvalues_match_covariance_oracle() {
    // eigenvalue k is the sample variance of the training projections on component k
    let rows = random_rows(4, 40, 5);
    let p = pca_fit(&rows, 5).unwrap();
    for k in 0..5 {
        let z: Vec<f64> = rows.iter().map(|r| p.transform(r)[k]).collect();
        let var = z.iter().map(|v| v * v).sum::<f64>() / (z.len() - 1) as f64;
        let rel = (var - p.eigenvalues[k]).abs() / p.eigenvalues[k].max(1e-12);
        assert!(rel < 1e-6 || (var - p.eigenvalues[k]).abs() < 1e-9, "k={k} var={var} eig={}", p.eigenvalues[k]);
    }
}

/// Frames whose coordinate `slow` is a slow sinusoid and the rest white noise.
fn planted(seed: u64, n: usize, l: usize, slow: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|t| {
            (0..l)
                .map(|j| {
                    if j == slow {
                        (t as f64 * 2.0 * std::f64::consts::PI / 200.0).sin()
                    } else {
                        noise.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn tica_recovers_planted_slow_component() {
    for seed in 0..5 {
        let slow = seed as usize % 6;
        let rows = planted(seed, 2000, 6, slow);
        let p = tica_fit(&rows, 2, 1).unwrap();
        let v = p.basis.column(0);
        let cos = v[slow].abs() / v.norm();
        assert!(cos >= 0.9, "seed {seed}: |cos| = {cos}");
        assert!(p.eigenvalues[0] > 0.9);
        assert!(p.eigenvalues[1] < 0.2);
    }
}

#[test]
fn tica_two_by_two_matches_closed_form() {
    let c0 = DMatrix::identity(2, 2);
    let clag = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.1]);
    let (vals, basis) = tica_solve(&c0, &clag, 2).unwrap();
    // regularized C_0 = (1 + eps) I scales each eigenvalue by 1 / (1 + eps)
    assert!((vals[0] - 0.9).abs() < 1e-5 && (vals[1] - 0.1).abs() < 1e-5);
    assert!((basis[(0, 0)].abs() - 1.0).abs() < 1e-5 && basis[(1, 0)].abs() < 1e-9);
}

#[test]
fn tica_projection_autocorrelation_follows_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 1.0).unwrap();
    // three AR(1) channels with distinct memory, mixed linearly
    let phis = [0.95, 0.6, 0.1];
    let mut state = [0.0; 3];
    let mix = [[1.0, 0.4, -0.2], [0.3, 1.0, 0.5], [-0.1, 0.2, 1.0]];
    let rows: Vec<Vec<f64>> = (0..5000)
        .map(|_| {
            for (s, phi) in state.iter_mut().zip(phis) {
                *s = phi * *s + noise.sample(&mut rng);
            }
            (0..3).map(|i| (0..3).map(|j| mix[i][j] * state[j]).sum()).collect()
        })
        .collect();
    let p = tica_fit(&rows, 3, 1).unwrap();
    let autocorr: Vec<f64> = (0..3)
        .map(|k| {
            let z: Vec<f64> = rows.iter().map(|r| p.transform(r)[k]).collect();
            let num: f64 = z.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (z.len() - 1) as f64;
            let den: f64 = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            num / den
        })
        .collect();
    assert!(autocorr.windows(2).all(|w| w[0] >= w[1]), "{autocorr:?}");
    for (a, e) in autocorr.iter().zip(&p.eigenvalues) {
        assert!((a - e).abs() < 0.02, "autocorr {a} eigenvalue {e}");
    }
}

proptest! {
    #[test]
    fn pca_basis_is_orthonormal_and_sorted(seed in any::<u64>(), n in 4usize..40, l in 2usize..10, d in 1usize..10) {
        let d = d.min(l).min(n);
        let p = pca_fit(&random_rows(seed, n, l), d).unwrap();
        prop_assert!(orthonormality_residual(&p) <= 1e-8);
        prop_assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.explained_variance_ratio().iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn pca_mean_maps_to_origin(seed in any::<u64>(), n in 2usize..30, l in 1usize..8) {
        let p = pca_fit(&random_rows(seed, n, l), l.min(n)).unwrap();
        prop_assert!(p.transform(&p.mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tica_eigenvalues_are_non_increasing(seed in any::<u64>(), n in 10usize..60, l in 2usize..8, lag in 1usize..4) {
        prop_assume!(lag < l);
        let p = tica_fit(&random_rows(seed, n, l), l, lag).unwrap();
        prop_assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.eigenvalues.iter().all(|v| v.is_finite()));
    }
}
