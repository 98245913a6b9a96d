//! PCA latent initialization and data-driven hyperparameter defaults.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::kernel::{Hyperparams, LatentConfig};
use crate::linalg::column_mean;

/// Initial latent variance per dimension for the stochastic variant.
pub const INIT_LATENT_VAR: f64 = 0.1;

/// Top-`d` principal-component scores of the centered data, scaled to unit variance.
///
/// Each loading vector is signed so that its largest-magnitude entry is positive.
/// The seed is accepted for interface symmetry; the result depends on the data alone.
pub fn init_latents(z: &DMatrix<f64>, d: usize, _seed: u64) -> Result<LatentConfig> {
    let (dd, n) = z.shape();
    if d == 0 || n < 2 || d > dd.min(n - 1) {
        return invalid(format!("latent dimension {d} out of range for D={dd}, N={n}"));
    }
    let mean = column_mean(z);
    let mut centered = z.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let scatter = &centered * centered.transpose();
    let eig = SymmetricEigen::new((&scatter + scatter.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..dd).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut scores = DMatrix::zeros(d, n);
    for (row, &k) in order.iter().take(d).enumerate() {
        let mut u = eig.eigenvectors.column(k).into_owned();
        let pivot = u.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            u.neg_mut();
        }
        let s = u.tr_mul(&centered);
        let var = s.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if !(var > 1e-300) || eig.eigenvalues[k] <= 1e-12 * eig.eigenvalues[order[0]] {
            return invalid(format!("data has fewer than {d} non-degenerate principal directions"));
        }
        scores.row_mut(row).copy_from(&(s / var.sqrt()));
    }
    LatentConfig::new(scores)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Lengthscales from median pairwise latent distances, signal from the data variance.
pub fn init_hyperparams(z: &DMatrix<f64>, x: &LatentConfig, stochastic: bool) -> Result<Hyperparams> {
    let n = z.ncols();
    if x.len() != n || n < 2 {
        return invalid("data and latents must have the same number (at least 2) of points");
    }
    let coords = x.coords();
    let mut lengthscales_sq = Vec::with_capacity(x.dim());
    for l in 0..x.dim() {
        let row = coords.row(l);
        let mut dists: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (row[i] - row[j]).abs())
            .collect();
        let med = median(&mut dists);
        if !(med > 0.0) {
            return invalid(format!("median latent distance along dimension {l} is zero"));
        }
        lengthscales_sq.push(med * med);
    }
    let mean = column_mean(z);
    let signal_var = z
        .column_iter()
        .map(|c| (c - &mean).norm_squared())
        .sum::<f64>()
        / (n * z.nrows()) as f64;
    if !(signal_var > 0.0) || !signal_var.is_finite() {
        return invalid("data has zero variance");
    }
    let latent_var = vec![if stochastic { INIT_LATENT_VAR } else { 0.0 }; x.dim()];
    Hyperparams::new(lengthscales_sq, signal_var, 0.01 * signal_var, latent_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, dd: usize, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(dd, dd, |_, _| rng.random_range(-1.0..1.0));
        mix * DMatrix::from_fn(dd, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn recovers_embedded_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DMatrix::from_fn(2, 30, |r, _| rng.random_range(-1.0..1.0) * if r == 0 { 3.0 } else { 1.0 });
        let mut z = DMatrix::zeros(4, 30);
        z.rows_mut(0, 2).copy_from(&t);
        let x = init_latents(&z, 2, 0).unwrap();
        // the scores span the same plane as the centered intrinsic coordinates
        let mean = column_mean(&t);
        let tc = DMatrix::from_fn(2, 30, |r, c| t[(r, c)] - mean[r]);
        let proj = x.coords() * x.coords().transpose();
        let fit = &tc * x.coords().transpose() * proj.try_inverse().unwrap() * x.coords();
        assert!((fit - &tc).amax() < 1e-10);
    }

    #[test]
    fn scores_have_unit_variance_and_zero_mean() {
        let z = random_data(1, 5, 40);
        let x = init_latents(&z, 3, 0).unwrap();
        for row in x.coords().row_iter() {
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_columns_give_duplicated_latents() {
        let mut z = random_data(2, 3, 10);
        let c = z.column(4).into_owned();
        z.set_column(7, &c);
        let x = init_latents(&z, 2, 0).unwrap();
        assert_eq!(x.point(4), x.point(7));
    }

    #[test]
    fn reconstruction_error_matches_svd() {
        let z = random_data(5, 6, 25);
        let d = 2;
        let x = init_latents(&z, d, 0).unwrap();
        let mean = column_mean(&z);
        let zc = DMatrix::from_fn(6, 25, |r, c| z[(r, c)] - mean[r]);
        // least-squares reconstruction of the data from the scores
        let s = x.coords();
        let b = &zc * s.transpose() * (s * s.transpose()).try_inverse().unwrap();
        let err = (&zc - b * s).norm_squared();
        let sv = zc.svd(false, false).singular_values;
        let mut sq: Vec<f64> = sv.iter().map(|v| v * v).collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        let want: f64 = sq[d..].iter().sum();
        assert!((err - want).abs() <= 1e-8 * want.max(1.0), "{err} vs {want}");
    }

    #[test]
    fn sign_convention_fixes_largest_loading() {
        let z = random_data(9, 3, 20);
        let a = init_latents(&z, 1, 0).unwrap();
        let b = init_latents(&(-&z * -1.0), 1, 7).unwrap();
        assert_eq!(a, b);
        let flipped = init_latents(&(-&z), 1, 0).unwrap();
        // negating the data negates every loading, which the convention undoes on the loading side
        assert!((flipped.coords() + a.coords()).amax() < 1e-10);
    }

    #[test]
    fn latent_dimension_out_of_range() {
        let z = random_data(1, 3, 5);
        assert!(init_latents(&z, 0, 0).is_err());
        assert!(init_latents(&z, 4, 0).is_err());
        let few = random_data(1, 6, 3);
        assert!(init_latents(&few, 3, 0).is_err());
        assert!(init_latents(&few, 2, 0).is_ok());
    }

    #[test]
    fn hyperparams_from_whitened_data() {
        let z = random_data(4, 3, 50);
        let mean = column_mean(&z);
        let zc = DMatrix::from_fn(3, 50, |r, c| z[(r, c)] - mean[r]);
        let cov = &zc * zc.transpose() / 50.0;
        let w = cov.cholesky().unwrap().l().try_inverse().unwrap();
        let white = w * zc;
        let x = init_latents(&white, 2, 0).unwrap();
        let h = init_hyperparams(&white, &x, false).unwrap();
        assert!((h.signal_var - 1.0).abs() < 1e-12);
        assert!((h.noise_var - 0.01).abs() < 1e-14);
        assert!(h.is_deterministic());
        let rd = init_hyperparams(&white, &x, true).unwrap();
        assert_eq!(rd.latent_var, vec![INIT_LATENT_VAR; 2]);
    }

    #[test]
    fn median_distance_hand_value() {
        let x = LatentConfig::new(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0])).unwrap();
        let z = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        // pairwise distances 1, 3, 2
        let h = init_hyperparams(&z, &x, false).unwrap();
        assert_eq!(h.lengthscales_sq, vec![4.0]);
    }

    #[test]
    fn identical_latents_rejected() {
        let x = LatentConfig::new(DMatrix::from_element(1, 4, 0.5)).unwrap();
        let z = random_data(1, 2, 4);
        assert!(init_hyperparams(&z, &x, false).is_err());
        let flat = DMatrix::from_element(2, 4, 1.0);
        let ok = LatentConfig::new(DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert!(init_hyperparams(&flat, &ok, false).is_err());
    }

    #[test]
    fn random_instances_strictly_positive() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dd = rng.random_range(2..5);
            let n = rng.random_range(4..15);
            let z = random_data(seed, dd, n);
            let d = rng.random_range(1..=dd.min(n - 1).min(3));
            let x = init_latents(&z, d, seed).unwrap();
            let h = init_hyperparams(&z, &x, seed % 2 == 0).unwrap();
            assert!(h.lengthscales_sq.iter().all(|&v| v > 0.0));
            assert!(h.signal_var > 0.0 && h.noise_var > 0.0);
            assert!(seed % 2 == 1 || h.latent_var.iter().all(|&v| v > 0.0));
        }
    }
}
