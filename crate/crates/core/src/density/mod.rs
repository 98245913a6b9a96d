//! The projected Gaussian mixture and its training objectives.

mod objective;

pub use objective::{
    marginal_likelihood_dk, objective_loo, objective_lpo, objective_lpo_with_subsets,
    objective_lz, select_lpo_subsets, ObjectiveValue,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::gp::{Covariance, GpConditioned, PredictiveMoments};
use crate::kernel::{Hyperparams, LatentConfig};
use crate::linalg::{log_sum_exp, spherical_log_density, Gaussian};

/// Anything that assigns a log density to points of a fixed dimension.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> Result<f64>;
}

/// Latents, hyperparameters and the GP targets, which are the training data itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub latents: LatentConfig,
    pub hyp: Hyperparams,
    pub targets: DMatrix<f64>,
}

impl ModelState {
    pub fn new(latents: LatentConfig, hyp: Hyperparams, targets: DMatrix<f64>) -> Result<Self> {
        let state = ModelState { latents, hyp, targets };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyp.validate()?;
        if self.latents.len() != self.targets.ncols() {
            return invalid(format!(
                "{} latent points but {} data columns",
                self.latents.len(),
                self.targets.ncols()
            ));
        }
        if self.latents.dim() != self.hyp.latent_dim() {
            return invalid("latent dimension does not match hyperparameters");
        }
        if self.targets.nrows() == 0 || self.targets.iter().any(|v| !v.is_finite()) {
            return invalid("targets must be non-empty and finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.targets.nrows()
    }
}

/// Uniform-weight Gaussian mixture in observation space.
#[derive(Clone, Debug)]
pub struct ProjectedMixture {
    components: Vec<PredictiveMoments>,
    prepared: Vec<Prepared>,
    dim: usize,
}

#[derive(Clone, Debug)]
enum Prepared {
    Spherical(f64),
    Full(Gaussian),
}

impl ProjectedMixture {
    pub fn new(components: Vec<PredictiveMoments>) -> Result<Self> {
        let Some(first) = components.first() else {
            return invalid("a mixture needs at least one component");
        };
        let dim = first.mean.len();
        let prepared = components
            .iter()
            .map(|c| {
                if c.mean.len() != dim {
                    return invalid("mixture components differ in dimension");
                }
                Ok(match &c.cov {
                    Covariance::Spherical(s) if *s > 0.0 && s.is_finite() => Prepared::Spherical(*s),
                    Covariance::Spherical(s) => {
                        return Err(crate::Error::Numerical(format!(
                            "spherical variance {s} is not positive"
                        )))
                    }
                    Covariance::Full(m) => Prepared::Full(Gaussian::new(c.mean.clone(), m)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProjectedMixture { components, prepared, dim })
    }

    pub fn components(&self) -> &[PredictiveMoments] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Each component has weight `1/N`.
    pub fn weight(&self) -> f64 {
        1.0 / self.components.len() as f64
    }
}

impl LogDensity for ProjectedMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        mixture_log_density(self, z)
    }
}

/// Pushes each latent point (a Dirac or `N(x^j, V)`) through the conditioned GP.
pub fn project_mixture(model: &ModelState) -> Result<ProjectedMixture> {
    model.validate()?;
    let gp = GpConditioned::condition(&model.latents, &model.targets, &model.hyp)?;
    let components = (0..model.len())
        .map(|j| {
            if model.hyp.is_deterministic() {
                gp.predict_det_training(j)
            } else {
                gp.predict_gauss(&model.latents.point(j), &model.hyp.latent_var)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ProjectedMixture::new(components)
}

/// `ln (1/N) sum_j N(z | mu_j, Sigma_j)` evaluated with log-sum-exp.
pub fn mixture_log_density(mix: &ProjectedMixture, z: &[f64]) -> Result<f64> {
    if z.len() != mix.dim {
        return invalid(format!("point has dimension {}, mixture has {}", z.len(), mix.dim));
    }
    let z = DVector::from_column_slice(z);
    let terms: Vec<f64> = mix
        .components
        .iter()
        .zip(&mix.prepared)
        .map(|(c, p)| match p {
            Prepared::Spherical(s) => spherical_log_density(&z, &c.mean, *s),
            Prepared::Full(g) => g.log_density(&z),
        })
        .collect();
    Ok(log_sum_exp(&terms) - (mix.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn comp(mean: &[f64], cov: Covariance) -> PredictiveMoments {
        PredictiveMoments {
            mean: DVector::from_column_slice(mean),
            cov,
        }
    }

    #[test]
    fn standard_normal_at_origin() {
        let mix = ProjectedMixture::new(vec![comp(&[0.0, 0.0], Covariance::Spherical(1.0))]).unwrap();
        let v = mixture_log_density(&mix, &[0.0, 0.0]).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-14);
        let full = ProjectedMixture::new(vec![comp(&[0.0, 0.0], Covariance::Full(DMatrix::identity(2, 2)))])
            .unwrap();
        assert!((mixture_log_density(&full, &[0.0, 0.0]).unwrap() - v).abs() < 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let c = comp(&[1.0, -0.5], Covariance::Spherical(0.7));
        let one = ProjectedMixture::new(vec![c.clone()]).unwrap();
        let two = ProjectedMixture::new(vec![c.clone(), c]).unwrap();
        let z = [0.3, 0.2];
        let a = mixture_log_density(&one, &z).unwrap();
        let b = mixture_log_density(&two, &z).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn survives_tiny_densities() {
        let mix = ProjectedMixture::new(vec![
            comp(&[0.0], Covariance::Spherical(1e-3)),
            comp(&[1.0], Covariance::Spherical(1e-3)),
        ])
        .unwrap();
        let v = mixture_log_density(&mix, &[30.0]).unwrap();
        // both component densities are far below exp(-700)
        let want = spherical_log_density(
            &DVector::from_column_slice(&[30.0]),
            &DVector::from_column_slice(&[1.0]),
            1e-3,
        ) - 2f64.ln();
        assert!(v.is_finite() && v < -1e5);
        assert!((v - want).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_components() {
        assert!(ProjectedMixture::new(vec![comp(&[0.0], Covariance::Spherical(0.0))]).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(ProjectedMixture::new(vec![comp(&[0.0, 0.0], Covariance::Full(indefinite))]).is_err());
        let mix = ProjectedMixture::new(vec![comp(&[0.0], Covariance::Spherical(1.0))]).unwrap();
        assert!(mixture_log_density(&mix, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let a = comp(&[0.0, 1.0], Covariance::Spherical(0.5));
        let b = comp(&[2.0, -1.0], Covariance::Full(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.4])));
        let m1 = ProjectedMixture::new(vec![a.clone(), b.clone()]).unwrap();
        let m2 = ProjectedMixture::new(vec![b, a]).unwrap();
        let z = [0.7, 0.1];
        assert!((m1.log_density(&z).unwrap() - m2.log_density(&z).unwrap()).abs() < 1e-14);
    }

    fn toy_model(latent_var: f64) -> ModelState {
        let x = LatentConfig::new(DMatrix::from_row_slice(1, 4, &[-1.0, -0.2, 0.5, 1.3])).unwrap();
        let z = DMatrix::from_row_slice(2, 4, &[-1.0, -0.1, 0.6, 1.2, 0.9, 0.0, 0.3, 1.5]);
        let h = Hyperparams::new(vec![0.6], 1.0, 0.05, vec![latent_var]).unwrap();
        ModelState::new(x, h, z).unwrap()
    }

    #[test]
    fn projection_shapes() {
        let det = project_mixture(&toy_model(0.0)).unwrap();
        assert_eq!(det.len(), 4);
        for c in det.components() {
            let Covariance::Spherical(s) = c.cov else { panic!("expected spherical") };
            assert!((0.05 - 1e-9..=1.05 + 1e-9).contains(&s));
        }
        let rd = project_mixture(&toy_model(0.2)).unwrap();
        assert!(rd.components().iter().all(|c| matches!(c.cov, Covariance::Full(_))));
        assert_eq!(det.weight(), 0.25);
    }

    #[test]
    fn projection_converges_to_dirac_limit() {
        let det = project_mixture(&toy_model(0.0)).unwrap();
        let rd = project_mixture(&toy_model(1e-12)).unwrap();
        for (a, b) in det.components().iter().zip(rd.components()) {
            assert!((&a.mean - &b.mean).amax() <= 1e-6);
            let Covariance::Spherical(s) = a.cov else { unreachable!() };
            assert!((b.cov.to_matrix(2) - DMatrix::identity(2, 2) * s).amax() <= 1e-6);
        }
    }

    #[test]
    fn single_point_mixture() {
        let x = LatentConfig::new(DMatrix::from_row_slice(1, 1, &[0.4])).unwrap();
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let h = Hyperparams::new(vec![1.0], 1.0, 0.25, vec![0.3]).unwrap();
        let model = ModelState::new(x.clone(), h.clone(), z.clone()).unwrap();
        let mix = project_mixture(&model).unwrap();
        let gp = GpConditioned::condition(&x, &z, &h).unwrap();
        let kt = crate::kernel::expected_k(&x, &[0.4], &h).unwrap();
        let want = gp.weights().tr_mul(&kt);
        assert!((&mix.components()[0].mean - want).amax() < 1e-15);
    }
}
