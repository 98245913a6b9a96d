//! Density estimation with Gaussian-process latent variable models.
//!
//! Latent points (Diracs or Gaussians) are pushed through a GP map into the
//! observation space, producing a Gaussian mixture whose covariances are shared
//! smoothly between components. The model is trained with leave-P-out density
//! objectives and benchmarked against classical density estimators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod density;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod training;

pub use density::{LogDensity, ModelState, ProjectedMixture};
pub use error::{Error, Result};
pub use gp::{Covariance, GpConditioned, PredictiveMoments};
pub use kernel::{Hyperparams, LatentConfig, PsdFactor};
