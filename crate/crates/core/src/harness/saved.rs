//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::methods::{FittedModel, Method};
use super::preprocess::Preprocessing;
use crate::baselines::BaselineModel;
use crate::density::ModelState;
use crate::error::{invalid, Result};
use crate::kernel::{HyperLayout, Hyperparams, LatentConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SavedPayload {
    Gplvm {
        /// `d x N` latent coordinates.
        latents: DMatrix<f64>,
        /// `[ln W, ln sigma_f^2, ln sigma_eta^2, ln V]`, the last block only when stochastic.
        log_hyp: Vec<f64>,
        stochastic: bool,
        /// `D x N` training data in the preprocessed space.
        targets: DMatrix<f64>,
    },
    Baseline(BaselineModel),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub method: Method,
    pub preprocessing: Preprocessing,
    pub model: SavedPayload,
}

impl SavedModel {
    pub fn new(method: Method, preprocessing: Preprocessing, fitted: &FittedModel) -> Self {
        let model = match fitted {
            FittedModel::Gplvm { state, .. } => SavedPayload::Gplvm {
                latents: state.latents.coords().clone(),
                log_hyp: state.hyp.to_log(),
                stochastic: !state.hyp.is_deterministic(),
                targets: state.targets.clone(),
            },
            FittedModel::Baseline(b) => SavedPayload::Baseline(b.clone()),
        };
        SavedModel {
            format_version: FORMAT_VERSION,
            method,
            preprocessing,
            model,
        }
    }

    pub fn to_fitted(&self) -> Result<FittedModel> {
        match &self.model {
            SavedPayload::Gplvm {
                latents,
                log_hyp,
                stochastic,
                targets,
            } => {
                let layout = HyperLayout {
                    latent_dim: latents.nrows(),
                    stochastic: *stochastic,
                };
                let hyp = Hyperparams::from_log(layout, log_hyp)?;
                let state = ModelState::new(LatentConfig::new(latents.clone())?, hyp, targets.clone())?;
                FittedModel::from_state(state)
            }
            SavedPayload::Baseline(b) => Ok(FittedModel::Baseline(b.clone())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => invalid(format!("model file version {v} is not supported")),
            None => invalid("model file has no format_version"),
        }
    }
}
