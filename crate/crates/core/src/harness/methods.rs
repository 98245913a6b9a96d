//! Estimator selection, fitting and held-out evaluation.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gm, fit_kde, fit_mp, BaselineModel};
use crate::density::{project_mixture, LogDensity, ModelState, ProjectedMixture};
use crate::error::{invalid, Result};
use crate::training::{train, Objective, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Lz,
    LooDet,
    LooRd,
    LpoDet,
    LpoRd,
    Gm,
    Kde,
    Mp,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Lz => "lz",
            Family::LooDet => "loo-det",
            Family::LooRd => "loo-rd",
            Family::LpoDet => "lpo-det",
            Family::LpoRd => "lpo-rd",
            Family::Gm => "gm",
            Family::Kde => "kde",
            Family::Mp => "mp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Family::Lz,
            Family::LooDet,
            Family::LooRd,
            Family::LpoDet,
            Family::LpoRd,
            Family::Gm,
            Family::Kde,
            Family::Mp,
        ]
        .into_iter()
        .find(|f| f.tag() == s)
        .map_or_else(|| invalid(format!("unknown method '{s}'")), Ok)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One fully specified estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Method {
    Lz { d: usize },
    Loo { d: usize, stochastic: bool },
    Lpo { d: usize, leave_out: usize, stochastic: bool },
    Gm { k: usize },
    Kde,
    Mp { d: usize, r: usize },
}

impl Method {
    pub fn family(&self) -> Family {
        match *self {
            Method::Lz { .. } => Family::Lz,
            Method::Loo { stochastic: false, .. } => Family::LooDet,
            Method::Loo { stochastic: true, .. } => Family::LooRd,
            Method::Lpo { stochastic: false, .. } => Family::LpoDet,
            Method::Lpo { stochastic: true, .. } => Family::LpoRd,
            Method::Gm { .. } => Family::Gm,
            Method::Kde => Family::Kde,
            Method::Mp { .. } => Family::Mp,
        }
    }

    pub fn params(&self) -> String {
        match *self {
            Method::Lz { d } | Method::Loo { d, .. } => format!("d={d}"),
            Method::Lpo { d, leave_out, .. } => format!("d={d};P={leave_out}"),
            Method::Gm { k } => format!("K={k}"),
            Method::Kde => String::new(),
            Method::Mp { d, r } => format!("d={d};r={r}"),
        }
    }

    pub fn train_config(&self, steps: usize, seed: u64) -> Option<TrainConfig> {
        let (objective, d, stochastic) = match *self {
            Method::Lz { d } => (Objective::Lz, d, false),
            Method::Loo { d, stochastic } => (Objective::Loo, d, stochastic),
            Method::Lpo { d, leave_out, stochastic } => (Objective::Lpo { leave_out }, d, stochastic),
            _ => return None,
        };
        let mut cfg = TrainConfig::new(objective, d, stochastic);
        cfg.total_steps = steps;
        cfg.seed = seed;
        Some(cfg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.params();
        if p.is_empty() {
            write!(f, "{}", self.family())
        } else {
            write!(f, "{}({})", self.family(), p)
        }
    }
}

/// A trained estimator ready to score points.
#[derive(Clone, Debug)]
pub enum FittedModel {
    Gplvm { state: ModelState, mixture: ProjectedMixture },
    Baseline(BaselineModel),
}

impl FittedModel {
    pub fn from_state(state: ModelState) -> Result<Self> {
        let mixture = project_mixture(&state)?;
        Ok(FittedModel::Gplvm { state, mixture })
    }
}

impl LogDensity for FittedModel {
    fn dim(&self) -> usize {
        match self {
            FittedModel::Gplvm { mixture, .. } => mixture.dim(),
            FittedModel::Baseline(b) => b.dim(),
        }
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Gplvm { mixture, .. } => mixture.log_density(z),
            FittedModel::Baseline(b) => b.log_density(z),
        }
    }
}

/// Fits `method` to the columns of `train`. GPLVM variants run `steps` CG steps.
pub fn fit_method(method: &Method, train_data: &DMatrix<f64>, steps: usize, seed: u64) -> Result<FittedModel> {
    if let Some(cfg) = method.train_config(steps, seed) {
        let trace = train(train_data, &cfg)?;
        return FittedModel::from_state(trace.final_state);
    }
    let b = match *method {
        Method::Gm { k } => BaselineModel::Gm(fit_gm(train_data, k, seed)?),
        Method::Kde => BaselineModel::Kde(fit_kde(train_data)?),
        Method::Mp { d, r } => BaselineModel::Mp(fit_mp(train_data, d, r)?),
        _ => unreachable!("GPLVM methods handled above"),
    };
    Ok(FittedModel::Baseline(b))
}

/// Mean log density over the columns of `test`.
pub fn evaluate_model(model: &dyn LogDensity, test: &DMatrix<f64>) -> Result<f64> {
    if test.nrows() != model.dim() {
        return invalid(format!("test data has dimension {}, model has {}", test.nrows(), model.dim()));
    }
    if test.ncols() == 0 {
        return invalid("no test points");
    }
    let mut total = 0.0;
    for c in test.column_iter() {
        total += model.log_density(c.as_slice())?;
    }
    Ok(total / test.ncols() as f64)
}
