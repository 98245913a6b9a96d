//! Initialization and the alternating conjugate-gradient schedule.

mod cg;
mod init;

pub use cg::{cg_minimize, CgOptions, CgOutcome, CgStop};
pub use init::{init_hyperparams, init_latents, INIT_LATENT_VAR};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{
    objective_loo, objective_lpo_with_subsets, objective_lz, select_lpo_subsets, ModelState,
    ObjectiveValue,
};
use crate::error::{invalid, Result};
use crate::kernel::{HyperLayout, Hyperparams, LatentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// Negative GPLVM marginal likelihood.
    Lz,
    Loo,
    Lpo { leave_out: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub latent_dim: usize,
    /// Gaussian latent points with a learned variance instead of Diracs.
    pub stochastic: bool,
    pub total_steps: usize,
    /// CG steps per block before switching between latents and hyperparameters.
    pub block_period: usize,
    pub seed: u64,
    pub convergence_tol: f64,
}

impl TrainConfig {
    pub fn new(objective: Objective, latent_dim: usize, stochastic: bool) -> Self {
        TrainConfig {
            objective,
            latent_dim,
            stochastic,
            total_steps: 600,
            block_period: 10,
            seed: 0,
            convergence_tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_period == 0 {
            return invalid("block period must be positive");
        }
        if self.latent_dim == 0 {
            return invalid("latent dimension must be positive");
        }
        if let Objective::Lpo { leave_out: 0 } = self.objective {
            return invalid("LPO needs at least one left-out component");
        }
        if !(self.convergence_tol >= 0.0) {
            return invalid("convergence tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Latents,
    Hyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: Block,
    /// Index into the step sequence of this block's first step.
    pub first_step: usize,
    pub steps: usize,
    /// Objective at block entry, after any LPO subset refresh.
    pub start_value: f64,
    pub line_search_failed: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterEvent {
    pub block: usize,
    pub jitter: f64,
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub initial: ModelState,
    pub initial_value: f64,
    pub values: Vec<f64>,
    pub step_seconds: Vec<f64>,
    pub blocks: Vec<BlockRecord>,
    pub jitter_events: Vec<JitterEvent>,
    pub final_state: ModelState,
}

impl TrainTrace {
    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }
}

fn evaluate(model: &ModelState, objective: Objective, subsets: Option<&[Vec<usize>]>) -> Result<ObjectiveValue> {
    match (objective, subsets) {
        (Objective::Lz, _) => objective_lz(model),
        (Objective::Loo, _) => objective_loo(model),
        (Objective::Lpo { .. }, Some(s)) => objective_lpo_with_subsets(model, s),
        (Objective::Lpo { leave_out }, None) => crate::density::objective_lpo(model, leave_out),
    }
}

fn with_block(model: &ModelState, block: Block, params: &[f64]) -> Result<ModelState> {
    let mut m = model.clone();
    match block {
        Block::Latents => {
            let (d, n) = model.latents.coords().shape();
            m.latents = LatentConfig::new(DMatrix::from_column_slice(d, n, params))?;
        }
        Block::Hyper => {
            m.hyp = Hyperparams::from_log(HyperLayout::for_hyp(&model.hyp), params)?;
        }
    }
    Ok(m)
}

fn block_params(model: &ModelState, block: Block) -> Vec<f64> {
    match block {
        Block::Latents => model.latents.coords().as_slice().to_vec(),
        Block::Hyper => model.hyp.to_log(),
    }
}

/// Runs one block of CG steps with the other block frozen.
fn run_block(
    model: &ModelState,
    objective: Objective,
    block: Block,
    steps: usize,
    tol: f64,
) -> Result<(ModelState, CgOutcome, f64)> {
    let subsets = match objective {
        Objective::Lpo { leave_out } => Some(select_lpo_subsets(model, leave_out)?),
        _ => None,
    };
    let mut max_jitter = 0.0_f64;
    let f = |params: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = with_block(model, block, params)?;
        let v = evaluate(&m, objective, subsets.as_deref())?;
        max_jitter = max_jitter.max(v.jitter);
        let grad = match block {
            Block::Latents => v.grad_latents.as_slice().to_vec(),
            Block::Hyper => v.grad_hyp,
        };
        Ok((v.value, grad))
    };
    let opts = CgOptions {
        max_steps: steps,
        rel_tol: tol,
        ..CgOptions::default()
    };
    let out = cg_minimize(f, &block_params(model, block), &opts)?;
    let next = with_block(model, block, &out.x)?;
    Ok((next, out, max_jitter))
}

/// Initializes from the data and alternates CG blocks on latents and hyperparameters.
///
/// Each block spends up to `block_period` steps of the `total_steps` budget; a block that
/// stops early forfeits its remaining steps. LPO subsets are reselected at every block start.
pub fn train(z: &DMatrix<f64>, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate()?;
    let latents = init_latents(z, config.latent_dim, config.seed)?;
    let hyp = init_hyperparams(z, &latents, config.stochastic)?;
    let initial = ModelState::new(latents, hyp, z.clone())?;
    let initial_value = evaluate(&initial, config.objective, None)?.value;
    let mut trace = TrainTrace {
        initial: initial.clone(),
        initial_value,
        values: Vec::new(),
        step_seconds: Vec::new(),
        blocks: Vec::new(),
        jitter_events: Vec::new(),
        final_state: initial.clone(),
    };

    let mut model = initial;
    let mut used = 0;
    let mut block = Block::Latents;
    let mut stalled = 0;
    while used < config.total_steps {
        let budget = config.block_period.min(config.total_steps - used);
        let (next, out, jitter) = run_block(&model, config.objective, block, budget, config.convergence_tol)?;
        let index = trace.blocks.len();
        if jitter > 0.0 {
            trace.jitter_events.push(JitterEvent { block: index, jitter });
        }
        trace.blocks.push(BlockRecord {
            block,
            first_step: trace.values.len(),
            steps: out.steps(),
            start_value: out.initial_value,
            line_search_failed: out.line_search_failed(),
            converged: matches!(out.stop, CgStop::RelativeDecrease | CgStop::Stationary),
        });
        trace.values.extend_from_slice(&out.values);
        trace.step_seconds.extend_from_slice(&out.step_seconds);
        stalled = if out.steps() == 0 || out.values.last() == Some(&out.initial_value) {
            stalled + 1
        } else {
            0
        };
        model = next;
        used += budget;
        block = match block {
            Block::Latents => Block::Hyper,
            Block::Hyper => Block::Latents,
        };
        if stalled >= 2 {
            break;
        }
    }
    trace.final_state = model;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(2, n, |r, c| {
            let t = -2.0 + 4.0 * c as f64 / (n - 1) as f64;
            let wobble = 0.05 * ((c * 7919) % 13) as f64 / 13.0;
            if r == 0 { t } else { t.sin() + wobble }
        })
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let z = curve(12);
        let mut cfg = TrainConfig::new(Objective::Lz, 1, false);
        cfg.total_steps = 0;
        let trace = train(&z, &cfg).unwrap();
        assert_eq!(trace.final_state, trace.initial);
        assert!(trace.values.is_empty());
        let x = init_latents(&z, 1, 0).unwrap();
        assert_eq!(trace.initial.latents, x);
    }

    #[test]
    fn lz_training_decreases_objective() {
        let z = curve(15);
        let mut cfg = TrainConfig::new(Objective::Lz, 1, false);
        cfg.total_steps = 40;
        let trace = train(&z, &cfg).unwrap();
        assert!(trace.final_value() <= trace.initial_value);
        let check = objective_lz(&trace.final_state).unwrap().value;
        assert!((check - trace.final_value()).abs() < 1e-9 * check.abs().max(1.0));
    }

    #[test]
    fn blocks_alternate_and_freeze() {
        let z = curve(10);
        let mut cfg = TrainConfig::new(Objective::Lpo { leave_out: 2 }, 1, true);
        cfg.total_steps = 6;
        cfg.block_period = 3;
        let init = train(&z, &TrainConfig { total_steps: 0, ..cfg.clone() }).unwrap().initial;
        let (after_x, _, _) = run_block(&init, cfg.objective, Block::Latents, 3, cfg.convergence_tol).unwrap();
        assert_eq!(after_x.hyp, init.hyp);
        let (after_h, _, _) = run_block(&after_x, cfg.objective, Block::Hyper, 3, cfg.convergence_tol).unwrap();
        assert_eq!(after_h.latents, after_x.latents);
        let trace = train(&z, &cfg).unwrap();
        let kinds: Vec<Block> = trace.blocks.iter().map(|b| b.block).collect();
        assert_eq!(kinds, vec![Block::Latents, Block::Hyper]);
        assert_eq!(trace.final_state, after_h);
    }

    #[test]
    fn invalid_configs() {
        let z = curve(8);
        let mut cfg = TrainConfig::new(Objective::Lpo { leave_out: 0 }, 1, false);
        assert!(train(&z, &cfg).is_err());
        cfg.objective = Objective::Loo;
        cfg.block_period = 0;
        assert!(train(&z, &cfg).is_err());
        cfg.block_period = 10;
        cfg.latent_dim = 3;
        assert!(train(&z, &cfg).is_err());
    }
}
