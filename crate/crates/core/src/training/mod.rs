//! Optimiser, learning-rate schedule, data sources and the training loop.

mod data;
mod trainer;

pub use data::{
    epoch_plan, synthetic_triplet, EpochPlan, InMemoryDataset, ManifestDataset, SecondView,
    TrainingTriplet, TripletSource,
};
pub use trainer::{EpochSummary, KeypointCounts, StepLog, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsidata::HsiError;
use crate::losses::{EpipolarSchedule, LossConfig, LossWeights};
use crate::model::{HyKeyConfig, ModelError, Parameter};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] HsiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub epoch_frame_cap: usize,
    pub epochs: usize,
    /// Stop after this many optimiser steps, whatever the epoch.
    pub max_steps: Option<u64>,
    /// The epipolar term stays off for epochs `1..=epipolar_after_epoch`.
    pub epipolar_after_epoch: usize,
    /// Train without the epipolar term at all.
    pub no_pe: bool,
    /// Global gradient-norm clip.
    pub grad_clip: f32,
    pub seed: u64,
    pub weights: LossWeights,
    pub loss: LossConfig,
    pub model: HyKeyConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            warmup_steps: 500,
            batch_size: 6,
            epoch_frame_cap: 10_000,
            epochs: 10,
            max_steps: None,
            epipolar_after_epoch: 5,
            no_pe: false,
            grad_clip: 10.0,
            seed: 0,
            weights: LossWeights::default(),
            loss: LossConfig::default(),
            model: HyKeyConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(TrainError::Config(format!("{field}: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("{} must be positive", self.learning_rate),
            );
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.epoch_frame_cap == 0 {
            return bad("epoch_frame_cap", "must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", format!("{} must be positive", self.grad_clip));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam", format!("{a:?} out of range"));
        }
        self.weights
            .validate()
            .map_err(|e| TrainError::Config(format!("weights: {e}")))?;
        self.model
            .validate()
            .map_err(|e| TrainError::Config(format!("model: {e}")))?;
        Ok(())
    }

    pub fn schedule(&self) -> EpipolarSchedule {
        if self.no_pe {
            EpipolarSchedule::Disabled
        } else {
            EpipolarSchedule::Delayed {
                after_epoch: self.epipolar_after_epoch,
            }
        }
    }
}

/// Linear warm-up to the base rate over `warmup_steps`, constant after.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    if config.warmup_steps == 0 {
        return config.learning_rate;
    }
    config.learning_rate * (step as f64 / config.warmup_steps as f64).min(1.0)
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &[Parameter], config: AdamConfig) -> Self {
        Self {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of a scalar, in f64. Returns
/// `(new_value, m, v)`.
pub fn adam_scalar(
    value: f64,
    grad: f64,
    m: f64,
    v: f64,
    step: u64,
    lr: f64,
    c: &AdamConfig,
) -> (f64, f64, f64) {
    let m = c.beta1 * m + (1.0 - c.beta1) * grad;
    let v = c.beta2 * v + (1.0 - c.beta2) * grad * grad;
    let mhat = m / (1.0 - c.beta1.powi(step as i32));
    let vhat = v / (1.0 - c.beta2.powi(step as i32));
    (value - lr * mhat / (vhat.sqrt() + c.eps), m, v)
}

/// Applies one Adam step in place. Non-finite gradients leave parameters
/// and state untouched and return false.
pub fn adam_step(
    params: &mut [Parameter],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> bool {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    if grads.iter().any(|g| !g.is_finite()) {
        log::warn!(
            "non-finite gradient at step {}: update skipped",
            state.step + 1
        );
        return false;
    }
    state.step += 1;
    let c = state.config;
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, (x, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            let (nx, nm, nv) = adam_scalar(
                *x as f64,
                gi as f64,
                m[i] as f64,
                v[i] as f64,
                state.step,
                lr,
                &c,
            );
            *x = nx as f32;
            m[i] = nm as f32;
            v[i] = nv as f32;
        }
    }
    true
}
