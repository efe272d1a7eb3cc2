//! The strategy engine: rollouts, updates, callbacks and the reference DQN
//! and A2C algorithms.
//!
//! Each training experience runs `updates_per_experience` iterations of
//!
//! ```text
//! before_rollout -> rollout -> after_rollout
//! before_update  -> loss, gradients, optimizer step -> after_update
//! ```
//!
//! wrapped in `before_training_exp` / `after_training_exp`, with
//! `before_training` / `after_training` around the whole stream.

mod a2c;
mod dqn;
mod plugin;
mod replay;
mod rollout;
mod strategy;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::evaluation::MetricsError;
use crate::nn::{Mlp, NnError, ParamVector, Tensor};

pub use a2c::{discounted_returns, A2c, A2cConfig, POLICY_HEAD, VALUE_HEAD};
pub use dqn::{dqn_target, Dqn, DqnConfig, Q_HEAD};
pub use plugin::{Hook, HookCtx, HookRecorder, Plugin};
pub use replay::ReplayBuffer;
pub use rollout::{
    Rollout, RolloutBatch, RolloutCondition, Step, TrainingBudget, UpdateBatch, UpdateRow,
};
pub use strategy::{
    EvalConfig, EvalSummary, ExperienceMeta, LossAccumulator, Strategy, StrategyConfig,
    StrategyState, TrainingReport,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("the training stream is empty")]
    EmptyStream,
    #[error("rollout holds no steps")]
    EmptyRollout,
    #[error("rollout was already materialized; it cannot grow")]
    RolloutFrozen,
    #[error("evaluation needs at least one episode")]
    InvalidEpisodeCount,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("experience {index} is incompatible with the model: {reason}")]
    IncompatibleExperience { index: usize, reason: String },
    #[error("plugin {name}: {message}")]
    Plugin { name: String, message: String },
}

/// Linear decay from `start` to `end` over the first `fraction` of an
/// experience, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            fraction: 0.1,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            fraction: 1.0,
        }
    }

    /// `progress` is the fraction of the experience's expected interaction
    /// already done.
    pub fn value(&self, progress: f64) -> f64 {
        if self.fraction <= 0.0 || progress >= self.fraction {
            self.end
        } else {
            self.start + (self.end - self.start) * (progress.max(0.0) / self.fraction)
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.start) && unit(self.end) && unit(self.fraction) {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig(format!(
                "epsilon schedule values must lie in [0, 1]: {self:?}"
            )))
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// What a learning algorithm plugs into [`Strategy`].
pub trait Algorithm: Send {
    fn name(&self) -> &'static str;

    /// Output heads of a network acting in a space of `n_actions` actions.
    fn heads(&self, n_actions: usize) -> Vec<(String, usize)>;

    /// Called when a training experience starts.
    fn begin_experience(&mut self, model: &Mlp) -> Result<(), TrainingError>;

    /// Exploratory actions for a batch of observations (one row per actor).
    /// `progress` is the fraction of the current experience already done.
    fn sample_actions(
        &mut self,
        model: &Mlp,
        obs: &Tensor,
        progress: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, TrainingError>;

    /// Deterministic evaluation actions; ties go to the lowest index.
    fn greedy_actions(&self, model: &Mlp, obs: &Tensor) -> Result<Vec<usize>, TrainingError>;

    /// Turn a fresh rollout into an update batch. `None` skips the update.
    fn prepare_batch(
        &mut self,
        model: &Mlp,
        rollout: &Rollout,
    ) -> Result<Option<UpdateBatch>, TrainingError>;

    /// Loss of `batch` and its gradient with respect to the model parameters.
    fn loss_and_grads(
        &mut self,
        model: &mut Mlp,
        batch: &UpdateBatch,
    ) -> Result<(f64, ParamVector), TrainingError>;

    /// Called after every applied optimizer step.
    fn after_update(&mut self, _model: &Mlp) {}

    /// Gradient of the algorithm's own loss on each single transition.
    fn per_sample_grads(
        &self,
        model: &Mlp,
        steps: &[Step],
    ) -> Result<Vec<ParamVector>, TrainingError>;

    /// Extra scalars worth logging, such as the exploration rate.
    fn scalars(&self, _progress: f64) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}
