use log::warn;
use serde::{Deserialize, Serialize};

use super::plugin_error;
use crate::nn::{NnError, ParamVector};
use crate::training::{HookCtx, Plugin, ReplayBuffer, Step, TrainingError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EwcConfig {
    pub lambda: f64,
    /// Number of recent transitions used to estimate the Fisher diagonal.
    pub fisher_samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        EwcConfig {
            lambda: 100.0,
            fisher_samples: 512,
        }
    }
}

/// Anchor and Fisher diagonal of one finished experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcTask {
    pub anchor: Vec<f64>,
    pub fisher: Vec<f64>,
}

/// Mean of squared per-sample gradients. An empty slice gives an empty vector.
pub fn fisher_diagonal(grads: &[ParamVector]) -> Result<ParamVector, NnError> {
    let Some(first) = grads.first() else {
        return Ok(ParamVector::default());
    };
    let mut f = vec![0.0; first.len()];
    for g in grads {
        if g.len() != f.len() {
            return Err(NnError::LengthMismatch {
                expected: f.len(),
                got: g.len(),
            });
        }
        for (fi, gi) in f.iter_mut().zip(g.values()) {
            *fi += gi * gi;
        }
    }
    let k = grads.len() as f64;
    f.iter_mut().for_each(|v| *v /= k);
    Ok(f.into())
}

/// `sum_k (lambda/2) * sum_i F_k[i] (theta[i] - anchor_k[i])^2` and its
/// gradient with respect to `theta`.
pub fn ewc_penalty_and_grad(
    theta: &ParamVector,
    tasks: &[EwcTask],
    lambda: f64,
) -> Result<(f64, ParamVector), NnError> {
    let n = theta.len();
    let mut penalty = 0.0;
    let mut grad = vec![0.0; n];
    for t in tasks {
        for len in [t.anchor.len(), t.fisher.len()] {
            if len != n {
                return Err(NnError::LengthMismatch { expected: n, got: len });
            }
        }
        let mut sum = 0.0;
        for (i, g) in grad.iter_mut().enumerate() {
            let d = theta.values()[i] - t.anchor[i];
            sum += t.fisher[i] * d * d;
            *g += lambda * t.fisher[i] * d;
        }
        penalty += 0.5 * lambda * sum;
    }
    Ok((penalty, grad.into()))
}

#[derive(Serialize, Deserialize)]
struct EwcSnapshot {
    tasks: Vec<EwcTask>,
    recent: ReplayBuffer<Step>,
}

/// Elastic weight consolidation with a separate penalty per finished
/// experience.
///
/// The Fisher diagonal is approximated by squared gradients of the
/// algorithm's own per-transition loss (TD loss for DQN, `-log pi(a|s)` for
/// A2C) over the last `fisher_samples` transitions of the experience.
pub struct Ewc {
    config: EwcConfig,
    tasks: Vec<EwcTask>,
    recent: ReplayBuffer<Step>,
}

impl Ewc {
    pub fn new(config: EwcConfig) -> Result<Self, TrainingError> {
        if !(config.lambda >= 0.0 && config.lambda.is_finite()) || config.fisher_samples == 0 {
            return Err(TrainingError::InvalidConfig(format!("ewc: {config:?}")));
        }
        let recent = ReplayBuffer::new(config.fisher_samples);
        Ok(Ewc {
            config,
            tasks: Vec::new(),
            recent,
        })
    }

    pub fn config(&self) -> &EwcConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[EwcTask] {
        &self.tasks
    }

    pub fn penalty(&self, theta: &ParamVector) -> Result<(f64, ParamVector), NnError> {
        ewc_penalty_and_grad(theta, &self.tasks, self.config.lambda)
    }
}

impl Plugin for Ewc {
    fn name(&self) -> &str {
        "ewc"
    }

    fn before_training_exp(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.recent.clear();
        Ok(())
    }

    fn after_rollout(&mut self, ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.recent.extend(ctx.state.rollout.steps().cloned());
        Ok(())
    }

    fn before_update(&mut self, ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        if self.tasks.is_empty() || ctx.state.update_skipped {
            return Ok(());
        }
        let (p, g) = self.penalty(&ctx.state.model.flatten_params())?;
        ctx.state.loss.add_penalty(p, &g)
    }

    fn after_training_exp(&mut self, ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        let k = self.config.fisher_samples;
        if self.recent.len() < k {
            warn!(
                "ewc: only {} of {k} transitions available for the Fisher estimate",
                self.recent.len()
            );
        }
        let anchor = ctx.state.model.flatten_params();
        let steps: Vec<Step> = self.recent.iter().cloned().collect();
        let grads = ctx.algorithm.per_sample_grads(&ctx.state.model, &steps)?;
        let fisher = if grads.is_empty() {
            ParamVector::zeros(anchor.len())
        } else {
            fisher_diagonal(&grads)?
        };
        if fisher.len() != anchor.len() {
            return Err(plugin_error(
                "ewc",
                format!("fisher has {} entries, model has {}", fisher.len(), anchor.len()),
            ));
        }
        self.tasks.push(EwcTask {
            anchor: anchor.into_inner(),
            fisher: fisher.into_inner(),
        });
        self.recent.clear();
        Ok(())
    }

    fn save_state(&self) -> Result<Option<Vec<u8>>, TrainingError> {
        let snap = EwcSnapshot {
            tasks: self.tasks.clone(),
            recent: self.recent.clone(),
        };
        serde_json::to_vec(&snap)
            .map(Some)
            .map_err(|e| plugin_error("ewc", e))
    }

    fn load_state(&mut self, bytes: &[u8]) -> Result<(), TrainingError> {
        let snap: EwcSnapshot = serde_json::from_slice(bytes).map_err(|e| plugin_error("ewc", e))?;
        self.tasks = snap.tasks;
        self.recent = snap.recent;
        Ok(())
    }
}
