use std::cell::OnceCell;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::env::{Action, Observation};
use crate::nn::Tensor;

/// One transition. When the episode ended, `next_obs` is the true terminal
/// observation, not the auto-reset one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub next_obs: Vec<f64>,
    pub task_label: usize,
}

impl Step {
    pub fn new(
        obs: &Observation,
        action: &Action,
        reward: f64,
        done: bool,
        next_obs: &Observation,
        task_label: usize,
    ) -> Result<Self, TrainingError> {
        let action = action
            .index()
            .ok_or_else(|| TrainingError::Unsupported("continuous actions".into()))?;
        if !reward.is_finite() {
            return Err(TrainingError::NonFiniteReward(reward));
        }
        if obs.shape() != next_obs.shape() {
            return Err(TrainingError::Unsupported(format!(
                "next_obs shape {:?} differs from obs shape {:?}",
                next_obs.shape(),
                obs.shape()
            )));
        }
        Ok(Step {
            obs: obs.data().to_vec(),
            action,
            reward,
            done,
            next_obs: next_obs.data().to_vec(),
            task_label,
        })
    }
}

/// Column views over every step of a rollout, actor-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_obs: Tensor,
}

/// Per-actor step lists. The batch view is built on first access; after that
/// the rollout is frozen.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    actors: Vec<Vec<Step>>,
    batch: OnceCell<RolloutBatch>,
}

impl Rollout {
    pub fn new(n_actors: usize) -> Self {
        Rollout {
            actors: vec![Vec::new(); n_actors],
            batch: OnceCell::new(),
        }
    }

    pub fn push(&mut self, actor: usize, step: Step) -> Result<(), TrainingError> {
        if self.batch.get().is_some() {
            return Err(TrainingError::RolloutFrozen);
        }
        self.actors
            .get_mut(actor)
            .ok_or_else(|| TrainingError::Unsupported(format!("no actor {actor} in rollout")))?
            .push(step);
        Ok(())
    }

    pub fn n_actors(&self) -> usize {
        self.actors.len()
    }

    pub fn actor(&self, i: usize) -> &[Step] {
        &self.actors[i]
    }

    pub fn actors(&self) -> &[Vec<Step>] {
        &self.actors
    }

    pub fn len(&self) -> usize {
        self.actors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.actors.iter().flatten()
    }

    pub fn is_frozen(&self) -> bool {
        self.batch.get().is_some()
    }

    pub fn batch(&self) -> Result<&RolloutBatch, TrainingError> {
        if let Some(b) = self.batch.get() {
            return Ok(b);
        }
        let steps: Vec<&Step> = self.steps().collect();
        let first = steps.first().ok_or(TrainingError::EmptyRollout)?;
        let dim = first.obs.len();
        let b = steps.len();
        let mut obs = Vec::with_capacity(b * dim);
        let mut next = Vec::with_capacity(b * dim);
        for s in &steps {
            obs.extend_from_slice(&s.obs);
            next.extend_from_slice(&s.next_obs);
        }
        let batch = RolloutBatch {
            obs: Tensor::matrix(b, dim, obs)?,
            actions: steps.iter().map(|s| s.action).collect(),
            rewards: steps.iter().map(|s| s.reward).collect(),
            dones: steps.iter().map(|s| s.done).collect(),
            next_obs: Tensor::matrix(b, dim, next)?,
        };
        Ok(self.batch.get_or_init(|| batch))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RolloutCondition {
    /// `n` steps per actor.
    Steps(usize),
    /// `n` finished episodes summed over actors.
    Episodes(usize),
}

impl RolloutCondition {
    pub fn validate(&self) -> Result<(), TrainingError> {
        match self {
            RolloutCondition::Steps(0) | RolloutCondition::Episodes(0) => Err(
                TrainingError::InvalidConfig("rollout condition count must be >= 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBudget {
    pub updates_per_experience: usize,
    pub rollout: RolloutCondition,
}

impl TrainingBudget {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.updates_per_experience == 0 {
            return Err(TrainingError::InvalidConfig(
                "updates_per_experience must be >= 1".into(),
            ));
        }
        self.rollout.validate()
    }
}

/// Row of an update batch. `target_return` is set by algorithms that compute
/// returns from the rollout; rows without one (e.g. injected from a replay
/// memory) are bootstrapped one step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRow {
    pub step: Step,
    pub target_return: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateBatch {
    pub rows: Vec<UpdateRow>,
}

impl UpdateBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn obs_matrix(&self) -> Result<Tensor, TrainingError> {
        stack(self.rows.iter().map(|r| r.step.obs.as_slice()))
    }
}

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Tensor, TrainingError> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut dim = None;
    for r in rows {
        if *dim.get_or_insert(r.len()) != r.len() {
            return Err(TrainingError::Unsupported("ragged observation batch".into()));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Tensor::matrix(n, dim.unwrap_or(0), data)?)
}
