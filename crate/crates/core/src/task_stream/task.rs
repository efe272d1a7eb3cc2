use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{TaskStreamEnv, TaskStreamError};
use crate::env::{EnvError, Space};
use crate::envs::{Pos, GRID_ACTIONS};

/// What a task sees of the world: the agent's cell and the active scene's
/// goal cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridState {
    pub pos: Pos,
    pub scene_goal: Pos,
}

type RewardFn = dyn Fn(GridState, usize, GridState) -> f64 + Send + Sync;
type GoalFn = dyn Fn(GridState) -> bool + Send + Sync;
type ActivateFn = dyn Fn(&mut TaskStreamEnv) -> Result<(), EnvError> + Send + Sync;

/// Reward function, goal test and action space over a gridworld, plus an
/// optional callback run when the task becomes active.
#[derive(Clone)]
pub struct Task {
    name: String,
    reward_fn: Arc<RewardFn>,
    goal_test: Arc<GoalFn>,
    action_space: Space,
    on_activate: Option<Arc<ActivateFn>>,
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("name", &self.name)
            .field("action_space", &self.action_space)
            .field("on_activate", &self.on_activate.is_some())
            .finish()
    }
}

impl Task {
    /// `n_actions` keeps the first `n_actions` gridworld moves (1 to 4).
    pub fn new<R, G>(
        name: impl Into<String>,
        n_actions: usize,
        reward_fn: R,
        goal_test: G,
    ) -> Result<Self, TaskStreamError>
    where
        R: Fn(GridState, usize, GridState) -> f64 + Send + Sync + 'static,
        G: Fn(GridState) -> bool + Send + Sync + 'static,
    {
        if !(1..=GRID_ACTIONS).contains(&n_actions) {
            return Err(TaskStreamError::InvalidConfig(format!(
                "a gridworld task needs 1 to {GRID_ACTIONS} actions, got {n_actions}"
            )));
        }
        Ok(Task {
            name: name.into(),
            reward_fn: Arc::new(reward_fn),
            goal_test: Arc::new(goal_test),
            action_space: Space::Discrete(n_actions),
            on_activate: None,
        })
    }

    pub fn with_on_activate<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut TaskStreamEnv) -> Result<(), EnvError> + Send + Sync + 'static,
    {
        self.on_activate = Some(Arc::new(f));
        self
    }

    /// Reach the active scene's goal cell.
    pub fn scene_goal(
        name: impl Into<String>,
        step_reward: f64,
        goal_reward: f64,
        n_actions: usize,
    ) -> Result<Self, TaskStreamError> {
        Task::new(
            name,
            n_actions,
            move |_, _, s: GridState| if s.pos == s.scene_goal { goal_reward } else { step_reward },
            |s: GridState| s.pos == s.scene_goal,
        )
    }

    /// Reach a fixed cell, whatever the scene's goal is.
    pub fn reach(
        name: impl Into<String>,
        target: Pos,
        step_reward: f64,
        goal_reward: f64,
        n_actions: usize,
    ) -> Result<Self, TaskStreamError> {
        Task::new(
            name,
            n_actions,
            move |_, _, s: GridState| if s.pos == target { goal_reward } else { step_reward },
            move |s: GridState| s.pos == target,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn action_space(&self) -> &Space {
        &self.action_space
    }

    pub fn reward(&self, s: GridState, action: usize, next: GridState) -> f64 {
        (self.reward_fn)(s, action, next)
    }

    pub fn is_goal(&self, s: GridState) -> bool {
        (self.goal_test)(s)
    }

    pub(crate) fn on_activate(&self) -> Option<Arc<ActivateFn>> {
        self.on_activate.clone()
    }
}

/// How long a task stays active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskDuration {
    MaxSteps(u64),
    MaxEpisodes(u64),
}

impl TaskDuration {
    pub fn count(self) -> u64 {
        match self {
            TaskDuration::MaxSteps(n) | TaskDuration::MaxEpisodes(n) => n,
        }
    }
}

/// One task entry of a config file. `params` is checked against the
/// parameters the task type declares; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub duration: TaskDuration,
    #[serde(default)]
    pub params: toml::Table,
}

/// Task types available from configs and the parameters each accepts.
pub const TASK_TYPES: &[(&str, &[&str])] = &[
    ("scene_goal", &["step_reward", "goal_reward", "n_actions"]),
    ("reach", &["x", "y", "step_reward", "goal_reward", "n_actions"]),
];

impl TaskConfig {
    pub fn build(&self) -> Result<(Task, TaskDuration), TaskStreamError> {
        let declared = TASK_TYPES
            .iter()
            .find(|(k, _)| *k == self.kind)
            .map(|(_, p)| *p)
            .ok_or_else(|| TaskStreamError::UnknownTaskType(self.kind.clone()))?;
        if let Some(key) = self.params.keys().find(|k| !declared.contains(&k.as_str())) {
            return Err(TaskStreamError::UnknownParam {
                task_type: self.kind.clone(),
                key: key.clone(),
            });
        }
        if self.duration.count() == 0 {
            return Err(TaskStreamError::InvalidConfig(format!(
                "task {:?} has a zero duration",
                self.name
            )));
        }
        let step_reward = self.float("step_reward", -0.01)?;
        let goal_reward = self.float("goal_reward", 1.0)?;
        let n_actions = self.uint("n_actions", Some(GRID_ACTIONS as u64))? as usize;
        let task = match self.kind.as_str() {
            "scene_goal" => Task::scene_goal(&self.name, step_reward, goal_reward, n_actions)?,
            _ => {
                let x = self.uint("x", None)? as usize;
                let y = self.uint("y", None)? as usize;
                Task::reach(&self.name, (x, y), step_reward, goal_reward, n_actions)?
            }
        };
        Ok((task, self.duration))
    }

    fn float(&self, key: &str, default: f64) -> Result<f64, TaskStreamError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(toml::Value::Float(v)) if v.is_finite() => Ok(*v),
            Some(toml::Value::Integer(v)) => Ok(*v as f64),
            Some(other) => Err(self.bad(key, other)),
        }
    }

    fn uint(&self, key: &str, default: Option<u64>) -> Result<u64, TaskStreamError> {
        match (self.params.get(key), default) {
            (None, Some(d)) => Ok(d),
            (None, None) => Err(TaskStreamError::InvalidConfig(format!(
                "task {:?} of type {} needs parameter {key}",
                self.name, self.kind
            ))),
            (Some(toml::Value::Integer(v)), _) if *v >= 0 => Ok(*v as u64),
            (Some(other), _) => Err(self.bad(key, other)),
        }
    }

    fn bad(&self, key: &str, v: &toml::Value) -> TaskStreamError {
        TaskStreamError::InvalidConfig(format!(
            "task {:?}: parameter {key} has invalid value {v}",
            self.name
        ))
    }
}
