use serde::{Deserialize, Serialize};

use super::TaskStreamError;
use crate::envs::GridScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SwapPolicy {
    OnTaskChange,
    EveryNEpisodes(u64),
    EveryNSteps(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneEvent {
    TaskChanged,
    EpisodeEnded,
    StepTaken,
}

/// Cycles through gridworld scenes of equal size under a swap policy.
#[derive(Debug, Clone)]
pub struct SceneManager {
    scenes: Vec<GridScene>,
    policy: SwapPolicy,
    active: usize,
    counter: u64,
}

impl SceneManager {
    pub fn new(scenes: Vec<GridScene>, policy: SwapPolicy) -> Result<Self, TaskStreamError> {
        let first = scenes
            .first()
            .ok_or_else(|| TaskStreamError::InvalidConfig("no scenes".into()))?;
        let dims = (first.width(), first.height());
        if let Some(s) = scenes.iter().find(|s| (s.width(), s.height()) != dims) {
            return Err(TaskStreamError::InvalidConfig(format!(
                "scene of size {}x{} differs from {}x{}",
                s.width(),
                s.height(),
                dims.0,
                dims.1
            )));
        }
        if matches!(policy, SwapPolicy::EveryNEpisodes(0) | SwapPolicy::EveryNSteps(0)) {
            return Err(TaskStreamError::InvalidConfig("swap interval must be >= 1".into()));
        }
        Ok(SceneManager {
            scenes,
            policy,
            active: 0,
            counter: 0,
        })
    }

    pub fn scenes(&self) -> &[GridScene] {
        &self.scenes
    }

    pub fn policy(&self) -> SwapPolicy {
        self.policy
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn active_scene(&self) -> &GridScene {
        &self.scenes[self.active]
    }

    /// Move to the next scene (cyclic) when `event` completes the policy's
    /// interval. Returns the active scene and whether it changed.
    pub fn maybe_swap(&mut self, event: SceneEvent) -> (&GridScene, bool) {
        let due = match (self.policy, event) {
            (SwapPolicy::OnTaskChange, SceneEvent::TaskChanged) => true,
            (SwapPolicy::EveryNEpisodes(n), SceneEvent::EpisodeEnded)
            | (SwapPolicy::EveryNSteps(n), SceneEvent::StepTaken) => {
                self.counter += 1;
                if self.counter == n {
                    self.counter = 0;
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        if due {
            self.active = (self.active + 1) % self.scenes.len();
        }
        (&self.scenes[self.active], due)
    }

    /// Make scene `i` active and restart the interval count.
    pub fn set_active(&mut self, i: usize) -> Result<(), TaskStreamError> {
        if i >= self.scenes.len() {
            return Err(TaskStreamError::InvalidConfig(format!("no scene {i}")));
        }
        self.active = i;
        self.counter = 0;
        Ok(())
    }
}
