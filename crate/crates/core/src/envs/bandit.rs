//! One-step k-armed bandit with Gaussian rewards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvError, Environment, EpisodeStatus, Info, Observation, Space, StepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditParams {
    pub means: Vec<f64>,
    #[serde(default)]
    pub noise_std: f64,
}

impl BanditParams {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.means.is_empty() {
            return Err(EnvError::InvalidParams("bandit needs at least one arm".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(EnvError::InvalidParams("arm means must be finite".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(EnvError::InvalidParams("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pull `arm`. The episode always ends after one pull.
pub fn bandit_step<R: Rng + ?Sized>(
    arm: usize,
    params: &BanditParams,
    rng: &mut R,
) -> Result<(f64, bool), EnvError> {
    let mean = *params.means.get(arm).ok_or_else(|| EnvError::ActionOutOfSpace {
        action: arm.to_string(),
        space: format!("Discrete({})", params.k()),
    })?;
    let z: f64 = rng.sample(StandardNormal);
    Ok((mean + params.noise_std * z, true))
}

pub struct Bandit {
    params: BanditParams,
    status: EpisodeStatus,
    rng: ChaCha8Rng,
}

impl Bandit {
    pub fn new(params: BanditParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Bandit {
            params,
            status: EpisodeStatus::NotStarted,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }
}

impl Environment for Bandit {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        self.status = EpisodeStatus::Running;
        Observation::vector(vec![0.0])
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.status.ensure_running()?;
        self.action_space().check(action)?;
        let (reward, done) = bandit_step(action.index().unwrap(), &self.params, &mut self.rng)?;
        self.status = EpisodeStatus::Done;
        Ok(StepResult {
            obs: Observation::vector(vec![0.0]),
            reward,
            done,
            info: Info::new(),
        })
    }

    fn action_space(&self) -> Space {
        Space::Discrete(self.params.k())
    }

    fn observation_space(&self) -> Space {
        Space::Box {
            low: vec![0.0],
            high: vec![0.0],
            shape: vec![1],
        }
    }
}
