use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::rollout::stack;
use super::{
    argmax, Algorithm, EpsilonSchedule, ReplayBuffer, Rollout, Step, TrainingError, UpdateBatch,
    UpdateRow,
};
use crate::nn::{loss, Mlp, Outputs, ParamVector, Tensor};

pub const Q_HEAD: &str = "q_values";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Updates can start once the replay holds this many transitions (at
    /// least `batch_size`).
    pub learning_starts: usize,
    /// Hard copy of online into target parameters every this many updates.
    pub target_sync_every: usize,
    pub double: bool,
    pub huber_delta: f64,
    pub epsilon: EpsilonSchedule,
    pub reset_replay_per_experience: bool,
    pub replay_seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            learning_starts: 0,
            target_sync_every: 100,
            double: false,
            huber_delta: 1.0,
            epsilon: EpsilonSchedule::default(),
            reset_replay_per_experience: true,
            replay_seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 1 <= batch_size <= replay_capacity");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be >= 1");
        }
        if self.huber_delta.is_nan() || self.huber_delta <= 0.0 {
            return bad("huber_delta must be > 0");
        }
        self.epsilon.validate()
    }
}

/// Bootstrap target of one transition. `q_online_next` switches to the
/// double-DQN rule: the online net picks the action, the target net values it.
pub fn dqn_target(
    reward: f64,
    done: bool,
    gamma: f64,
    q_target_next: &[f64],
    q_online_next: Option<&[f64]>,
) -> f64 {
    if done {
        return reward;
    }
    let next = match q_online_next {
        Some(online) => q_target_next[argmax(online)],
        None => q_target_next
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
    };
    reward + gamma * next
}

/// DQN with a target network and uniform replay; `double` selects the
/// double-DQN target.
pub struct Dqn {
    config: DqnConfig,
    replay: ReplayBuffer<Step>,
    target: Option<Mlp>,
    updates: u64,
    rng: ChaCha8Rng,
    last_progress: f64,
}

impl Dqn {
    pub fn new(config: DqnConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        Ok(Dqn {
            replay: ReplayBuffer::new(config.replay_capacity),
            target: None,
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(config.replay_seed),
            last_progress: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn replay(&self) -> &ReplayBuffer<Step> {
        &self.replay
    }

    pub fn target(&self) -> Option<&Mlp> {
        self.target.as_ref()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self, progress: f64) -> f64 {
        self.config.epsilon.value(progress)
    }

    /// Copy the online parameters into the target network.
    pub fn sync_target(&mut self, model: &Mlp) {
        self.target = Some(model.clone());
        if let Some(t) = &mut self.target {
            t.clear_cache();
        }
    }

    fn targets(&self, model: &Mlp, steps: &[&Step]) -> Result<Vec<f64>, TrainingError> {
        let target = self.target.as_ref().unwrap_or(model);
        let next = stack(steps.iter().map(|s| s.next_obs.as_slice()))?;
        let q_t = target.predict(&next)?.remove(Q_HEAD).expect("q head");
        let q_o = if self.config.double {
            Some(model.predict(&next)?.remove(Q_HEAD).expect("q head"))
        } else {
            None
        };
        Ok(steps
            .iter()
            .enumerate()
            .map(|(r, s)| {
                dqn_target(
                    s.reward,
                    s.done,
                    self.config.gamma,
                    q_t.row(r),
                    q_o.as_ref().map(|q| q.row(r)),
                )
            })
            .collect())
    }

    /// Huber TD loss over `steps` with output gradient on the taken actions.
    fn td_loss(&self, model: &mut Mlp, steps: &[&Step]) -> Result<(f64, ParamVector), TrainingError> {
        let y = self.targets(model, steps)?;
        let obs = stack(steps.iter().map(|s| s.obs.as_slice()))?;
        let q = model.forward(&obs)?.remove(Q_HEAD).expect("q head");
        let n_actions = q.cols();
        let chosen: Vec<f64> = steps
            .iter()
            .enumerate()
            .map(|(r, s)| q.get(r, s.action))
            .collect();
        let b = steps.len();
        let (value, g) = loss::huber(
            &Tensor::matrix(b, 1, chosen)?,
            &Tensor::matrix(b, 1, y)?,
            self.config.huber_delta,
        )?;
        let mut dq = vec![0.0; b * n_actions];
        for (r, s) in steps.iter().enumerate() {
            dq[r * n_actions + s.action] = g.data()[r];
        }
        let grads = model.backward(&Outputs::from([(
            Q_HEAD.to_string(),
            Tensor::matrix(b, n_actions, dq)?,
        )]))?;
        Ok((value, grads))
    }
}

impl Algorithm for Dqn {
    fn name(&self) -> &'static str {
        if self.config.double {
            "double_dqn"
        } else {
            "dqn"
        }
    }

    fn heads(&self, n_actions: usize) -> Vec<(String, usize)> {
        vec![(Q_HEAD.to_string(), n_actions)]
    }

    fn begin_experience(&mut self, model: &Mlp) -> Result<(), TrainingError> {
        if self.config.reset_replay_per_experience {
            self.replay.clear();
        }
        if self.target.is_none() {
            self.sync_target(model);
        }
        Ok(())
    }

    fn sample_actions(
        &mut self,
        model: &Mlp,
        obs: &Tensor,
        progress: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, TrainingError> {
        self.last_progress = progress;
        let eps = self.epsilon(progress);
        let q = model.predict(obs)?.remove(Q_HEAD).expect("q head");
        let n = q.cols();
        Ok((0..q.rows())
            .map(|r| {
                // one uniform draw per row keeps the random stream aligned
                // whatever the branch
                let u: f64 = rng.random();
                if u < eps {
                    rng.random_range(0..n)
                } else {
                    argmax(q.row(r))
                }
            })
            .collect())
    }

    fn greedy_actions(&self, model: &Mlp, obs: &Tensor) -> Result<Vec<usize>, TrainingError> {
        let q = model.predict(obs)?.remove(Q_HEAD).expect("q head");
        Ok((0..q.rows()).map(|r| argmax(q.row(r))).collect())
    }

    fn prepare_batch(
        &mut self,
        _model: &Mlp,
        rollout: &Rollout,
    ) -> Result<Option<UpdateBatch>, TrainingError> {
        self.replay.extend(rollout.steps().cloned());
        let needed = self.config.batch_size.max(self.config.learning_starts);
        if self.replay.len() < needed {
            return Ok(None);
        }
        let rows = self
            .replay
            .sample(self.config.batch_size, &mut self.rng)
            .into_iter()
            .map(|step| UpdateRow {
                step,
                target_return: None,
            })
            .collect();
        Ok(Some(UpdateBatch { rows }))
    }

    fn loss_and_grads(
        &mut self,
        model: &mut Mlp,
        batch: &UpdateBatch,
    ) -> Result<(f64, ParamVector), TrainingError> {
        if batch.is_empty() {
            return Err(TrainingError::EmptyRollout);
        }
        let steps: Vec<&Step> = batch.rows.iter().map(|r| &r.step).collect();
        self.td_loss(model, &steps)
    }

    fn after_update(&mut self, model: &Mlp) {
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_sync_every as u64) {
            self.sync_target(model);
        }
    }

    fn per_sample_grads(
        &self,
        model: &Mlp,
        steps: &[Step],
    ) -> Result<Vec<ParamVector>, TrainingError> {
        let mut net = model.clone();
        steps
            .iter()
            .map(|s| self.td_loss(&mut net, &[s]).map(|(_, g)| g))
            .collect()
    }

    fn scalars(&self, progress: f64) -> Vec<(&'static str, f64)> {
        vec![("epsilon", self.epsilon(progress))]
    }
}
