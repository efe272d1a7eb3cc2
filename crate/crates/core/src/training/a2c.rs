use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::stack;
use super::{argmax, Algorithm, Rollout, Step, TrainingError, UpdateBatch, UpdateRow};
use crate::nn::{loss, Mlp, Outputs, ParamVector, Tensor};

pub const POLICY_HEAD: &str = "policy_logits";
pub const VALUE_HEAD: &str = "value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cConfig {
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.99,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

/// `R_t = r_t + gamma * (1 - done_t) * R_{t+1}` computed backwards from
/// `R_T = bootstrap`.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        next = rewards[t] + gamma * mask * next;
        out[t] = next;
    }
    out
}

/// Synchronous advantage actor-critic with a shared trunk and
/// `policy_logits` / `value` heads.
pub struct A2c {
    config: A2cConfig,
}

impl A2c {
    pub fn new(config: A2cConfig) -> Result<Self, TrainingError> {
        if !(0.0..=1.0).contains(&config.gamma)
            || config.value_coef < 0.0
            || config.entropy_coef < 0.0
        {
            return Err(TrainingError::InvalidConfig(format!("{config:?}")));
        }
        Ok(A2c { config })
    }

    pub fn config(&self) -> &A2cConfig {
        &self.config
    }

    fn value_of(&self, model: &Mlp, obs: &[&[f64]]) -> Result<Vec<f64>, TrainingError> {
        let v = model
            .predict(&stack(obs.iter().copied())?)?
            .remove(VALUE_HEAD)
            .expect("value head");
        Ok(v.into_data())
    }
}

impl Algorithm for A2c {
    fn name(&self) -> &'static str {
        "a2c"
    }

    fn heads(&self, n_actions: usize) -> Vec<(String, usize)> {
        vec![
            (POLICY_HEAD.to_string(), n_actions),
            (VALUE_HEAD.to_string(), 1),
        ]
    }

    fn begin_experience(&mut self, _model: &Mlp) -> Result<(), TrainingError> {
        Ok(())
    }

    fn sample_actions(
        &mut self,
        model: &Mlp,
        obs: &Tensor,
        _progress: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, TrainingError> {
        let logits = model.predict(obs)?.remove(POLICY_HEAD).expect("policy head");
        let p = loss::softmax(&logits)?;
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row(r);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, &pa) in row.iter().enumerate() {
                    acc += pa;
                    if u < acc {
                        return a;
                    }
                }
                // rounding left u above the cumulative sum: take the last
                // action with non-zero mass
                row.iter().rposition(|&pa| pa > 0.0).unwrap_or(0)
            })
            .collect())
    }

    fn greedy_actions(&self, model: &Mlp, obs: &Tensor) -> Result<Vec<usize>, TrainingError> {
        let logits = model.predict(obs)?.remove(POLICY_HEAD).expect("policy head");
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    fn prepare_batch(
        &mut self,
        model: &Mlp,
        rollout: &Rollout,
    ) -> Result<Option<UpdateBatch>, TrainingError> {
        if rollout.is_empty() {
            return Err(TrainingError::EmptyRollout);
        }
        let mut rows = Vec::with_capacity(rollout.len());
        for steps in rollout.actors() {
            let Some(last) = steps.last() else { continue };
            let bootstrap = if last.done {
                0.0
            } else {
                self.value_of(model, &[&last.next_obs])?[0]
            };
            let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
            let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
            let returns = discounted_returns(&rewards, &dones, bootstrap, self.config.gamma);
            rows.extend(steps.iter().zip(returns).map(|(s, r)| UpdateRow {
                step: s.clone(),
                target_return: Some(r),
            }));
        }
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
        let b = batch.len();
        // rows without a precomputed return get a one-step bootstrap
        let missing: Vec<usize> = (0..b)
            .filter(|&i| batch.rows[i].target_return.is_none())
            .collect();
        let mut returns: Vec<f64> = batch
            .rows
            .iter()
            .map(|r| r.target_return.unwrap_or(0.0))
            .collect();
        if !missing.is_empty() {
            let next: Vec<&[f64]> = missing
                .iter()
                .map(|&i| batch.rows[i].step.next_obs.as_slice())
                .collect();
            let v_next = self.value_of(model, &next)?;
            for (&i, v) in missing.iter().zip(v_next) {
                let s = &batch.rows[i].step;
                let mask = if s.done { 0.0 } else { 1.0 };
                returns[i] = s.reward + self.config.gamma * mask * v;
            }
        }

        let mut out = model.forward(&batch.obs_matrix()?)?;
        let logits = out.remove(POLICY_HEAD).expect("policy head");
        let values = out.remove(VALUE_HEAD).expect("value head");
        let actions: Vec<usize> = batch.rows.iter().map(|r| r.step.action).collect();
        let advantages: Vec<f64> = returns
            .iter()
            .zip(values.data())
            .map(|(r, v)| r - v)
            .collect();

        let (pg, pg_grad) = loss::policy_gradient(&logits, &actions, &advantages)?;
        let (vl, v_grad) = loss::mse(&values, &Tensor::matrix(b, 1, returns)?)?;
        let (ent, ent_grad) = loss::entropy(&logits)?;
        let total = pg + self.config.value_coef * vl - self.config.entropy_coef * ent;

        let dlogits: Vec<f64> = pg_grad
            .data()
            .iter()
            .zip(ent_grad.data())
            .map(|(g, e)| g - self.config.entropy_coef * e)
            .collect();
        let dvalue: Vec<f64> = v_grad
            .data()
            .iter()
            .map(|g| self.config.value_coef * g)
            .collect();
        let grads = model.backward(&Outputs::from([
            (
                POLICY_HEAD.to_string(),
                Tensor::matrix(b, logits.cols(), dlogits)?,
            ),
            (VALUE_HEAD.to_string(), Tensor::matrix(b, 1, dvalue)?),
        ]))?;
        Ok((total, grads))
    }

    /// Gradient of `-log pi(a|s)` per transition.
    fn per_sample_grads(
        &self,
        model: &Mlp,
        steps: &[Step],
    ) -> Result<Vec<ParamVector>, TrainingError> {
        let mut net = model.clone();
        steps
            .iter()
            .map(|s| {
                let obs = Tensor::matrix(1, s.obs.len(), s.obs.clone())?;
                let logits = net.forward(&obs)?.remove(POLICY_HEAD).expect("policy head");
                let (_, g) = loss::policy_gradient(&logits, &[s.action], &[1.0])?;
                Ok(net.backward(&Outputs::from([(POLICY_HEAD.to_string(), g)]))?)
            })
            .collect()
    }
}
