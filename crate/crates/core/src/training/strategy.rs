use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plugin::dispatch;
use super::rollout::stack;
use super::{
    Algorithm, Hook, HookCtx, Plugin, Rollout, RolloutCondition, Step, TrainingBudget,
    TrainingError, UpdateBatch,
};
use crate::benchmarks::{RLExperience, RLScenario};
use crate::env::{Action, Observation, Space};
use crate::evaluation::{ForgettingMatrix, MetricRecord, Metrics, Phase};
use crate::nn::{clip_grad_norm, Checkpoint, Mlp, Optimizer, ParamVector};
use crate::vec_env::{VecMode, VectorizedEnv};

/// Seed offset between consecutive experiences of a stream.
pub const EXPERIENCE_SEED_STRIDE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_episodes: usize,
    /// Evaluate the whole eval stream after every training experience.
    /// When off, a single evaluation runs at the end of training.
    pub after_each_experience: bool,
    /// Also evaluate every this many updates during training.
    pub every_n_updates: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_episodes: 5,
            after_each_experience: true,
            every_n_updates: None,
            seed: 1_000_000_007,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub budget: TrainingBudget,
    pub env_seed: u64,
    /// Seeds action sampling.
    pub sampling_seed: u64,
    pub vec_mode: VecMode,
    pub eval: EvalConfig,
    /// Custom scalars are logged every this many updates.
    pub log_interval: usize,
    pub window: usize,
    pub max_grad_norm: Option<f64>,
}

impl StrategyConfig {
    pub fn new(budget: TrainingBudget) -> Self {
        StrategyConfig {
            budget,
            env_seed: 0,
            sampling_seed: 0,
            vec_mode: VecMode::Serial,
            eval: EvalConfig::default(),
            log_interval: 100,
            window: crate::evaluation::DEFAULT_WINDOW,
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperienceMeta {
    pub index: usize,
    pub task_label: usize,
    pub n_envs: usize,
    pub name: String,
}

impl ExperienceMeta {
    fn of(e: &RLExperience) -> Self {
        ExperienceMeta {
            index: e.experience_index,
            task_label: e.task_label,
            n_envs: e.n_envs,
            name: e.name.clone(),
        }
    }
}

/// Loss terms for the current update. Plugins add penalties here between
/// `before_update` and the optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossAccumulator {
    pub base: f64,
    pub penalty: f64,
    pub extra_grad: Option<ParamVector>,
}

impl LossAccumulator {
    pub fn total(&self) -> f64 {
        self.base + self.penalty
    }

    pub fn add_penalty(&mut self, value: f64, grad: &ParamVector) -> Result<(), TrainingError> {
        self.penalty += value;
        match &mut self.extra_grad {
            Some(g) => g.add_scaled(1.0, grad)?,
            None => self.extra_grad = Some(grad.clone()),
        }
        Ok(())
    }
}

/// Everything hooks may read or modify.
#[derive(Debug)]
pub struct StrategyState {
    pub model: Mlp,
    pub optimizer: Optimizer,
    /// Rollout of the current iteration.
    pub rollout: Rollout,
    /// Batch the next optimizer step will use.
    pub update_batch: UpdateBatch,
    /// `true` when the algorithm had no batch to offer this iteration.
    pub update_skipped: bool,
    pub loss: LossAccumulator,
    /// Current training experience.
    pub experience: Option<ExperienceMeta>,
    /// Current eval experience, set between the eval hooks.
    pub eval_experience: Option<ExperienceMeta>,
    pub metrics: Metrics,
    /// Environment steps taken in training, summed over actors.
    pub global_step: u64,
    pub total_updates: u64,
    pub skipped_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub experience_index: usize,
    pub task_label: usize,
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub mean_return: f64,
    /// Population standard deviation.
    pub std_return: f64,
    pub mean_length: f64,
}

impl EvalSummary {
    fn new(meta: &ExperienceMeta, returns: Vec<f64>, lengths: Vec<usize>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let mean_length = lengths.iter().sum::<usize>() as f64 / n;
        EvalSummary {
            experience_index: meta.index,
            task_label: meta.task_label,
            returns,
            lengths,
            mean_return: mean,
            std_return: var.sqrt(),
            mean_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub records: Vec<MetricRecord>,
    pub forgetting: ForgettingMatrix,
    /// Eval results after each training experience, when evaluated.
    pub evals: Vec<Option<Vec<EvalSummary>>>,
    pub total_env_steps: u64,
    pub total_updates: u64,
    pub skipped_updates: u64,
}

/// Drives an [`Algorithm`] over a task stream and fires plugin hooks.
pub struct Strategy {
    algorithm: Box<dyn Algorithm>,
    state: StrategyState,
    plugins: Vec<Box<dyn Plugin>>,
    config: StrategyConfig,
    rng: ChaCha8Rng,
    n_actions: usize,
}

fn fire(
    plugins: &mut [Box<dyn Plugin>],
    hook: Hook,
    state: &mut StrategyState,
    algorithm: &dyn Algorithm,
) -> Result<(), TrainingError> {
    for p in plugins.iter_mut() {
        let mut ctx = HookCtx {
            state: &mut *state,
            algorithm,
        };
        dispatch(p.as_mut(), hook, &mut ctx)?;
    }
    Ok(())
}

/// Per-actor running episode return and length.
struct EpisodeTracker {
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl EpisodeTracker {
    fn new(n: usize) -> Self {
        EpisodeTracker {
            returns: vec![0.0; n],
            lengths: vec![0; n],
        }
    }

    /// Returns the finished episode's (return, length) when `done`.
    fn step(&mut self, i: usize, reward: f64, done: bool) -> Option<(f64, usize)> {
        self.returns[i] += reward;
        self.lengths[i] += 1;
        if done {
            let out = (self.returns[i], self.lengths[i]);
            self.returns[i] = 0.0;
            self.lengths[i] = 0;
            Some(out)
        } else {
            None
        }
    }
}

fn obs_tensor(obs: &[Observation]) -> Result<crate::nn::Tensor, TrainingError> {
    stack(obs.iter().map(Observation::data))
}

impl Strategy {
    /// `model` must carry the heads `algorithm.heads(n_actions)`.
    pub fn new(
        algorithm: Box<dyn Algorithm>,
        model: Mlp,
        optimizer: Optimizer,
        config: StrategyConfig,
    ) -> Result<Self, TrainingError> {
        config.budget.validate()?;
        if config.log_interval == 0 {
            return Err(TrainingError::InvalidConfig("log_interval must be >= 1".into()));
        }
        if config.eval.every_n_updates == Some(0) {
            return Err(TrainingError::InvalidConfig("eval.every_n_updates must be >= 1".into()));
        }
        if config.max_grad_norm.is_some_and(|m| m.is_nan() || m <= 0.0) {
            return Err(TrainingError::InvalidConfig("max_grad_norm must be > 0".into()));
        }
        let n_actions = model
            .heads()
            .iter()
            .find(|h| h.name == algorithm.heads(1)[0].0)
            .map(|h| h.len)
            .ok_or_else(|| {
                TrainingError::InvalidConfig(format!(
                    "model lacks the heads {} needs",
                    algorithm.name()
                ))
            })?;
        let expected = algorithm.heads(n_actions);
        let actual: Vec<(String, usize)> = model
            .heads()
            .iter()
            .map(|h| (h.name.clone(), h.len))
            .collect();
        if expected != actual {
            return Err(TrainingError::InvalidConfig(format!(
                "{} needs heads {expected:?}, model has {actual:?}",
                algorithm.name()
            )));
        }
        let metrics = Metrics::new(config.window);
        Ok(Strategy {
            rng: ChaCha8Rng::seed_from_u64(config.sampling_seed),
            state: StrategyState {
                model,
                optimizer,
                rollout: Rollout::default(),
                update_batch: UpdateBatch::default(),
                update_skipped: false,
                loss: LossAccumulator::default(),
                experience: None,
                eval_experience: None,
                metrics,
                global_step: 0,
                total_updates: 0,
                skipped_updates: 0,
            },
            algorithm,
            plugins: Vec::new(),
            config,
            n_actions,
        })
    }

    pub fn add_plugin(&mut self, plugin: Box<dyn Plugin>) {
        self.plugins.push(plugin);
    }

    pub fn with_plugin(mut self, plugin: Box<dyn Plugin>) -> Self {
        self.add_plugin(plugin);
        self
    }

    pub fn plugins(&self) -> &[Box<dyn Plugin>] {
        &self.plugins
    }

    pub fn algorithm(&self) -> &dyn Algorithm {
        self.algorithm.as_ref()
    }

    pub fn model(&self) -> &Mlp {
        &self.state.model
    }

    pub fn state(&self) -> &StrategyState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut StrategyState {
        &mut self.state
    }

    pub fn metrics_mut(&mut self) -> &mut Metrics {
        &mut self.state.metrics
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    fn check_experience(&self, e: &RLExperience, venv: &VectorizedEnv) -> Result<(), TrainingError> {
        let incompatible = |reason: String| TrainingError::IncompatibleExperience {
            index: e.experience_index,
            reason,
        };
        match venv.action_space() {
            Space::Discrete(n) if *n == self.n_actions => {}
            other => {
                return Err(incompatible(format!(
                    "action space {other} but the model has {} actions",
                    self.n_actions
                )))
            }
        }
        let dim = venv.observation_space().flat_dim();
        if dim != self.state.model.input_dim() {
            return Err(incompatible(format!(
                "observations have {dim} features, the model expects {}",
                self.state.model.input_dim()
            )));
        }
        Ok(())
    }

    /// Train on every experience of the stream in order.
    pub fn train(&mut self, scenario: &RLScenario) -> Result<TrainingReport, TrainingError> {
        let stream = scenario.train_stream();
        if stream.is_empty() {
            return Err(TrainingError::EmptyStream);
        }
        let eval_stream = scenario.eval_stream();
        let mut forgetting = ForgettingMatrix::new(stream.len(), eval_stream.len());
        let mut evals = vec![None; stream.len()];

        fire(&mut self.plugins, Hook::BeforeTraining, &mut self.state, self.algorithm.as_ref())?;
        for exp in stream {
            self.train_experience(exp, eval_stream)?;
            let last = exp.experience_index + 1 == stream.len();
            if !eval_stream.is_empty() && (self.config.eval.after_each_experience || last) {
                let summaries = self.evaluate(eval_stream, self.config.eval.n_episodes)?;
                let means: Vec<f64> = summaries.iter().map(|s| s.mean_return).collect();
                forgetting.set_row(exp.experience_index, &means)?;
                evals[exp.experience_index] = Some(summaries);
            }
        }
        fire(&mut self.plugins, Hook::AfterTraining, &mut self.state, self.algorithm.as_ref())?;
        self.state.metrics.flush()?;

        Ok(TrainingReport {
            records: self.state.metrics.records().to_vec(),
            forgetting,
            evals,
            total_env_steps: self.state.global_step,
            total_updates: self.state.total_updates,
            skipped_updates: self.state.skipped_updates,
        })
    }

    fn train_experience(
        &mut self,
        exp: &RLExperience,
        eval_stream: &[RLExperience],
    ) -> Result<(), TrainingError> {
        let seed = self
            .config
            .env_seed
            .wrapping_add(EXPERIENCE_SEED_STRIDE.wrapping_mul(exp.experience_index as u64));
        let mut venv = VectorizedEnv::new(&exp.env_factory, exp.n_envs, seed, self.config.vec_mode)?;
        self.check_experience(exp, &venv)?;
        let n = venv.n_actors();

        self.state.experience = Some(ExperienceMeta::of(exp));
        self.state
            .metrics
            .set_context(Phase::Train, exp.experience_index);
        self.algorithm.begin_experience(&self.state.model)?;
        fire(&mut self.plugins, Hook::BeforeTrainingExp, &mut self.state, self.algorithm.as_ref())?;

        let budget = self.config.budget;
        let mut obs = venv.reset()?;
        let mut tracker = EpisodeTracker::new(n);
        let mut exp_steps = 0u64;
        let mut exp_episodes = 0u64;
        let progress = |steps: u64, episodes: u64| -> f64 {
            let u = budget.updates_per_experience as f64;
            match budget.rollout {
                RolloutCondition::Steps(k) => steps as f64 / (u * k as f64 * n as f64),
                RolloutCondition::Episodes(k) => episodes as f64 / (u * k as f64),
            }
        };

        for update in 0..budget.updates_per_experience {
            fire(&mut self.plugins, Hook::BeforeRollout, &mut self.state, self.algorithm.as_ref())?;

            let mut rollout = Rollout::new(n);
            let mut rollout_steps = 0usize;
            let mut rollout_episodes = 0usize;
            loop {
                let actions = self.algorithm.sample_actions(
                    &self.state.model,
                    &obs_tensor(&obs)?,
                    progress(exp_steps, exp_episodes),
                    &mut self.rng,
                )?;
                let actions: Vec<Action> = actions.into_iter().map(Action::Discrete).collect();
                let vs = venv.step(&actions)?;
                self.state.global_step += n as u64;
                exp_steps += n as u64;
                self.state.metrics.set_global_step(self.state.global_step)?;
                for i in 0..n {
                    let next = vs.terminal_obs[i].as_ref().unwrap_or(&vs.obs[i]);
                    rollout.push(
                        i,
                        Step::new(&obs[i], &actions[i], vs.rewards[i], vs.dones[i], next, exp.task_label)?,
                    )?;
                    if let Some((ret, len)) = tracker.step(i, vs.rewards[i], vs.dones[i]) {
                        self.state.metrics.record_episode(ret, len)?;
                        rollout_episodes += 1;
                        exp_episodes += 1;
                    }
                }
                obs = vs.obs;
                rollout_steps += 1;
                let finished = match budget.rollout {
                    RolloutCondition::Steps(k) => rollout_steps >= k,
                    RolloutCondition::Episodes(k) => rollout_episodes >= k,
                };
                if finished {
                    break;
                }
            }
            self.state.rollout = rollout;
            fire(&mut self.plugins, Hook::AfterRollout, &mut self.state, self.algorithm.as_ref())?;

            let batch = self
                .algorithm
                .prepare_batch(&self.state.model, &self.state.rollout)?;
            self.state.update_skipped = batch.is_none();
            self.state.update_batch = batch.unwrap_or_default();
            self.state.loss = LossAccumulator::default();
            fire(&mut self.plugins, Hook::BeforeUpdate, &mut self.state, self.algorithm.as_ref())?;

            if self.state.update_skipped {
                self.state.skipped_updates += 1;
            } else {
                let (base, mut grads) = self
                    .algorithm
                    .loss_and_grads(&mut self.state.model, &self.state.update_batch)?;
                self.state.loss.base = base;
                if let Some(extra) = &self.state.loss.extra_grad {
                    grads.add_scaled(1.0, extra)?;
                }
                if let Some(max) = self.config.max_grad_norm {
                    clip_grad_norm(&mut grads, max);
                }
                let mut params = self.state.model.flatten_params();
                self.state.optimizer.step(&mut params, &grads)?;
                self.state.model.unflatten_params(&params)?;
                self.algorithm.after_update(&self.state.model);
            }
            self.state.total_updates += 1;
            fire(&mut self.plugins, Hook::AfterUpdate, &mut self.state, self.algorithm.as_ref())?;

            if (update + 1) % self.config.log_interval == 0 {
                let p = progress(exp_steps, exp_episodes);
                if !self.state.update_skipped {
                    self.state.metrics.record_custom("loss", self.state.loss.total())?;
                    if self.state.loss.penalty != 0.0 {
                        self.state.metrics.record_custom("penalty", self.state.loss.penalty)?;
                    }
                }
                for (name, v) in self.algorithm.scalars(p) {
                    self.state.metrics.record_custom(name, v)?;
                }
                self.state
                    .metrics
                    .record_custom("skipped_updates", self.state.skipped_updates as f64)?;
            }
            if let Some(k) = self.config.eval.every_n_updates {
                if (update + 1) % k == 0 && !eval_stream.is_empty() {
                    self.evaluate(eval_stream, self.config.eval.n_episodes)?;
                    self.state
                        .metrics
                        .set_context(Phase::Train, exp.experience_index);
                }
            }
        }
        fire(&mut self.plugins, Hook::AfterTrainingExp, &mut self.state, self.algorithm.as_ref())?;
        Ok(())
    }

    /// Greedy evaluation, `n_episodes` per eval experience. Nothing is
    /// learned and no replay is touched.
    pub fn evaluate(
        &mut self,
        eval_stream: &[RLExperience],
        n_episodes: usize,
    ) -> Result<Vec<EvalSummary>, TrainingError> {
        if n_episodes == 0 {
            return Err(TrainingError::InvalidEpisodeCount);
        }
        let mut out = Vec::with_capacity(eval_stream.len());
        let train_ctx = (self.state.metrics.phase(), self.state.metrics.experience_index());
        for e in eval_stream {
            let meta = ExperienceMeta::of(e);
            self.state.eval_experience = Some(meta.clone());
            fire(&mut self.plugins, Hook::BeforeEvalExp, &mut self.state, self.algorithm.as_ref())?;
            self.state.metrics.set_context(Phase::Eval, e.experience_index);

            let seed = self
                .config
                .eval
                .seed
                .wrapping_add(EXPERIENCE_SEED_STRIDE.wrapping_mul(e.experience_index as u64));
            let mut venv = VectorizedEnv::new(&e.env_factory, 1, seed, VecMode::Serial)?;
            self.check_experience(e, &venv)?;
            let mut obs = venv.reset()?;
            let mut tracker = EpisodeTracker::new(1);
            let mut returns = Vec::with_capacity(n_episodes);
            let mut lengths = Vec::with_capacity(n_episodes);
            while returns.len() < n_episodes {
                let a = self
                    .algorithm
                    .greedy_actions(&self.state.model, &obs_tensor(&obs)?)?;
                let vs = venv.step(&[Action::Discrete(a[0])])?;
                if let Some((ret, len)) = tracker.step(0, vs.rewards[0], vs.dones[0]) {
                    self.state.metrics.record_episode(ret, len)?;
                    returns.push(ret);
                    lengths.push(len);
                }
                obs = vs.obs;
            }
            out.push(EvalSummary::new(&meta, returns, lengths));
            fire(&mut self.plugins, Hook::AfterEvalExp, &mut self.state, self.algorithm.as_ref())?;
            self.state.eval_experience = None;
        }
        self.state.metrics.set_context(train_ctx.0, train_ctx.1);
        Ok(out)
    }

    /// Model parameters plus every plugin's saved state.
    pub fn checkpoint(&self) -> Result<Checkpoint, TrainingError> {
        let mut ck = Checkpoint::new(self.state.model.clone());
        for (i, p) in self.plugins.iter().enumerate() {
            if let Some(bytes) = p.save_state()? {
                ck.sections.insert(format!("plugin.{i}.{}", p.name()), bytes);
            }
        }
        Ok(ck)
    }

    /// Load parameters and plugin state saved by [`Strategy::checkpoint`].
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), TrainingError> {
        if ck.model.architecture() != self.state.model.architecture() {
            return Err(TrainingError::InvalidConfig(
                "checkpoint architecture does not match the model".into(),
            ));
        }
        self.state
            .model
            .unflatten_params(&ck.model.flatten_params())?;
        for (i, p) in self.plugins.iter_mut().enumerate() {
            if let Some(bytes) = ck.sections.get(&format!("plugin.{i}.{}", p.name())) {
                p.load_state(bytes)?;
            }
        }
        Ok(())
    }
}
