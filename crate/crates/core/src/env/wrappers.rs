//! Composable environment wrappers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Action, EnvError, Environment, EpisodeStatus, Observation, Space, StepResult};

/// Declarative wrapper description, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WrapperSpec {
    TimeLimit { max_steps: usize },
    FrameStack { k: usize },
    ActionRemap { mapping: Vec<usize> },
    ReducedActionSet { subset: Vec<usize> },
    RewardClip { lo: f64, hi: f64 },
    ObservationNormalize,
}

/// Wrap `env` according to `spec`. Applying several specs in sequence makes
/// the last one outermost.
pub fn wrap(
    env: Box<dyn Environment>,
    spec: &WrapperSpec,
) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match spec {
        WrapperSpec::TimeLimit { max_steps } => Box::new(TimeLimit::new(env, *max_steps)?),
        WrapperSpec::FrameStack { k } => Box::new(FrameStack::new(env, *k)?),
        WrapperSpec::ActionRemap { mapping } => Box::new(ActionRemap::new(env, mapping.clone())?),
        WrapperSpec::ReducedActionSet { subset } => {
            Box::new(ReducedActionSet::new(env, subset.clone())?)
        }
        WrapperSpec::RewardClip { lo, hi } => Box::new(RewardClip::new(env, *lo, *hi)?),
        WrapperSpec::ObservationNormalize => Box::new(ObservationNormalize::new(env)),
    })
}

/// Ends the episode after `max_steps` steps, marking `info["time_limit"]`.
pub struct TimeLimit<E> {
    inner: E,
    max_steps: usize,
    elapsed: usize,
    status: EpisodeStatus,
}

impl<E: Environment> TimeLimit<E> {
    pub fn new(inner: E, max_steps: usize) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::InvalidParams("time limit must be at least 1".into()));
        }
        Ok(TimeLimit {
            inner,
            max_steps,
            elapsed: 0,
            status: EpisodeStatus::NotStarted,
        })
    }
}

impl<E: Environment> Environment for TimeLimit<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        self.elapsed = 0;
        self.status = EpisodeStatus::Running;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.status.ensure_running()?;
        let mut res = self.inner.step(action)?;
        self.elapsed += 1;
        if self.elapsed >= self.max_steps {
            res.done = true;
            res.info.insert("time_limit".into(), "true".into());
        }
        if res.done {
            self.status = EpisodeStatus::Done;
        }
        Ok(res)
    }

    fn action_space(&self) -> Space {
        self.inner.action_space()
    }

    fn observation_space(&self) -> Space {
        self.inner.observation_space()
    }
}

/// Concatenates the last `k` observations, oldest first. At episode start the
/// initial observation fills every slot.
pub struct FrameStack<E> {
    inner: E,
    k: usize,
    frames: VecDeque<Observation>,
    shape: Vec<usize>,
}

impl<E: Environment> FrameStack<E> {
    pub fn new(inner: E, k: usize) -> Result<Self, EnvError> {
        if k == 0 {
            return Err(EnvError::InvalidParams("frame stack needs k >= 1".into()));
        }
        let shape = match inner.observation_space() {
            Space::Box { shape, .. } if !shape.is_empty() => {
                let mut s = shape.clone();
                s[0] *= k;
                s
            }
            other => {
                return Err(EnvError::IncompatibleSpace(format!(
                    "frame stacking needs a box observation space, got {other}"
                )))
            }
        };
        Ok(FrameStack {
            inner,
            k,
            frames: VecDeque::with_capacity(k),
            shape,
        })
    }

    fn stacked(&self) -> Observation {
        let data: Vec<f64> = self.frames.iter().flat_map(|o| o.data().iter().copied()).collect();
        Observation::new(data, self.shape.clone()).expect("stacked frames match shape")
    }
}

impl<E: Environment> Environment for FrameStack<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        let obs = self.inner.reset(seed);
        self.frames.clear();
        for _ in 0..self.k {
            self.frames.push_back(obs.clone());
        }
        self.stacked()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let res = self.inner.step(action)?;
        if self.frames.len() == self.k {
            self.frames.pop_front();
        }
        self.frames.push_back(res.obs);
        Ok(StepResult {
            obs: self.stacked(),
            reward: res.reward,
            done: res.done,
            info: res.info,
        })
    }

    fn action_space(&self) -> Space {
        self.inner.action_space()
    }

    fn observation_space(&self) -> Space {
        match self.inner.observation_space() {
            Space::Box { low, high, .. } => Space::Box {
                low: low.repeat(self.k),
                high: high.repeat(self.k),
                shape: self.shape.clone(),
            },
            other => other,
        }
    }
}

fn inner_discrete_n(space: &Space, what: &str) -> Result<usize, EnvError> {
    space.n().ok_or_else(|| {
        EnvError::IncompatibleSpace(format!("{what} needs a discrete action space, got {space}"))
    })
}

fn check_indices(indices: &[usize], inner_n: usize, what: &str) -> Result<(), EnvError> {
    if indices.is_empty() {
        return Err(EnvError::IncompatibleSpace(format!("{what} must not be empty")));
    }
    if let Some(bad) = indices.iter().find(|&&i| i >= inner_n) {
        return Err(EnvError::IncompatibleSpace(format!(
            "{what} refers to action {bad} but the inner space has {inner_n}"
        )));
    }
    Ok(())
}

/// Maps outer action `i` to inner action `mapping[i]`.
pub struct ActionRemap<E> {
    inner: E,
    mapping: Vec<usize>,
}

impl<E: Environment> ActionRemap<E> {
    pub fn new(inner: E, mapping: Vec<usize>) -> Result<Self, EnvError> {
        let n = inner_discrete_n(&inner.action_space(), "action remap")?;
        check_indices(&mapping, n, "action remap")?;
        Ok(ActionRemap { inner, mapping })
    }
}

impl<E: Environment> Environment for ActionRemap<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.action_space().check(action)?;
        let a = action.index().expect("checked discrete");
        self.inner.step(&Action::Discrete(self.mapping[a]))
    }

    fn action_space(&self) -> Space {
        Space::Discrete(self.mapping.len())
    }

    fn observation_space(&self) -> Space {
        self.inner.observation_space()
    }
}

/// Restricts the agent to a subset of the inner actions, renumbered densely.
pub struct ReducedActionSet<E> {
    remap: ActionRemap<E>,
}

impl<E: Environment> ReducedActionSet<E> {
    pub fn new(inner: E, subset: Vec<usize>) -> Result<Self, EnvError> {
        let mut sorted = subset.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != subset.len() {
            return Err(EnvError::IncompatibleSpace(
                "reduced action set contains duplicates".into(),
            ));
        }
        Ok(ReducedActionSet {
            remap: ActionRemap::new(inner, subset)?,
        })
    }
}

impl<E: Environment> Environment for ReducedActionSet<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        self.remap.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.remap.step(action)
    }

    fn action_space(&self) -> Space {
        self.remap.action_space()
    }

    fn observation_space(&self) -> Space {
        self.remap.observation_space()
    }
}

pub struct RewardClip<E> {
    inner: E,
    lo: f64,
    hi: f64,
}

impl<E: Environment> RewardClip<E> {
    pub fn new(inner: E, lo: f64, hi: f64) -> Result<Self, EnvError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(EnvError::InvalidParams(format!(
                "reward clip bounds [{lo}, {hi}] are invalid"
            )));
        }
        Ok(RewardClip { inner, lo, hi })
    }
}

impl<E: Environment> Environment for RewardClip<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let mut res = self.inner.step(action)?;
        res.reward = res.reward.clamp(self.lo, self.hi);
        Ok(res)
    }

    fn action_space(&self) -> Space {
        self.inner.action_space()
    }

    fn observation_space(&self) -> Space {
        self.inner.observation_space()
    }
}

/// Normalizes observations with running per-element mean and variance
/// (Welford). Statistics persist across episodes and include the observation
/// being normalized.
pub struct ObservationNormalize<E> {
    inner: E,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

const NORMALIZE_EPS: f64 = 1e-8;

impl<E: Environment> ObservationNormalize<E> {
    pub fn new(inner: E) -> Self {
        ObservationNormalize {
            inner,
            count: 0,
            mean: Vec::new(),
            m2: Vec::new(),
        }
    }

    fn normalize(&mut self, obs: Observation) -> Observation {
        if self.mean.len() != obs.len() {
            self.count = 0;
            self.mean = vec![0.0; obs.len()];
            self.m2 = vec![0.0; obs.len()];
        }
        self.count += 1;
        let n = self.count as f64;
        let shape = obs.shape().to_vec();
        let data = obs
            .into_data()
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let delta = x - self.mean[i];
                self.mean[i] += delta / n;
                self.m2[i] += delta * (x - self.mean[i]);
                let var = self.m2[i] / n;
                (x - self.mean[i]) / (var + NORMALIZE_EPS).sqrt()
            })
            .collect();
        Observation::new(data, shape).expect("normalized observation is finite")
    }
}

impl<E: Environment> Environment for ObservationNormalize<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        let obs = self.inner.reset(seed);
        self.normalize(obs)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let res = self.inner.step(action)?;
        let obs = self.normalize(res.obs);
        Ok(StepResult { obs, ..res })
    }

    fn action_space(&self) -> Space {
        self.inner.action_space()
    }

    fn observation_space(&self) -> Space {
        let shape = match self.inner.observation_space() {
            Space::Box { shape, .. } => shape,
            Space::Discrete(_) => vec![1],
        };
        Space::unbounded(shape)
    }
}
