//! The environment contract shared by every built-in environment, wrapper and
//! the actor pool.
//!
//! An [`Environment`] is reset with an optional seed and then stepped one
//! action at a time until it reports `done`. Stepping a finished episode is an
//! error; automatic resets only exist at the [`crate::vec_env`] level.

mod wrappers;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use wrappers::{
    wrap, ActionRemap, FrameStack, ObservationNormalize, ReducedActionSet, RewardClip, TimeLimit,
    WrapperSpec,
};

/// Flat string to string map returned alongside each transition.
pub type Info = BTreeMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} is not a member of {space}")]
    ActionOutOfSpace { action: String, space: String },
    #[error("step called after the episode ended; reset first")]
    EpisodeAlreadyDone,
    #[error("step called before reset")]
    NotReset,
    #[error("incompatible space: {0}")]
    IncompatibleSpace(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("actor {index}: {source}")]
    Actor {
        index: usize,
        #[source]
        source: Box<EnvError>,
    },
    #[error("the task stream is exhausted")]
    StreamExhausted,
    #[error("environment failure: {0}")]
    Other(String),
}

/// Action or observation space.
#[derive(Debug, Clone, PartialEq)]
pub enum Space {
    Discrete(usize),
    Box {
        low: Vec<f64>,
        high: Vec<f64>,
        shape: Vec<usize>,
    },
}

impl Space {
    pub fn discrete(n: usize) -> Result<Self, EnvError> {
        if n == 0 {
            return Err(EnvError::IncompatibleSpace(
                "discrete space needs at least one action".into(),
            ));
        }
        Ok(Space::Discrete(n))
    }

    pub fn boxed(low: Vec<f64>, high: Vec<f64>, shape: Vec<usize>) -> Result<Self, EnvError> {
        let n: usize = shape.iter().product();
        if low.len() != n || high.len() != n {
            return Err(EnvError::IncompatibleSpace(format!(
                "box bounds have {} / {} entries but shape {:?} holds {}",
                low.len(),
                high.len(),
                shape,
                n
            )));
        }
        if let Some(i) = (0..n).find(|&i| low[i].partial_cmp(&high[i]).is_none_or(|o| o.is_gt())) {
            return Err(EnvError::IncompatibleSpace(format!(
                "box bound {i}: low {} > high {}",
                low[i], high[i]
            )));
        }
        Ok(Space::Box { low, high, shape })
    }

    /// Box of the given shape with every bound at `±f64::MAX`.
    pub fn unbounded(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Space::Box {
            low: vec![-f64::MAX; n],
            high: vec![f64::MAX; n],
            shape,
        }
    }

    /// Number of discrete actions, if discrete.
    pub fn n(&self) -> Option<usize> {
        match self {
            Space::Discrete(n) => Some(*n),
            Space::Box { .. } => None,
        }
    }

    /// Total element count (1 for a discrete space).
    pub fn flat_dim(&self) -> usize {
        match self {
            Space::Discrete(_) => 1,
            Space::Box { shape, .. } => shape.iter().product(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (Space::Discrete(n), Action::Discrete(a)) => a < n,
            (Space::Box { low, high, .. }, Action::Continuous(v)) => {
                v.len() == low.len()
                    && v.iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (lo, hi))| x.is_finite() && lo <= x && x <= hi)
            }
            _ => false,
        }
    }

    pub fn contains_obs(&self, obs: &Observation) -> bool {
        match self {
            Space::Discrete(n) => {
                obs.data.len() == 1 && obs.data[0] >= 0.0 && obs.data[0] < *n as f64
            }
            Space::Box { low, high, shape } => {
                obs.shape == *shape
                    && obs
                        .data
                        .iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (lo, hi))| lo <= x && x <= hi)
            }
        }
    }

    pub(crate) fn check(&self, action: &Action) -> Result<(), EnvError> {
        if self.contains(action) {
            Ok(())
        } else {
            Err(EnvError::ActionOutOfSpace {
                action: action.to_string(),
                space: self.to_string(),
            })
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Discrete(n) => write!(f, "Discrete({n})"),
            Space::Box { shape, .. } => write!(f, "Box({shape:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Discrete(a) => write!(f, "{a}"),
            Action::Continuous(v) => write!(f, "{v:?}"),
        }
    }
}

impl From<usize> for Action {
    fn from(a: usize) -> Self {
        Action::Discrete(a)
    }
}

/// A flat row-major observation with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Observation {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, EnvError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(EnvError::Other(format!(
                "observation of {} values does not fit shape {:?}",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::Other("observation contains NaN or Inf".into()));
        }
        Ok(Observation { data, shape })
    }

    /// 1-D observation. Panics on non-finite entries.
    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Observation::new(data, vec![n]).expect("finite observation")
    }

    pub fn one_hot(index: usize, len: usize) -> Self {
        let mut data = vec![0.0; len];
        data[index] = 1.0;
        Observation {
            data,
            shape: vec![len],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: Info,
}

/// Gym-style environment.
///
/// Resetting with the same seed must reproduce the initial observation and,
/// under the same actions, the whole trajectory. `reset(None)` continues from
/// the environment's internal random stream.
pub trait Environment: Send {
    fn reset(&mut self, seed: Option<u64>) -> Observation;

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;

    fn action_space(&self) -> Space;

    fn observation_space(&self) -> Space;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }

    fn action_space(&self) -> Space {
        (**self).action_space()
    }

    fn observation_space(&self) -> Space {
        (**self).observation_space()
    }
}

/// Tracks whether an episode is running; shared by built-in environments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) enum EpisodeStatus {
    #[default]
    NotStarted,
    Running,
    Done,
}

impl EpisodeStatus {
    pub(crate) fn ensure_running(self) -> Result<(), EnvError> {
        match self {
            EpisodeStatus::Running => Ok(()),
            EpisodeStatus::NotStarted => Err(EnvError::NotReset),
            EpisodeStatus::Done => Err(EnvError::EpisodeAlreadyDone),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_space_needs_an_action() {
        assert!(Space::discrete(0).is_err());
        let s = Space::discrete(3).unwrap();
        assert!(s.contains(&Action::Discrete(2)));
        assert!(!s.contains(&Action::Discrete(3)));
        assert!(!s.contains(&Action::Continuous(vec![0.0])));
    }

    #[test]
    fn box_space_validates_bounds() {
        assert!(Space::boxed(vec![0.0], vec![1.0, 2.0], vec![2]).is_err());
        assert!(Space::boxed(vec![1.0, 0.0], vec![0.0, 1.0], vec![2]).is_err());
        let s = Space::boxed(vec![-1.0, -1.0], vec![1.0, 1.0], vec![2]).unwrap();
        assert!(s.contains(&Action::Continuous(vec![0.5, -1.0])));
        assert!(!s.contains(&Action::Continuous(vec![1.5, 0.0])));
        assert!(s.contains_obs(&Observation::vector(vec![0.0, 0.0])));
        assert!(!s.contains_obs(&Observation::vector(vec![0.0])));
    }

    #[test]
    fn observation_rejects_bad_shapes_and_nan() {
        assert!(Observation::new(vec![1.0, 2.0], vec![3]).is_err());
        assert!(Observation::new(vec![f64::NAN], vec![1]).is_err());
        let o = Observation::new(vec![1.0; 6], vec![2, 3]).unwrap();
        assert_eq!(o.len(), 6);
    }
}
