//! Experiences, scenarios and the generators that turn environment
//! specifications into ordered task streams.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{wrap, EnvError, Environment, WrapperSpec};
use crate::envs::{CartPole, CartPoleOverrides, CartPoleParams};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("no environment specifications given")]
    EmptySpecList,
    #[error("order entry {index} at position {position} does not name one of {n_specs} specs")]
    BadOrderIndex {
        position: usize,
        index: usize,
        n_specs: usize,
    },
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

type Ctor = dyn Fn() -> Result<Box<dyn Environment>, EnvError> + Send + Sync;

/// Cloneable environment constructor. Seeding happens through
/// [`Environment::reset`], so every call must build an identical fresh
/// environment.
#[derive(Clone)]
pub struct EnvFactory {
    ctor: Arc<Ctor>,
}

impl EnvFactory {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn() -> Result<Box<dyn Environment>, EnvError> + Send + Sync + 'static,
    {
        EnvFactory { ctor: Arc::new(f) }
    }

    pub fn make(&self) -> Result<Box<dyn Environment>, EnvError> {
        (self.ctor)()
    }

    /// Factory whose environments are wrapped by `wrappers`, innermost first.
    pub fn wrapped(&self, wrappers: Vec<WrapperSpec>) -> Self {
        if wrappers.is_empty() {
            return self.clone();
        }
        let inner = self.clone();
        EnvFactory::new(move || {
            let mut env = inner.make()?;
            for w in &wrappers {
                env = wrap(env, w)?;
            }
            Ok(env)
        })
    }
}

impl fmt::Debug for EnvFactory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EnvFactory")
    }
}

/// A named environment constructor offered to the generators.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub factory: EnvFactory,
}

impl EnvSpec {
    pub fn new(name: impl Into<String>, factory: EnvFactory) -> Self {
        EnvSpec {
            name: name.into(),
            factory,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RLExperience {
    pub name: String,
    pub env_factory: EnvFactory,
    pub task_label: usize,
    pub n_envs: usize,
    pub experience_index: usize,
}

#[derive(Debug, Clone)]
pub struct RLScenario {
    train_stream: Vec<RLExperience>,
    eval_stream: Vec<RLExperience>,
}

impl RLScenario {
    /// Checks that each stream is indexed `0..len` in order and that every
    /// experience has at least one actor.
    pub fn new(
        train_stream: Vec<RLExperience>,
        eval_stream: Vec<RLExperience>,
    ) -> Result<Self, BenchmarkError> {
        for (what, stream) in [("train", &train_stream), ("eval", &eval_stream)] {
            for (i, e) in stream.iter().enumerate() {
                if e.experience_index != i {
                    return Err(BenchmarkError::InvalidStream(format!(
                        "{what} experience at position {i} has index {}",
                        e.experience_index
                    )));
                }
                if e.n_envs == 0 {
                    return Err(BenchmarkError::InvalidStream(format!(
                        "{what} experience {i} has n_envs = 0"
                    )));
                }
            }
        }
        Ok(RLScenario {
            train_stream,
            eval_stream,
        })
    }

    pub fn train_stream(&self) -> &[RLExperience] {
        &self.train_stream
    }

    pub fn eval_stream(&self) -> &[RLExperience] {
        &self.eval_stream
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamOrder {
    /// Spec indices in stream order.
    Explicit(Vec<usize>),
    /// Specs drawn i.i.d. uniformly.
    RandomSample { seed: u64 },
}

fn experience(spec: &EnvSpec, label: usize, n_envs: usize, index: usize) -> RLExperience {
    RLExperience {
        name: spec.name.clone(),
        env_factory: spec.factory.clone(),
        task_label: label,
        n_envs,
        experience_index: index,
    }
}

/// Build a stream over `env_specs`. The task label of an experience is the
/// index of its spec, so revisiting an environment keeps its label. Without
/// `eval_specs` the eval stream holds one experience per distinct spec used
/// in training, ordered by label; explicit `eval_specs` are labelled by
/// position.
pub fn gym_benchmark_generator(
    env_specs: &[EnvSpec],
    n_experiences: usize,
    order: &StreamOrder,
    n_parallel_envs: usize,
    eval_specs: Option<&[EnvSpec]>,
) -> Result<RLScenario, BenchmarkError> {
    if env_specs.is_empty() {
        return Err(BenchmarkError::EmptySpecList);
    }
    if n_experiences == 0 {
        return Err(BenchmarkError::InvalidStream("n_experiences must be >= 1".into()));
    }
    let indices = match order {
        StreamOrder::Explicit(list) => {
            if list.len() != n_experiences {
                return Err(BenchmarkError::InvalidStream(format!(
                    "explicit order has {} entries but n_experiences is {n_experiences}",
                    list.len()
                )));
            }
            if let Some((position, &index)) =
                list.iter().enumerate().find(|(_, &i)| i >= env_specs.len())
            {
                return Err(BenchmarkError::BadOrderIndex {
                    position,
                    index,
                    n_specs: env_specs.len(),
                });
            }
            list.clone()
        }
        StreamOrder::RandomSample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n_experiences)
                .map(|_| rng.random_range(0..env_specs.len()))
                .collect()
        }
    };
    let train = indices
        .iter()
        .enumerate()
        .map(|(pos, &s)| experience(&env_specs[s], s, n_parallel_envs, pos))
        .collect();
    let eval = match eval_specs {
        Some(specs) => specs
            .iter()
            .enumerate()
            .map(|(i, s)| experience(s, i, 1, i))
            .collect(),
        None => indices
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(pos, s)| experience(&env_specs[s], s, 1, pos))
            .collect(),
    };
    RLScenario::new(train, eval)
}

/// One cart-pole experience per override set, labelled by schedule index.
/// The eval stream mirrors the train stream with one actor each.
pub fn continual_control_generator(
    base: &CartPoleParams,
    schedule: &[CartPoleOverrides],
    n_parallel_envs: usize,
) -> Result<RLScenario, BenchmarkError> {
    if schedule.is_empty() {
        return Err(BenchmarkError::InvalidStream("empty override schedule".into()));
    }
    let mut train = Vec::with_capacity(schedule.len());
    let mut eval = Vec::with_capacity(schedule.len());
    for (i, ov) in schedule.iter().enumerate() {
        let params = ov.apply(base);
        params.validate()?;
        let spec = EnvSpec::new(
            format!("cartpole[{i}]"),
            EnvFactory::new(move || Ok(Box::new(CartPole::new(params)?) as Box<dyn Environment>)),
        );
        train.push(experience(&spec, i, n_parallel_envs, i));
        eval.push(experience(&spec, i, 1, i));
    }
    RLScenario::new(train, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use crate::envs::{GridScene, GridWorld};

    fn grid_spec(name: &str, goal: (usize, usize)) -> EnvSpec {
        EnvSpec::new(
            name,
            EnvFactory::new(move || {
                Ok(Box::new(GridWorld::new(GridScene::empty(3, 3, (0, 0), goal)?)) as Box<dyn Environment>)
            }),
        )
    }

    fn labels(s: &[RLExperience]) -> Vec<usize> {
        s.iter().map(|e| e.task_label).collect()
    }

    #[test]
    fn explicit_orders_and_stable_labels() {
        let a = grid_spec("a", (2, 2));
        let b = grid_spec("b", (2, 0));
        let s = gym_benchmark_generator(std::slice::from_ref(&a), 3, &StreamOrder::Explicit(vec![0, 0, 0]), 1, None).unwrap();
        assert_eq!(labels(s.train_stream()), [0, 0, 0]);
        assert_eq!(s.eval_stream().len(), 1);

        let s = gym_benchmark_generator(&[a, b], 3, &StreamOrder::Explicit(vec![0, 1, 0]), 2, None).unwrap();
        assert_eq!(labels(s.train_stream()), [0, 1, 0]);
        assert_eq!(labels(s.eval_stream()), [0, 1]);
        assert!(s.train_stream().iter().all(|e| e.n_envs == 2));
        assert!(s.eval_stream().iter().all(|e| e.n_envs == 1));
        let idx: Vec<usize> = s.train_stream().iter().map(|e| e.experience_index).collect();
        assert_eq!(idx, [0, 1, 2]);
    }

    #[test]
    fn random_sample_is_reproducible() {
        let specs = [grid_spec("a", (2, 2)), grid_spec("b", (2, 0))];
        let order = StreamOrder::RandomSample { seed: 42 };
        let x = gym_benchmark_generator(&specs, 4, &order, 1, None).unwrap();
        let y = gym_benchmark_generator(&specs, 4, &order, 1, None).unwrap();
        assert_eq!(labels(x.train_stream()), labels(y.train_stream()));
        assert_eq!(x.train_stream().len(), 4);
    }

    #[test]
    fn generator_errors() {
        assert!(matches!(
            gym_benchmark_generator(&[], 1, &StreamOrder::Explicit(vec![0]), 1, None),
            Err(BenchmarkError::EmptySpecList)
        ));
        let specs = [grid_spec("a", (2, 2))];
        assert!(matches!(
            gym_benchmark_generator(&specs, 2, &StreamOrder::Explicit(vec![0, 1]), 1, None),
            Err(BenchmarkError::BadOrderIndex { position: 1, index: 1, .. })
        ));
        assert!(gym_benchmark_generator(&specs, 1, &StreamOrder::Explicit(vec![0]), 0, None).is_err());
    }

    #[test]
    fn wrappers_apply_to_factories() {
        let spec = grid_spec("a", (2, 2));
        let f = spec.factory.wrapped(vec![WrapperSpec::TimeLimit { max_steps: 1 }]);
        let mut env = f.make().unwrap();
        env.reset(Some(0));
        assert!(env.step(&Action::Discrete(0)).unwrap().done);
    }

    #[test]
    fn control_schedule_changes_dynamics() {
        let base = CartPoleParams::default();
        let schedule = [
            CartPoleOverrides { gravity: Some(9.8), ..Default::default() },
            CartPoleOverrides { gravity: Some(19.6), ..Default::default() },
        ];
        let s = continual_control_generator(&base, &schedule, 2).unwrap();
        assert_eq!(labels(s.train_stream()), [0, 1]);
        assert_eq!(labels(s.eval_stream()), [0, 1]);
        let mut first = Vec::new();
        for e in s.train_stream() {
            let mut env = e.env_factory.make().unwrap();
            env.reset(Some(7));
            first.push(env.step(&Action::Discrete(1)).unwrap().obs);
        }
        assert_ne!(first[0], first[1]);

        let bad = [CartPoleOverrides { gravity: Some(0.0), ..Default::default() }];
        assert!(matches!(
            continual_control_generator(&base, &bad, 1),
            Err(BenchmarkError::Env(EnvError::InvalidParams(_)))
        ));
    }
}
