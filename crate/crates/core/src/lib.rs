//! Continual reinforcement learning: a stream of experiences, agents trained
//! through a hookable strategy loop, and per-task evaluation after every
//! experience.
//!
//! ```no_run
//! use streamrl_core::benchmarks::{gym_benchmark_generator, EnvFactory, EnvSpec, StreamOrder};
//! use streamrl_core::env::Environment;
//! use streamrl_core::envs::{GridScene, GridWorld};
//! use streamrl_core::nn::{Activation, Mlp, Optimizer};
//! use streamrl_core::training::*;
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let scene = GridScene::empty(5, 5, (0, 0), (4, 4))?;
//! let spec = EnvSpec::new("open5", EnvFactory::new(move || {
//!     Ok(Box::new(GridWorld::new(scene.clone())) as Box<dyn Environment>)
//! }));
//! let scenario = gym_benchmark_generator(&[spec], 1, &StreamOrder::Explicit(vec![0]), 1, None)?;
//! let model = Mlp::new(25, &[64], Activation::Relu, &[(Q_HEAD, 4)], 0)?;
//! let budget = TrainingBudget { updates_per_experience: 20_000, rollout: RolloutCondition::Steps(1) };
//! let mut strategy = Strategy::new(
//!     Box::new(Dqn::new(DqnConfig::default())?),
//!     model,
//!     Optimizer::adam(1e-3)?,
//!     StrategyConfig::new(budget),
//! )?;
//! let report = strategy.train(&scenario)?;
//! println!("{:?}", report.forgetting);
//! # Ok(())
//! # }
//! ```

pub mod env;
pub mod envs;
pub mod nn;
pub mod benchmarks;
pub mod vec_env;
pub mod evaluation;
pub mod training;
pub mod plugins;
pub mod task_stream;
pub mod experiment;
