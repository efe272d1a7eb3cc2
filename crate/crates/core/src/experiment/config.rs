use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::benchmarks::{
    continual_control_generator, gym_benchmark_generator, EnvFactory, EnvSpec, RLScenario,
    StreamOrder,
};
use crate::env::{Environment, WrapperSpec};
use crate::envs::{Bandit, BanditParams, CartPole, CartPoleOverrides, CartPoleParams, GridScene, GridWorld};
use crate::nn::{Activation, OptimizerConfig};
use crate::plugins::PluginConfig;
use crate::task_stream::{task_stream_benchmark_generator, SwapPolicy, TaskConfig};
use crate::training::{A2cConfig, DqnConfig, EvalConfig, TrainingBudget};
use crate::vec_env::VecMode;

/// A whole experiment: scenario, strategy, plugins, budget, seeds,
/// evaluation and logging. Every section except `plugins`, `eval`,
/// `logging` and `output_dir` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub strategy: StrategySection,
    #[serde(default)]
    pub plugins: Vec<PluginConfig>,
    pub budget: TrainingBudget,
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub logging: LoggingConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub env: u64,
    pub net: u64,
    pub sampling: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingConfig {
    /// Custom scalars are logged every this many updates.
    pub log_interval: usize,
    pub window: usize,
    /// Also print records to stdout.
    pub stdout: bool,
    /// Also write `metrics.csv`.
    pub csv: bool,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            log_interval: 100,
            window: crate::evaluation::DEFAULT_WINDOW,
            stdout: false,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Gym {
        envs: Vec<EnvConfig>,
        n_experiences: usize,
        order: OrderConfig,
        #[serde(default = "one")]
        n_parallel_envs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_envs: Option<Vec<EnvConfig>>,
    },
    ContinualControl {
        #[serde(default)]
        base: CartPoleParams,
        schedule: Vec<CartPoleOverrides>,
        #[serde(default = "one")]
        n_parallel_envs: usize,
    },
    TaskStream {
        tasks: Vec<TaskConfig>,
        /// Character maps, see [`GridScene::parse`].
        scenes: Vec<String>,
        swap_policy: SwapPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_experiences: Option<usize>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OrderConfig {
    Explicit(Vec<usize>),
    RandomSample { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    pub env: EnvKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wrappers: Vec<WrapperSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    Gridworld {
        map: String,
        #[serde(default = "default_step_reward")]
        step_reward: f64,
        #[serde(default = "default_goal_reward")]
        goal_reward: f64,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
    Cartpole(CartPoleOverrides),
    Bandit(BanditParams),
}

fn default_step_reward() -> f64 {
    -0.01
}

fn default_goal_reward() -> f64 {
    1.0
}

fn default_max_steps() -> usize {
    200
}

impl EnvConfig {
    pub fn spec(&self) -> Result<EnvSpec, ExperimentError> {
        let factory = match &self.env {
            EnvKind::Gridworld {
                map,
                step_reward,
                goal_reward,
                max_steps,
            } => {
                let scene = GridScene::parse(map)
                    .and_then(|s| s.with_rewards(*step_reward, *goal_reward))
                    .and_then(|s| s.with_max_steps(*max_steps))
                    .map_err(|e| ExperimentError::config(format!("env {:?}", self.name), e))?;
                EnvFactory::new(move || Ok(Box::new(GridWorld::new(scene.clone())) as Box<dyn Environment>))
            }
            EnvKind::Cartpole(o) => {
                let params = o.apply(&CartPoleParams::default());
                CartPole::new(params)
                    .map_err(|e| ExperimentError::config(format!("env {:?}", self.name), e))?;
                EnvFactory::new(move || Ok(Box::new(CartPole::new(params)?) as Box<dyn Environment>))
            }
            EnvKind::Bandit(p) => {
                Bandit::new(p.clone())
                    .map_err(|e| ExperimentError::config(format!("env {:?}", self.name), e))?;
                let p = p.clone();
                EnvFactory::new(move || Ok(Box::new(Bandit::new(p.clone())?) as Box<dyn Environment>))
            }
        };
        Ok(EnvSpec::new(&self.name, factory.wrapped(self.wrappers.clone())))
    }
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<RLScenario, ExperimentError> {
        let cfg = |e: &dyn std::fmt::Display| ExperimentError::config("scenario", e);
        match self {
            ScenarioConfig::Gym {
                envs,
                n_experiences,
                order,
                n_parallel_envs,
                eval_envs,
            } => {
                let specs = envs.iter().map(EnvConfig::spec).collect::<Result<Vec<_>, _>>()?;
                let eval = eval_envs
                    .as_ref()
                    .map(|e| e.iter().map(EnvConfig::spec).collect::<Result<Vec<_>, _>>())
                    .transpose()?;
                let order = match order {
                    OrderConfig::Explicit(v) => StreamOrder::Explicit(v.clone()),
                    OrderConfig::RandomSample { seed } => StreamOrder::RandomSample { seed: *seed },
                };
                gym_benchmark_generator(&specs, *n_experiences, &order, *n_parallel_envs, eval.as_deref())
                    .map_err(|e| cfg(&e))
            }
            ScenarioConfig::ContinualControl {
                base,
                schedule,
                n_parallel_envs,
            } => continual_control_generator(base, schedule, *n_parallel_envs).map_err(|e| cfg(&e)),
            ScenarioConfig::TaskStream {
                tasks,
                scenes,
                swap_policy,
                n_experiences,
            } => {
                let tasks = tasks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        t.build()
                            .map_err(|e| ExperimentError::config(format!("scenario.tasks[{i}]"), e))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let scenes = scenes
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        GridScene::parse(m)
                            .map_err(|e| ExperimentError::config(format!("scenario.scenes[{i}]"), e))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                task_stream_benchmark_generator(tasks, scenes, *swap_policy, *n_experiences)
                    .map(|(s, _)| s)
                    .map_err(|e| cfg(&e))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Dqn,
    DoubleDqn,
    A2c,
}

impl StrategyKind {
    pub const NAMES: [&'static str; 3] = ["dqn", "double_dqn", "a2c"];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "dqn" => Some(StrategyKind::Dqn),
            "double_dqn" => Some(StrategyKind::DoubleDqn),
            "a2c" => Some(StrategyKind::A2c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// One of `dqn`, `double_dqn`, `a2c`.
    pub name: String,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    #[serde(default)]
    pub vec_mode: VecMode,
    /// Fields of the algorithm's own configuration.
    #[serde(default)]
    pub hyperparameters: toml::Table,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-3)
}

/// Algorithm configuration resolved from a [`StrategySection`].
#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmConfig {
    Dqn(DqnConfig),
    A2c(A2cConfig),
}

impl StrategySection {
    pub fn kind(&self) -> Result<StrategyKind, ExperimentError> {
        StrategyKind::parse(&self.name).ok_or_else(|| {
            ExperimentError::config(
                "strategy.name",
                format!(
                    "unknown strategy {:?}; expected one of {}",
                    self.name,
                    StrategyKind::NAMES.join(", ")
                ),
            )
        })
    }

    pub fn algorithm(&self) -> Result<AlgorithmConfig, ExperimentError> {
        Ok(match self.kind()? {
            StrategyKind::Dqn => AlgorithmConfig::Dqn(self.hyper()?),
            StrategyKind::DoubleDqn => {
                let mut c: DqnConfig = self.hyper()?;
                c.double = true;
                AlgorithmConfig::Dqn(c)
            }
            StrategyKind::A2c => AlgorithmConfig::A2c(self.hyper()?),
        })
    }

    fn hyper<T: DeserializeOwned>(&self) -> Result<T, ExperimentError> {
        let value = toml::Value::Table(self.hyperparameters.clone());
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let at = if path == "." {
                "strategy.hyperparameters".to_string()
            } else {
                format!("strategy.hyperparameters.{path}")
            };
            ExperimentError::config(at, e.into_inner())
        })
    }

    /// The same section with every algorithm hyperparameter spelled out.
    pub fn expanded(&self) -> Result<StrategySection, ExperimentError> {
        let table = match self.algorithm()? {
            AlgorithmConfig::Dqn(c) => toml::Table::try_from(c),
            AlgorithmConfig::A2c(c) => toml::Table::try_from(c),
        }
        .map_err(|e| ExperimentError::config("strategy.hyperparameters", e))?;
        Ok(StrategySection {
            hyperparameters: table,
            ..self.clone()
        })
    }
}
