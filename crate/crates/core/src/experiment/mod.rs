//! Config-driven experiments: build a scenario, strategy and plugins from a
//! TOML file, train with full seeding and write the run's artifacts.
//!
//! A run writes into its output directory
//!
//! - `config.toml`: the effective config with every default spelled out,
//! - `metrics.jsonl` and `metrics.csv`: every metric record,
//! - `forgetting.csv`: the forgetting matrix,
//! - `checkpoint.bin`: model parameters and plugin state.
//!
//! The `STREAMRL_OUTPUT_DIR` environment variable overrides `output_dir`.

mod config;

use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::benchmarks::RLScenario;
use crate::evaluation::{read_jsonl, CsvLogger, JsonlLogger, MetricRecord, MetricsError, Phase, StdoutLogger};
use crate::nn::{Checkpoint, Mlp, NnError};
use crate::training::{
    A2c, Algorithm, Dqn, EvalSummary, Strategy, StrategyConfig, TrainingError, TrainingReport,
};

pub use config::{
    AlgorithmConfig, EnvConfig, EnvKind, ExperimentConfig, LoggingConfig, OrderConfig,
    ScenarioConfig, Seeds, StrategyKind, StrategySection,
};

pub const OUTPUT_DIR_ENV: &str = "STREAMRL_OUTPUT_DIR";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const FORGETTING_FILE: &str = "forgetting.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.jsonl";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at {at}: {message}")]
    Config { at: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metrics file {path}: {message}")]
    MetricsFile { path: PathBuf, message: String },
    #[error("unknown metric {name:?}; available: {}", available.join(", "))]
    UnknownMetric { name: String, available: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl ExperimentError {
    pub(crate) fn config(at: impl Into<String>, message: impl Display) -> Self {
        ExperimentError::Config {
            at: at.into(),
            message: message.to_string(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Errors caused by the user's input (config, checkpoint, metric name)
    /// rather than by a failure while running.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config { .. }
                | ExperimentError::Checkpoint(_)
                | ExperimentError::UnknownMetric { .. }
                | ExperimentError::MetricsFile { .. }
        )
    }
}

/// Parse a config, naming the offending key on failure.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ExperimentError::config("<document>", e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        ExperimentError::config(at, e.into_inner())
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ExperimentError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| ExperimentError::config(path.display().to_string(), e))?;
    parse_config(&text)
}

/// An experiment ready to run: everything in the config resolved and
/// validated.
pub struct Experiment {
    config: ExperimentConfig,
    scenario: RLScenario,
    strategy: Strategy,
    output_dir: PathBuf,
}

pub struct RunSummary {
    pub report: TrainingReport,
    pub output_dir: PathBuf,
}

impl Experiment {
    /// Resolve `config`. The output directory comes from
    /// `STREAMRL_OUTPUT_DIR` when set.
    pub fn build(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let override_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
        Experiment::build_with_output(config, override_dir)
    }

    pub fn build_with_output(
        mut config: ExperimentConfig,
        output_dir: Option<PathBuf>,
    ) -> Result<Self, ExperimentError> {
        if let Some(dir) = output_dir {
            config.output_dir = dir;
        }
        config.strategy = config.strategy.expanded()?;
        config
            .budget
            .validate()
            .map_err(|e| ExperimentError::config("budget", e))?;
        let scenario = config.scenario.build()?;

        let first = &scenario.train_stream()[0];
        let probe = first
            .env_factory
            .make()
            .map_err(|e| ExperimentError::config("scenario", e))?;
        let input_dim = probe.observation_space().flat_dim();
        let n_actions = probe.action_space().n().ok_or_else(|| {
            ExperimentError::config("scenario", "only discrete action spaces are supported")
        })?;
        drop(probe);

        let s = &config.strategy;
        let algorithm: Box<dyn Algorithm> = match s.algorithm()? {
            AlgorithmConfig::Dqn(c) => Box::new(
                Dqn::new(c).map_err(|e| ExperimentError::config("strategy.hyperparameters", e))?,
            ),
            AlgorithmConfig::A2c(c) => Box::new(
                A2c::new(c).map_err(|e| ExperimentError::config("strategy.hyperparameters", e))?,
            ),
        };
        let heads = algorithm.heads(n_actions);
        let heads: Vec<(&str, usize)> = heads.iter().map(|(n, k)| (n.as_str(), *k)).collect();
        let model = Mlp::new(input_dim, &s.hidden, s.activation, &heads, config.seeds.net)
            .map_err(|e| ExperimentError::config("strategy.hidden", e))?;
        let optimizer = s
            .optimizer
            .build()
            .map_err(|e| ExperimentError::config("strategy.optimizer", e))?;

        let mut sc = StrategyConfig::new(config.budget);
        sc.env_seed = config.seeds.env;
        sc.sampling_seed = config.seeds.sampling;
        sc.vec_mode = s.vec_mode;
        sc.eval = config.eval.clone();
        sc.log_interval = config.logging.log_interval;
        sc.window = config.logging.window;
        sc.max_grad_norm = s.max_grad_norm;
        let mut strategy = Strategy::new(algorithm, model, optimizer, sc)
            .map_err(|e| ExperimentError::config("strategy", e))?;
        for (i, p) in config.plugins.iter().enumerate() {
            let plugin = p
                .build()
                .map_err(|e| ExperimentError::config(format!("plugins[{i}]"), e))?;
            strategy.add_plugin(plugin);
        }
        let output_dir = config.output_dir.clone();
        Ok(Experiment {
            config,
            scenario,
            strategy,
            output_dir,
        })
    }

    /// The effective config, defaults expanded.
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn scenario(&self) -> &RLScenario {
        &self.scenario
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    fn prepare_output(&self) -> Result<(), ExperimentError> {
        fs::create_dir_all(&self.output_dir).map_err(|e| ExperimentError::io(&self.output_dir, e))
    }

    fn path(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }

    pub fn effective_config_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(&self.config).map_err(|e| ExperimentError::config("<effective config>", e))
    }

    /// Train on the whole stream and write every artifact.
    pub fn run(mut self) -> Result<RunSummary, ExperimentError> {
        self.prepare_output()?;
        let cfg_path = self.path(CONFIG_FILE);
        fs::write(&cfg_path, self.effective_config_toml()?)
            .map_err(|e| ExperimentError::io(&cfg_path, e))?;

        let metrics = self.strategy.metrics_mut();
        metrics.add_sink(Box::new(JsonlLogger::create(self.output_dir.join(METRICS_FILE))?));
        if self.config.logging.csv {
            metrics.add_sink(Box::new(CsvLogger::create(self.output_dir.join(METRICS_CSV_FILE))?));
        }
        if self.config.logging.stdout {
            metrics.add_sink(Box::new(StdoutLogger::new()));
        }

        let report = self.strategy.train(&self.scenario)?;

        let f_path = self.path(FORGETTING_FILE);
        let file = fs::File::create(&f_path).map_err(|e| ExperimentError::io(&f_path, e))?;
        report.forgetting.write_csv(io::BufWriter::new(file))?;
        let ck_path = self.path(CHECKPOINT_FILE);
        self.strategy.checkpoint()?.save(&ck_path)?;
        Ok(RunSummary {
            report,
            output_dir: self.output_dir,
        })
    }

    /// Load `checkpoint` and run greedy evaluation on the eval stream,
    /// writing its records to `eval_metrics.jsonl`.
    pub fn evaluate_checkpoint(
        mut self,
        checkpoint: impl AsRef<Path>,
    ) -> Result<Vec<EvalSummary>, ExperimentError> {
        let ck = Checkpoint::load(checkpoint.as_ref())
            .map_err(|e| ExperimentError::Checkpoint(format!("{}: {e}", checkpoint.as_ref().display())))?;
        if ck.architecture() != self.strategy.model().architecture() {
            return Err(ExperimentError::Checkpoint(format!(
                "network shape {:?} does not match the configured {:?}",
                ck.architecture(),
                self.strategy.model().architecture()
            )));
        }
        self.strategy
            .restore(&ck)
            .map_err(|e| ExperimentError::Checkpoint(e.to_string()))?;
        self.prepare_output()?;
        self.strategy
            .metrics_mut()
            .add_sink(Box::new(JsonlLogger::create(self.output_dir.join(EVAL_METRICS_FILE))?));
        let summaries = self
            .strategy
            .evaluate(self.scenario.eval_stream(), self.config.eval.n_episodes)?;
        self.strategy.metrics_mut().flush()?;
        Ok(summaries)
    }
}

/// Read a `metrics.jsonl` file written by a run.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>, ExperimentError> {
    let path = path.as_ref();
    let bad = |message: String| ExperimentError::MetricsFile {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| bad(e.to_string()))?;
    read_jsonl(io::BufReader::new(file)).map_err(|e| bad(e.to_string()))
}

/// `step,value` CSV of one metric, sorted by step (stable for equal steps).
/// `phase` narrows the records; a known name with no matching record gives
/// only the header.
pub fn plot_data(
    records: &[MetricRecord],
    name: &str,
    phase: Option<Phase>,
) -> Result<String, ExperimentError> {
    let mut available: Vec<String> = records.iter().map(|r| r.metric_name.clone()).collect();
    available.sort();
    available.dedup();
    if !available.iter().any(|n| n == name) {
        return Err(ExperimentError::UnknownMetric {
            name: name.to_string(),
            available,
        });
    }
    let mut rows: Vec<&MetricRecord> = records
        .iter()
        .filter(|r| r.metric_name == name && phase.is_none_or(|p| r.phase == p))
        .collect();
    rows.sort_by_key(|r| r.global_step);
    let mut out = Vec::new();
    writeln!(out, "step,value").expect("write to vec");
    for r in rows {
        writeln!(out, "{},{}", r.global_step, r.value).expect("write to vec");
    }
    Ok(String::from_utf8(out).expect("ascii"))
}
