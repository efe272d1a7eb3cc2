//! Metric records, windowed smoothing, loggers and the forgetting matrix.

mod forgetting;
mod loggers;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forgetting::ForgettingMatrix;
pub use loggers::{read_csv, read_jsonl, CsvLogger, JsonlLogger, MetricSink, StdoutLogger};

pub const DEFAULT_WINDOW: usize = 10;

pub const EP_RETURN: &str = "ep_return";
pub const EP_RETURN_WINDOWED: &str = "ep_return_windowed";
pub const EP_LENGTH: &str = "ep_length";
pub const EP_LENGTH_WINDOWED: &str = "ep_length_windowed";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric {name:?} has non-finite value {value}")]
    NonFiniteValue { name: String, value: f64 },
    #[error("metric name must not be empty")]
    EmptyName,
    #[error("global step went backwards from {from} to {to}")]
    StepWentBackwards { from: u64, to: u64 },
    #[error("forgetting matrix: {0}")]
    Forgetting(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        })
    }
}

/// One logged scalar. Field order is the on-disk column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub global_step: u64,
    pub experience_index: usize,
    pub phase: Phase,
    pub metric_name: String,
    pub value: f64,
}

/// Mean over the last `window` pushed values.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedScalar {
    window: usize,
    values: VecDeque<f64>,
    sum: f64,
}

impl WindowedScalar {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        WindowedScalar {
            window,
            values: VecDeque::with_capacity(window),
            sum: 0.0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Push a value and return the new mean.
    pub fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
        // recomputing keeps the mean exact instead of drifting with a
        // running sum
        self.sum = self.values.iter().sum();
        self.mean().unwrap()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.sum / self.values.len() as f64)
    }
}

/// Collects metric records, keeps per-series windows and forwards every
/// record to the attached sinks.
pub struct Metrics {
    window: usize,
    windows: BTreeMap<(Phase, usize, String), WindowedScalar>,
    records: Vec<MetricRecord>,
    sinks: Vec<Box<dyn MetricSink>>,
    global_step: u64,
    experience_index: usize,
    phase: Phase,
}

impl fmt::Debug for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Metrics")
            .field("window", &self.window)
            .field("records", &self.records.len())
            .field("sinks", &self.sinks.len())
            .field("global_step", &self.global_step)
            .field("experience_index", &self.experience_index)
            .field("phase", &self.phase)
            .finish()
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics::new(DEFAULT_WINDOW)
    }
}

impl Metrics {
    pub fn new(window: usize) -> Self {
        Metrics {
            window: window.max(1),
            windows: BTreeMap::new(),
            records: Vec::new(),
            sinks: Vec::new(),
            global_step: 0,
            experience_index: 0,
            phase: Phase::Train,
        }
    }

    pub fn add_sink(&mut self, sink: Box<dyn MetricSink>) {
        self.sinks.push(sink);
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<MetricRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn experience_index(&self) -> usize {
        self.experience_index
    }

    pub fn set_global_step(&mut self, step: u64) -> Result<(), MetricsError> {
        if step < self.global_step {
            return Err(MetricsError::StepWentBackwards {
                from: self.global_step,
                to: step,
            });
        }
        self.global_step = step;
        Ok(())
    }

    pub fn set_context(&mut self, phase: Phase, experience_index: usize) {
        self.phase = phase;
        self.experience_index = experience_index;
    }

    /// Current windowed mean of a series, if it has values.
    pub fn windowed(&self, phase: Phase, experience_index: usize, name: &str) -> Option<f64> {
        self.windows
            .get(&(phase, experience_index, name.to_string()))
            .and_then(WindowedScalar::mean)
    }

    fn emit(&mut self, name: &str, value: f64) -> Result<(), MetricsError> {
        if name.is_empty() {
            return Err(MetricsError::EmptyName);
        }
        if !value.is_finite() {
            return Err(MetricsError::NonFiniteValue {
                name: name.to_string(),
                value,
            });
        }
        let record = MetricRecord {
            global_step: self.global_step,
            experience_index: self.experience_index,
            phase: self.phase,
            metric_name: name.to_string(),
            value,
        };
        for sink in &mut self.sinks {
            sink.write(&record)?;
        }
        self.records.push(record);
        Ok(())
    }

    fn push_windowed(&mut self, name: &str, value: f64) -> f64 {
        let window = self.window;
        self.windows
            .entry((self.phase, self.experience_index, name.to_string()))
            .or_insert_with(|| WindowedScalar::new(window))
            .push(value)
    }

    /// Record a finished episode: raw and windowed return and length.
    pub fn record_episode(&mut self, ep_return: f64, length: usize) -> Result<(), MetricsError> {
        if !ep_return.is_finite() {
            return Err(MetricsError::NonFiniteValue {
                name: EP_RETURN.into(),
                value: ep_return,
            });
        }
        let len = length as f64;
        let wr = self.push_windowed(EP_RETURN, ep_return);
        let wl = self.push_windowed(EP_LENGTH, len);
        self.emit(EP_RETURN, ep_return)?;
        self.emit(EP_RETURN_WINDOWED, wr)?;
        self.emit(EP_LENGTH, len)?;
        self.emit(EP_LENGTH_WINDOWED, wl)
    }

    /// Record any named scalar at the current step and phase.
    pub fn record_custom(&mut self, name: &str, value: f64) -> Result<(), MetricsError> {
        self.emit(name, value)
    }

    pub fn flush(&mut self) -> Result<(), MetricsError> {
        for sink in &mut self.sinks {
            sink.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_of_three() {
        let mut w = WindowedScalar::new(3);
        let means: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| w.push(v)).collect();
        assert_eq!(means, [1.0, 1.5, 2.0, 3.0]);
        let mut single = WindowedScalar::new(10);
        assert_eq!(single.push(-7.25), -7.25);
    }

    #[test]
    fn episode_records() {
        let mut m = Metrics::new(2);
        m.set_global_step(4).unwrap();
        m.record_episode(1.0, 3).unwrap();
        m.record_episode(3.0, 5).unwrap();
        let names: Vec<&str> = m.records().iter().map(|r| r.metric_name.as_str()).collect();
        assert_eq!(names[..4], [EP_RETURN, EP_RETURN_WINDOWED, EP_LENGTH, EP_LENGTH_WINDOWED]);
        assert_eq!(m.records()[5].value, 2.0);
        assert_eq!(m.windowed(Phase::Train, 0, EP_LENGTH), Some(4.0));
        assert!(m.records().iter().all(|r| r.global_step == 4));
    }

    #[test]
    fn custom_values_must_be_finite_and_named() {
        let mut m = Metrics::default();
        m.record_custom("epsilon", 0.5).unwrap();
        assert_eq!(m.records()[0].phase, Phase::Train);
        assert!(matches!(m.record_custom("loss", f64::NAN), Err(MetricsError::NonFiniteValue { .. })));
        assert!(matches!(m.record_custom("", 1.0), Err(MetricsError::EmptyName)));
        m.record_custom("a", 1.0).unwrap();
        m.record_custom("b", 2.0).unwrap();
        let names: Vec<&str> = m.records().iter().map(|r| r.metric_name.as_str()).collect();
        assert_eq!(names, ["epsilon", "a", "b"]);
    }

    #[test]
    fn steps_never_go_backwards() {
        let mut m = Metrics::default();
        m.set_global_step(10).unwrap();
        assert!(m.set_global_step(9).is_err());
        m.set_global_step(10).unwrap();
    }

    #[test]
    fn windows_are_per_phase_and_experience() {
        let mut m = Metrics::new(10);
        m.record_episode(1.0, 1).unwrap();
        m.set_context(Phase::Eval, 0);
        m.record_episode(5.0, 1).unwrap();
        assert_eq!(m.windowed(Phase::Train, 0, EP_RETURN), Some(1.0));
        assert_eq!(m.windowed(Phase::Eval, 0, EP_RETURN), Some(5.0));
    }
}
