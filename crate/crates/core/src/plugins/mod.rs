//! Continual-learning plugins: EWC regularization, cross-experience replay
//! and a no-op baseline.

mod ewc;
mod replay;

use serde::{Deserialize, Serialize};

use crate::training::{Plugin, TrainingError};

pub use ewc::{ewc_penalty_and_grad, fisher_diagonal, Ewc, EwcConfig, EwcTask};
pub use replay::{ReplayMemory, ReplayMemoryConfig};

/// Plain fine-tuning: changes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Naive;

impl Plugin for Naive {
    fn name(&self) -> &str {
        "naive"
    }
}

/// Declarative plugin description, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PluginConfig {
    Naive,
    Ewc(EwcConfig),
    Replay(ReplayMemoryConfig),
}

impl PluginConfig {
    pub fn build(&self) -> Result<Box<dyn Plugin>, TrainingError> {
        Ok(match self {
            PluginConfig::Naive => Box::new(Naive),
            PluginConfig::Ewc(c) => Box::new(Ewc::new(c.clone())?),
            PluginConfig::Replay(c) => Box::new(ReplayMemory::new(c.clone())?),
        })
    }
}

pub(crate) fn plugin_error(name: &str, message: impl ToString) -> TrainingError {
    TrainingError::Plugin {
        name: name.to_string(),
        message: message.to_string(),
    }
}
