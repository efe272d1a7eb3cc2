use std::fmt;
use std::sync::{Arc, Mutex};

use super::{Algorithm, StrategyState, TrainingError};

/// Callback points, in the order they fire within one experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hook {
    BeforeTraining,
    BeforeTrainingExp,
    BeforeRollout,
    AfterRollout,
    BeforeUpdate,
    AfterUpdate,
    AfterTrainingExp,
    AfterTraining,
    BeforeEvalExp,
    AfterEvalExp,
}

impl Hook {
    pub fn name(self) -> &'static str {
        match self {
            Hook::BeforeTraining => "before_training",
            Hook::BeforeTrainingExp => "before_training_exp",
            Hook::BeforeRollout => "before_rollout",
            Hook::AfterRollout => "after_rollout",
            Hook::BeforeUpdate => "before_update",
            Hook::AfterUpdate => "after_update",
            Hook::AfterTrainingExp => "after_training_exp",
            Hook::AfterTraining => "after_training",
            Hook::BeforeEvalExp => "before_eval_exp",
            Hook::AfterEvalExp => "after_eval_exp",
        }
    }
}

impl fmt::Display for Hook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a hook can see and change.
pub struct HookCtx<'a> {
    pub state: &'a mut StrategyState,
    pub algorithm: &'a dyn Algorithm,
}

/// Behaviour attached to a strategy. Every hook defaults to a no-op; plugins
/// run in registration order.
pub trait Plugin: Send {
    fn name(&self) -> &str;

    fn before_training(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn before_training_exp(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn before_rollout(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn after_rollout(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn before_update(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn after_update(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn after_training_exp(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn after_training(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn before_eval_exp(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }
    fn after_eval_exp(&mut self, _ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        Ok(())
    }

    /// Serialized plugin state for checkpoints.
    fn save_state(&self) -> Result<Option<Vec<u8>>, TrainingError> {
        Ok(None)
    }

    fn load_state(&mut self, _bytes: &[u8]) -> Result<(), TrainingError> {
        Ok(())
    }
}

pub(crate) fn dispatch(
    plugin: &mut dyn Plugin,
    hook: Hook,
    ctx: &mut HookCtx<'_>,
) -> Result<(), TrainingError> {
    match hook {
        Hook::BeforeTraining => plugin.before_training(ctx),
        Hook::BeforeTrainingExp => plugin.before_training_exp(ctx),
        Hook::BeforeRollout => plugin.before_rollout(ctx),
        Hook::AfterRollout => plugin.after_rollout(ctx),
        Hook::BeforeUpdate => plugin.before_update(ctx),
        Hook::AfterUpdate => plugin.after_update(ctx),
        Hook::AfterTrainingExp => plugin.after_training_exp(ctx),
        Hook::AfterTraining => plugin.after_training(ctx),
        Hook::BeforeEvalExp => plugin.before_eval_exp(ctx),
        Hook::AfterEvalExp => plugin.after_eval_exp(ctx),
    }
}

/// Appends `(label, hook)` to a shared log on every hook.
#[derive(Clone)]
pub struct HookRecorder {
    label: String,
    log: Arc<Mutex<Vec<(String, Hook)>>>,
}

impl HookRecorder {
    pub fn new(label: impl Into<String>) -> Self {
        HookRecorder::sharing(label, Arc::new(Mutex::new(Vec::new())))
    }

    /// Recorder writing into an existing log, so several recorders interleave.
    pub fn sharing(label: impl Into<String>, log: Arc<Mutex<Vec<(String, Hook)>>>) -> Self {
        HookRecorder {
            label: label.into(),
            log,
        }
    }

    pub fn log(&self) -> Arc<Mutex<Vec<(String, Hook)>>> {
        self.log.clone()
    }

    /// Hooks seen by this recorder's label, in firing order.
    pub fn hooks(&self) -> Vec<Hook> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|(l, _)| *l == self.label)
            .map(|(_, h)| *h)
            .collect()
    }

    fn record(&self, hook: Hook) -> Result<(), TrainingError> {
        self.log.lock().unwrap().push((self.label.clone(), hook));
        Ok(())
    }
}

impl Plugin for HookRecorder {
    fn name(&self) -> &str {
        "hook_recorder"
    }
    fn before_training(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::BeforeTraining)
    }
    fn before_training_exp(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::BeforeTrainingExp)
    }
    fn before_rollout(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::BeforeRollout)
    }
    fn after_rollout(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::AfterRollout)
    }
    fn before_update(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::BeforeUpdate)
    }
    fn after_update(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::AfterUpdate)
    }
    fn after_training_exp(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::AfterTrainingExp)
    }
    fn after_training(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::AfterTraining)
    }
    fn before_eval_exp(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::BeforeEvalExp)
    }
    fn after_eval_exp(&mut self, _: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.record(Hook::AfterEvalExp)
    }
}
