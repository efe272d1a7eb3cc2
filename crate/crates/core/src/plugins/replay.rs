use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plugin_error;
use crate::training::{HookCtx, Plugin, ReplayBuffer, Step, TrainingError, UpdateBatch, UpdateRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayMemoryConfig {
    pub capacity: usize,
    /// Fraction of each update batch replaced by memory samples.
    pub mix_ratio: f64,
    pub seed: u64,
}

impl Default for ReplayMemoryConfig {
    fn default() -> Self {
        ReplayMemoryConfig {
            capacity: 10_000,
            mix_ratio: 0.5,
            seed: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReplaySnapshot {
    storage: ReplayBuffer<Step>,
    rng: ChaCha8Rng,
}

/// Cross-experience rehearsal: stores every rollout step and swaps a share
/// of each update batch for stored steps, preferring other tasks.
pub struct ReplayMemory {
    config: ReplayMemoryConfig,
    storage: ReplayBuffer<Step>,
    rng: ChaCha8Rng,
}

impl ReplayMemory {
    pub fn new(config: ReplayMemoryConfig) -> Result<Self, TrainingError> {
        if config.capacity == 0 || !(0.0..=1.0).contains(&config.mix_ratio) {
            return Err(TrainingError::InvalidConfig(format!("replay: {config:?}")));
        }
        Ok(ReplayMemory {
            storage: ReplayBuffer::new(config.capacity),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn storage(&self) -> &ReplayBuffer<Step> {
        &self.storage
    }

    pub fn store<I: IntoIterator<Item = Step>>(&mut self, steps: I) {
        self.storage.extend(steps);
    }

    /// Replace `floor(mix_ratio * B)` distinct rows of `batch`. Returns the
    /// replaced row indices, in draw order.
    pub fn mix_into(&mut self, batch: &mut UpdateBatch, current_label: Option<usize>) -> Vec<usize> {
        let b = batch.len();
        let m = (self.config.mix_ratio * b as f64).floor() as usize;
        if self.storage.is_empty() || m == 0 {
            return Vec::new();
        }
        let mut pool: Vec<usize> = (0..self.storage.len())
            .filter(|&i| Some(self.storage.get(i).expect("in range").task_label) != current_label)
            .collect();
        if pool.is_empty() {
            pool = (0..self.storage.len()).collect();
        }
        let rows = index::sample(&mut self.rng, b, m.min(b)).into_vec();
        for &r in &rows {
            let pick = pool[self.rng.random_range(0..pool.len())];
            batch.rows[r] = UpdateRow {
                step: self.storage.get(pick).expect("in range").clone(),
                target_return: None,
            };
        }
        rows
    }
}

impl Plugin for ReplayMemory {
    fn name(&self) -> &str {
        "replay"
    }

    fn after_rollout(&mut self, ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        self.storage.extend(ctx.state.rollout.steps().cloned());
        Ok(())
    }

    fn before_update(&mut self, ctx: &mut HookCtx<'_>) -> Result<(), TrainingError> {
        if ctx.state.update_skipped {
            return Ok(());
        }
        let label = ctx.state.experience.as_ref().map(|e| e.task_label);
        self.mix_into(&mut ctx.state.update_batch, label);
        Ok(())
    }

    fn save_state(&self) -> Result<Option<Vec<u8>>, TrainingError> {
        let snap = ReplaySnapshot {
            storage: self.storage.clone(),
            rng: self.rng.clone(),
        };
        serde_json::to_vec(&snap)
            .map(Some)
            .map_err(|e| plugin_error("replay", e))
    }

    fn load_state(&mut self, bytes: &[u8]) -> Result<(), TrainingError> {
        let snap: ReplaySnapshot =
            serde_json::from_slice(bytes).map_err(|e| plugin_error("replay", e))?;
        if snap.storage.capacity() != self.config.capacity {
            return Err(plugin_error(
                "replay",
                format!(
                    "stored capacity {} differs from configured {}",
                    snap.storage.capacity(),
                    self.config.capacity
                ),
            ));
        }
        self.storage = snap.storage;
        self.rng = snap.rng;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(id: usize, label: usize) -> Step {
        Step {
            obs: vec![id as f64],
            action: 0,
            reward: 0.0,
            done: false,
            next_obs: vec![id as f64],
            task_label: label,
        }
    }

    fn batch(n: usize) -> UpdateBatch {
        UpdateBatch {
            rows: (0..n)
                .map(|i| UpdateRow {
                    step: step(1000 + i, 1),
                    target_return: Some(1.0),
                })
                .collect(),
        }
    }

    fn memory(ratio: f64, cap: usize) -> ReplayMemory {
        ReplayMemory::new(ReplayMemoryConfig {
            capacity: cap,
            mix_ratio: ratio,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn fifo_eviction_keeps_labels() {
        let mut m = memory(0.5, 3);
        m.store((0..5).map(|i| step(i, i % 2)));
        let kept: Vec<(f64, usize)> = m.storage().iter().map(|s| (s.obs[0], s.task_label)).collect();
        assert_eq!(kept, [(2.0, 0), (3.0, 1), (4.0, 0)]);
        m.store(Vec::new());
        assert_eq!(m.storage().len(), 3);
    }

    #[test]
    fn ratio_zero_leaves_batch_alone() {
        let mut m = memory(0.0, 10);
        m.store((0..5).map(|i| step(i, 0)));
        let mut b = batch(10);
        assert!(m.mix_into(&mut b, Some(1)).is_empty());
        assert_eq!(b, batch(10));
    }

    #[test]
    fn empty_memory_leaves_batch_alone() {
        let mut b = batch(10);
        assert!(memory(1.0, 10).mix_into(&mut b, Some(1)).is_empty());
        assert_eq!(b, batch(10));
    }

    #[test]
    fn ratio_one_replaces_every_row() {
        let mut m = memory(1.0, 10);
        m.store((0..5).map(|i| step(i, 0)));
        let mut b = batch(8);
        m.mix_into(&mut b, Some(1));
        assert!(b.rows.iter().all(|r| r.step.obs[0] < 5.0 && r.target_return.is_none()));
    }

    #[test]
    fn half_ratio_replaces_exactly_half_reproducibly() {
        let run = || {
            let mut m = memory(0.5, 10);
            m.store((0..5).map(|i| step(i, 0)));
            let mut b = batch(10);
            let rows = m.mix_into(&mut b, Some(1));
            (rows, b)
        };
        let (rows, b) = run();
        assert_eq!(rows.len(), 5);
        let replaced = b.rows.iter().filter(|r| r.target_return.is_none()).count();
        assert_eq!(replaced, 5);
        assert_eq!(run(), (rows, b));
    }

    #[test]
    fn prefers_other_tasks_and_falls_back() {
        let mut m = memory(1.0, 10);
        m.store([step(0, 0), step(1, 1), step(2, 1)]);
        let mut b = batch(20);
        m.mix_into(&mut b, Some(1));
        assert!(b.rows.iter().all(|r| r.step.task_label == 0));

        let mut m = memory(1.0, 10);
        m.store([step(1, 1), step(2, 1)]);
        let mut b = batch(4);
        m.mix_into(&mut b, Some(1));
        assert!(b.rows.iter().all(|r| r.step.obs[0] < 3.0));
    }

    #[test]
    fn state_round_trips() {
        let mut a = memory(0.5, 10);
        a.store((0..4).map(|i| step(i, 0)));
        let bytes = a.save_state().unwrap().unwrap();
        let mut b = memory(0.5, 10);
        b.load_state(&bytes).unwrap();
        let (mut x, mut y) = (batch(6), batch(6));
        assert_eq!(a.mix_into(&mut x, Some(1)), b.mix_into(&mut y, Some(1)));
        assert_eq!(x, y);
        assert!(memory(0.5, 3).load_state(&bytes).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ReplayMemory::new(ReplayMemoryConfig { mix_ratio: 1.5, ..Default::default() }).is_err());
        assert!(ReplayMemory::new(ReplayMemoryConfig { capacity: 0, ..Default::default() }).is_err());
    }
}
