//! Task and scene streams over one shared gridworld: tasks bundle a reward
//! function, a goal test and an action space; a [`TaskIterator`] schedules
//! them, a [`SceneManager`] swaps layouts in place, and
//! [`task_stream_benchmark_generator`] turns the schedule into experiences.

mod env;
mod iterator;
mod scene;
mod task;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::benchmarks::{BenchmarkError, EnvFactory, RLExperience, RLScenario};
use crate::env::{EnvError, Environment};
use crate::envs::GridScene;

pub use env::{SharedTaskEnv, TaskEnvView, TaskStreamEnv};
pub use iterator::TaskIterator;
pub use scene::{SceneEvent, SceneManager, SwapPolicy};
pub use task::{GridState, Task, TaskConfig, TaskDuration, TASK_TYPES};

#[derive(Debug, Error)]
pub enum TaskStreamError {
    #[error("the task stream is exhausted")]
    StreamExhausted,
    #[error("invalid task stream configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown task type {0:?}")]
    UnknownTaskType(String),
    #[error("task type {task_type} has no parameter {key:?}")]
    UnknownParam { task_type: String, key: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
}

/// Stretch of the schedule with one active (task, scene) pair. `length` is
/// in the unit of the task durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub task: usize,
    pub scene: usize,
    pub length: u64,
}

/// Split the schedule at every task change and scene swap.
///
/// Interval policies must count in the unit of the durations
/// (`EveryNEpisodes` with `MaxEpisodes`, `EveryNSteps` with `MaxSteps`);
/// otherwise the boundaries cannot be placed ahead of time.
pub fn segments(
    durations: &[TaskDuration],
    n_scenes: usize,
    policy: SwapPolicy,
) -> Result<Vec<Segment>, TaskStreamError> {
    if n_scenes == 0 {
        return Err(TaskStreamError::InvalidConfig("no scenes".into()));
    }
    let interval = match policy {
        SwapPolicy::OnTaskChange => None,
        SwapPolicy::EveryNEpisodes(n) => {
            if durations.iter().any(|d| !matches!(d, TaskDuration::MaxEpisodes(_))) {
                return Err(TaskStreamError::InvalidConfig(
                    "episode-based scene swaps need episode-based task durations".into(),
                ));
            }
            Some(n)
        }
        SwapPolicy::EveryNSteps(n) => {
            if durations.iter().any(|d| !matches!(d, TaskDuration::MaxSteps(_))) {
                return Err(TaskStreamError::InvalidConfig(
                    "step-based scene swaps need step-based task durations".into(),
                ));
            }
            Some(n)
        }
    };
    if interval == Some(0) || durations.iter().any(|d| d.count() == 0) {
        return Err(TaskStreamError::InvalidConfig("durations and intervals must be >= 1".into()));
    }
    let mut out = Vec::new();
    let mut scene = 0;
    let mut counter = 0;
    for (task, d) in durations.iter().enumerate() {
        match interval {
            None => {
                if task > 0 {
                    scene = (scene + 1) % n_scenes;
                }
                out.push(Segment {
                    task,
                    scene,
                    length: d.count(),
                });
            }
            Some(n) => {
                let mut remaining = d.count();
                while remaining > 0 {
                    let take = remaining.min(n - counter);
                    out.push(Segment {
                        task,
                        scene,
                        length: take,
                    });
                    remaining -= take;
                    counter += take;
                    if counter == n {
                        counter = 0;
                        scene = (scene + 1) % n_scenes;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One experience per segment, all served by views over a single shared
/// [`TaskStreamEnv`]. Task labels are task indices. The eval stream holds one
/// experience per distinct (task, scene) pair, in order of first appearance.
///
/// `n_experiences` keeps the first segments; asking for more than the
/// schedule has is an error. Every experience has one actor.
pub fn task_stream_benchmark_generator(
    tasks: Vec<(Task, TaskDuration)>,
    scenes: Vec<GridScene>,
    policy: SwapPolicy,
    n_experiences: Option<usize>,
) -> Result<(RLScenario, SharedTaskEnv), TaskStreamError> {
    let durations: Vec<TaskDuration> = tasks.iter().map(|(_, d)| *d).collect();
    let mut segs = segments(&durations, scenes.len(), policy)?;
    if let Some(n) = n_experiences {
        if n > segs.len() {
            return Err(TaskStreamError::InvalidConfig(format!(
                "{n} experiences requested but the schedule has {} segments",
                segs.len()
            )));
        }
        if n == 0 {
            return Err(TaskStreamError::InvalidConfig("zero experiences requested".into()));
        }
        segs.truncate(n);
    }
    let names: Vec<String> = tasks.iter().map(|(t, _)| t.name().to_string()).collect();
    let shared = SharedTaskEnv::new(TaskStreamEnv::new(
        TaskIterator::new(tasks)?,
        SceneManager::new(scenes, policy)?,
    )?);

    let experience = |i: usize, task: usize, scene: usize| {
        let handle = shared.clone();
        RLExperience {
            name: format!("{}@scene{scene}", names[task]),
            env_factory: EnvFactory::new(move || {
                Ok(Box::new(handle.view(task, scene)) as Box<dyn Environment>)
            }),
            task_label: task,
            n_envs: 1,
            experience_index: i,
        }
    };
    let train: Vec<RLExperience> = segs
        .iter()
        .enumerate()
        .map(|(i, s)| experience(i, s.task, s.scene))
        .collect();
    let mut seen = BTreeSet::new();
    let eval: Vec<RLExperience> = segs
        .iter()
        .filter(|s| seen.insert((s.task, s.scene)))
        .enumerate()
        .map(|(i, s)| experience(i, s.task, s.scene))
        .collect();
    Ok((RLScenario::new(train, eval)?, shared))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_follow_task_changes() {
        let d = [TaskDuration::MaxEpisodes(2), TaskDuration::MaxEpisodes(2)];
        let s = segments(&d, 1, SwapPolicy::OnTaskChange).unwrap();
        assert_eq!(s.iter().map(|s| (s.task, s.scene)).collect::<Vec<_>>(), [(0, 0), (1, 0)]);
        let s = segments(&d, 3, SwapPolicy::OnTaskChange).unwrap();
        assert_eq!(s.iter().map(|s| s.scene).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn segments_split_tasks_at_swaps() {
        let d = [TaskDuration::MaxSteps(5), TaskDuration::MaxSteps(3)];
        let s = segments(&d, 2, SwapPolicy::EveryNSteps(3)).unwrap();
        let got: Vec<(usize, usize, u64)> = s.iter().map(|s| (s.task, s.scene, s.length)).collect();
        assert_eq!(got, [(0, 0, 3), (0, 1, 2), (1, 1, 1), (1, 0, 2)]);
    }

    #[test]
    fn mixed_units_are_rejected() {
        let d = [TaskDuration::MaxSteps(5)];
        assert!(segments(&d, 2, SwapPolicy::EveryNEpisodes(1)).is_err());
        let d = [TaskDuration::MaxEpisodes(5)];
        assert!(segments(&d, 2, SwapPolicy::EveryNSteps(1)).is_err());
        assert!(segments(&d, 2, SwapPolicy::OnTaskChange).is_ok());
    }
}
