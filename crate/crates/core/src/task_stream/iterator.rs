use super::{Task, TaskDuration, TaskStreamError};

/// Schedules an ordered list of tasks over cumulative step and episode
/// counters. Tasks do not wrap: running past the last one ends the stream.
#[derive(Debug, Clone)]
pub struct TaskIterator {
    tasks: Vec<(Task, TaskDuration)>,
    cursor: usize,
    start_steps: u64,
    start_episodes: u64,
    last: (u64, u64),
}

impl TaskIterator {
    pub fn new(tasks: Vec<(Task, TaskDuration)>) -> Result<Self, TaskStreamError> {
        if tasks.is_empty() {
            return Err(TaskStreamError::InvalidConfig("no tasks".into()));
        }
        if let Some((t, _)) = tasks.iter().find(|(_, d)| d.count() == 0) {
            return Err(TaskStreamError::InvalidConfig(format!(
                "task {:?} has a zero duration",
                t.name()
            )));
        }
        Ok(TaskIterator {
            tasks,
            cursor: 0,
            start_steps: 0,
            start_episodes: 0,
            last: (0, 0),
        })
    }

    pub fn tasks(&self) -> &[(Task, TaskDuration)] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn task(&self, i: usize) -> Option<&Task> {
        self.tasks.get(i).map(|(t, _)| t)
    }

    /// Active task given the steps and episodes completed so far, and
    /// whether it just changed. Query it before each step.
    pub fn current_task(
        &mut self,
        steps_taken: u64,
        episodes_done: u64,
    ) -> Result<(&Task, bool), TaskStreamError> {
        if steps_taken < self.last.0 || episodes_done < self.last.1 {
            return Err(TaskStreamError::InvalidConfig(format!(
                "counters went backwards: ({steps_taken}, {episodes_done}) after {:?}",
                self.last
            )));
        }
        self.last = (steps_taken, episodes_done);
        let used = match self.tasks[self.cursor].1 {
            TaskDuration::MaxSteps(n) => steps_taken - self.start_steps >= n,
            TaskDuration::MaxEpisodes(n) => episodes_done - self.start_episodes >= n,
        };
        if used {
            if self.cursor + 1 == self.tasks.len() {
                return Err(TaskStreamError::StreamExhausted);
            }
            self.cursor += 1;
            self.start_steps = steps_taken;
            self.start_episodes = episodes_done;
        }
        Ok((&self.tasks[self.cursor].0, used))
    }

    /// Jump straight to task `i`, counting its duration from the given
    /// counters.
    pub fn activate(&mut self, i: usize, steps_taken: u64, episodes_done: u64) -> Result<(), TaskStreamError> {
        if i >= self.tasks.len() {
            return Err(TaskStreamError::InvalidConfig(format!("no task {i}")));
        }
        self.cursor = i;
        self.start_steps = steps_taken;
        self.start_episodes = episodes_done;
        self.last = (steps_taken, episodes_done);
        Ok(())
    }
}
