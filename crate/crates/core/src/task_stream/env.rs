use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use super::{GridState, SceneEvent, SceneManager, Task, TaskIterator, TaskStreamError};
use crate::env::{Action, EnvError, Environment, EpisodeStatus, Info, Observation, Space, StepResult};
use crate::envs::{GridScene, Pos};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AgentState {
    pos: Pos,
    steps: usize,
    status: EpisodeStatus,
}

fn env_error(e: TaskStreamError) -> EnvError {
    match e {
        TaskStreamError::StreamExhausted => EnvError::StreamExhausted,
        TaskStreamError::Env(e) => e,
        other => EnvError::Other(other.to_string()),
    }
}

/// Gridworld whose reward, termination and action space come from the
/// active task, and whose layout is swapped in place by a scene manager.
///
/// Live mode advances tasks and scenes from the step and episode counters.
/// A pinned environment keeps one (task, scene) pair until pinned again.
/// Steps carry `instance_id`, `task`, `scene` and `total_steps` in their
/// info.
pub struct TaskStreamEnv {
    id: u64,
    tasks: TaskIterator,
    scenes: SceneManager,
    scene: GridScene,
    active_task: usize,
    agent: AgentState,
    total_steps: u64,
    total_episodes: u64,
    pinned: bool,
}

impl TaskStreamEnv {
    /// Starts on the first task and scene; the first task's `on_activate`
    /// runs here.
    pub fn new(tasks: TaskIterator, scenes: SceneManager) -> Result<Self, TaskStreamError> {
        let scene = scenes.active_scene().clone();
        let mut env = TaskStreamEnv {
            id: next_id(),
            agent: AgentState {
                pos: scene.start(),
                steps: 0,
                status: EpisodeStatus::NotStarted,
            },
            tasks,
            scenes,
            scene,
            active_task: 0,
            total_steps: 0,
            total_episodes: 0,
            pinned: false,
        };
        env.activate_task(0)?;
        Ok(env)
    }

    pub fn instance_id(&self) -> u64 {
        self.id
    }

    pub fn active_task(&self) -> usize {
        self.active_task
    }

    pub fn task(&self) -> &Task {
        self.tasks.task(self.active_task).expect("active task exists")
    }

    pub fn active_scene(&self) -> usize {
        self.scenes.active()
    }

    pub fn scene(&self) -> &GridScene {
        &self.scene
    }

    pub fn position(&self) -> Pos {
        self.agent.pos
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn total_episodes(&self) -> u64 {
        self.total_episodes
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Replace the layout without rebuilding anything. The agent keeps its
    /// cell when that cell is free in the new scene, otherwise it moves to the
    /// new start.
    pub fn swap_scene(&mut self, scene: GridScene) -> Result<(), EnvError> {
        if (scene.width(), scene.height()) != (self.scene.width(), self.scene.height()) {
            return Err(EnvError::IncompatibleSpace(format!(
                "scene is {}x{} but the environment is {}x{}",
                scene.width(),
                scene.height(),
                self.scene.width(),
                self.scene.height()
            )));
        }
        if !scene.is_free(self.agent.pos) {
            self.agent.pos = scene.start();
        }
        self.scene = scene;
        Ok(())
    }

    /// Fix the active pair and stop live scheduling.
    pub fn pin(&mut self, task: usize, scene: usize) -> Result<(), TaskStreamError> {
        self.pinned = true;
        if scene != self.scenes.active() {
            self.scenes.set_active(scene)?;
            self.swap_scene(self.scenes.active_scene().clone())?;
        }
        if task != self.active_task {
            self.tasks.activate(task, self.total_steps, self.total_episodes)?;
            self.activate_task(task)?;
        }
        Ok(())
    }

    fn activate_task(&mut self, i: usize) -> Result<(), TaskStreamError> {
        self.active_task = i;
        let hook = self.task().on_activate();
        if let Some(f) = hook {
            f(self)?;
        }
        Ok(())
    }

    fn state(&self, pos: Pos) -> GridState {
        GridState {
            pos,
            scene_goal: self.scene.goal(),
        }
    }

    fn observe(&self) -> Observation {
        Observation::one_hot(self.scene.cell_index(self.agent.pos), self.scene.cells())
    }

    fn on_scene_event(&mut self, event: SceneEvent) -> Result<(), EnvError> {
        let (scene, swapped) = self.scenes.maybe_swap(event);
        if swapped {
            let scene = scene.clone();
            self.swap_scene(scene)?;
        }
        Ok(())
    }

    fn step_inner(&mut self, action: &Action) -> Result<StepResult, TaskStreamError> {
        self.agent.status.ensure_running()?;
        if !self.pinned {
            let (_, changed) = self.tasks.current_task(self.total_steps, self.total_episodes)?;
            if changed {
                self.activate_task(self.tasks.cursor())?;
                self.on_scene_event(SceneEvent::TaskChanged)?;
            }
        }
        let task = self.task().clone();
        task.action_space().check(action)?;
        let a = action.index().expect("discrete action");
        let s = self.state(self.agent.pos);
        let next = self.scene.neighbor(self.agent.pos, a);
        let s2 = self.state(next);
        let reward = task.reward(s, a, s2);
        if !reward.is_finite() {
            return Err(EnvError::Other(format!("task {:?} produced reward {reward}", task.name())).into());
        }
        self.agent.pos = next;
        self.agent.steps += 1;
        self.total_steps += 1;
        let done = task.is_goal(s2) || self.agent.steps >= self.scene.max_steps();
        let mut info = Info::new();
        info.insert("instance_id".into(), self.id.to_string());
        info.insert("task".into(), task.name().to_string());
        info.insert("scene".into(), self.scenes.active().to_string());
        info.insert("total_steps".into(), self.total_steps.to_string());
        let obs = self.observe();
        if done {
            self.agent.status = EpisodeStatus::Done;
            self.total_episodes += 1;
        }
        if !self.pinned {
            self.on_scene_event(SceneEvent::StepTaken)?;
            if done {
                self.on_scene_event(SceneEvent::EpisodeEnded)?;
            }
        }
        Ok(StepResult {
            obs,
            reward,
            done,
            info,
        })
    }
}

impl Environment for TaskStreamEnv {
    fn reset(&mut self, _seed: Option<u64>) -> Observation {
        self.agent = AgentState {
            pos: self.scene.start(),
            steps: 0,
            status: EpisodeStatus::Running,
        };
        self.observe()
    }

    /// The observation is the one-hot cell after the move, taken before any
    /// scene swap the step triggers.
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.step_inner(action).map_err(env_error)
    }

    fn action_space(&self) -> Space {
        self.task().action_space().clone()
    }

    fn observation_space(&self) -> Space {
        let n = self.scene.cells();
        Space::Box {
            low: vec![0.0; n],
            high: vec![1.0; n],
            shape: vec![n],
        }
    }
}

struct Shared {
    env: TaskStreamEnv,
    owner: Option<u64>,
    saved: HashMap<u64, AgentState>,
}

/// One [`TaskStreamEnv`] behind a lock, handed out as pinned views.
#[derive(Clone)]
pub struct SharedTaskEnv {
    inner: Arc<Mutex<Shared>>,
}

impl SharedTaskEnv {
    pub fn new(env: TaskStreamEnv) -> Self {
        SharedTaskEnv {
            inner: Arc::new(Mutex::new(Shared {
                env,
                owner: None,
                saved: HashMap::new(),
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn instance_id(&self) -> u64 {
        self.lock().env.instance_id()
    }

    pub fn total_steps(&self) -> u64 {
        self.lock().env.total_steps()
    }

    /// Read access to the underlying environment.
    pub fn with<R>(&self, f: impl FnOnce(&TaskStreamEnv) -> R) -> R {
        f(&self.lock().env)
    }

    /// A view that pins `(task, scene)` whenever it is used. Views keep their
    /// own episode state, so interleaving two views (training and evaluation,
    /// say) does not disturb either episode.
    pub fn view(&self, task: usize, scene: usize) -> TaskEnvView {
        TaskEnvView {
            shared: self.clone(),
            id: next_id(),
            task,
            scene,
            pending: None,
        }
    }
}

pub struct TaskEnvView {
    shared: SharedTaskEnv,
    id: u64,
    task: usize,
    scene: usize,
    pending: Option<EnvError>,
}

impl TaskEnvView {
    pub fn instance_id(&self) -> u64 {
        self.shared.instance_id()
    }

    pub fn pinned_to(&self) -> (usize, usize) {
        (self.task, self.scene)
    }

    fn acquire(&self) -> Result<MutexGuard<'_, Shared>, EnvError> {
        let mut g = self.shared.lock();
        if g.owner != Some(self.id) {
            if let Some(prev) = g.owner {
                let state = g.env.agent;
                g.saved.insert(prev, state);
            }
            g.env.pin(self.task, self.scene).map_err(env_error)?;
            let own = g.saved.remove(&self.id);
            g.env.agent = own.unwrap_or(AgentState {
                pos: g.env.scene.start(),
                steps: 0,
                status: EpisodeStatus::NotStarted,
            });
            g.owner = Some(self.id);
        }
        Ok(g)
    }
}

impl Drop for TaskEnvView {
    fn drop(&mut self) {
        let mut g = self.shared.lock();
        g.saved.remove(&self.id);
        if g.owner == Some(self.id) {
            g.owner = None;
        }
    }
}

impl Environment for TaskEnvView {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        let err = match self.acquire() {
            Ok(mut g) => return g.env.reset(seed),
            Err(e) => e,
        };
        // reset cannot fail; the error surfaces on the next step
        self.pending = Some(err);
        self.shared.lock().env.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if let Some(e) = self.pending.take() {
            return Err(e);
        }
        self.acquire()?.env.step(action)
    }

    fn action_space(&self) -> Space {
        let g = self.shared.lock();
        g.env
            .tasks
            .task(self.task)
            .map(|t| t.action_space().clone())
            .unwrap_or_else(|| g.env.action_space())
    }

    fn observation_space(&self) -> Space {
        self.shared.lock().env.observation_space()
    }
}
