//! Lockstep actor pool over N replicas of one environment.
//!
//! Actor `i` starts episode `k` with seed `base_seed + i + 1_000_000 * k`.
//! When an actor finishes an episode it is reset immediately: its row holds
//! the first observation of the next episode and the terminal observation is
//! reported both as [`VecStep::terminal_obs`] and as JSON under
//! `info["terminal_obs"]`.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::benchmarks::EnvFactory;
use crate::env::{Action, EnvError, Environment, Info, Observation, Space};

pub const EPISODE_SEED_STRIDE: u64 = 1_000_000;

/// Seed used for episode `episode` of actor `actor`.
pub fn actor_seed(base_seed: u64, actor: usize, episode: u64) -> u64 {
    base_seed
        .wrapping_add(actor as u64)
        .wrapping_add(EPISODE_SEED_STRIDE.wrapping_mul(episode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VecMode {
    #[default]
    Serial,
    /// One worker thread per actor, synchronized at every step.
    Parallel,
}

/// Batched result of one lockstep step; row `i` belongs to actor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VecStep {
    pub obs: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub infos: Vec<Info>,
    pub terminal_obs: Vec<Option<Observation>>,
}

struct ActorStep {
    obs: Observation,
    reward: f64,
    done: bool,
    info: Info,
    terminal: Option<Observation>,
}

/// One replica plus its seeding state. Shared by both modes so they cannot
/// drift apart.
struct Actor {
    env: Box<dyn Environment>,
    index: usize,
    base_seed: u64,
    episode: u64,
}

impl Actor {
    fn reset(&mut self) -> Observation {
        self.episode = 0;
        self.env.reset(Some(actor_seed(self.base_seed, self.index, 0)))
    }

    fn step(&mut self, action: &Action) -> Result<ActorStep, EnvError> {
        let r = self.env.step(action)?;
        if !r.done {
            return Ok(ActorStep {
                obs: r.obs,
                reward: r.reward,
                done: false,
                info: r.info,
                terminal: None,
            });
        }
        self.episode += 1;
        let next = self
            .env
            .reset(Some(actor_seed(self.base_seed, self.index, self.episode)));
        let mut info = r.info;
        info.insert(
            "terminal_obs".into(),
            serde_json::to_string(r.obs.data()).expect("finite floats serialize"),
        );
        Ok(ActorStep {
            obs: next,
            reward: r.reward,
            done: true,
            info,
            terminal: Some(r.obs),
        })
    }
}

enum Command {
    Reset,
    Step(Action),
}

enum Reply {
    Reset(Observation),
    Step(Result<ActorStep, EnvError>),
}

struct Worker {
    tx: Option<Sender<Command>>,
    rx: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    fn spawn(mut actor: Actor) -> Result<Self, EnvError> {
        let (cmd_tx, cmd_rx) = channel::<Command>();
        let (rep_tx, rep_rx) = channel::<Reply>();
        let handle = std::thread::Builder::new()
            .name(format!("actor-{}", actor.index))
            .spawn(move || {
                for cmd in cmd_rx {
                    let reply = match cmd {
                        Command::Reset => Reply::Reset(actor.reset()),
                        Command::Step(a) => Reply::Step(actor.step(&a)),
                    };
                    if rep_tx.send(reply).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| EnvError::Other(format!("could not start worker thread: {e}")))?;
        Ok(Worker {
            tx: Some(cmd_tx),
            rx: rep_rx,
            handle: Some(handle),
        })
    }

    fn send(&self, index: usize, cmd: Command) -> Result<(), EnvError> {
        self.tx
            .as_ref()
            .and_then(|tx| tx.send(cmd).ok())
            .ok_or_else(|| worker_died(index))
    }

    fn recv(&self, index: usize) -> Result<Reply, EnvError> {
        self.rx.recv().map_err(|_| worker_died(index))
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        // closing the channel ends the worker loop
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn worker_died(index: usize) -> EnvError {
    EnvError::Actor {
        index,
        source: Box::new(EnvError::Other("worker thread terminated".into())),
    }
}

enum Backend {
    Serial(Vec<Actor>),
    Parallel(Vec<Worker>),
}

pub struct VectorizedEnv {
    backend: Backend,
    n: usize,
    base_seed: u64,
    mode: VecMode,
    action_space: Space,
    observation_space: Space,
    episodes: Vec<u64>,
    steps: Vec<u64>,
    is_reset: bool,
}

impl VectorizedEnv {
    pub fn new(
        factory: &EnvFactory,
        n_actors: usize,
        base_seed: u64,
        mode: VecMode,
    ) -> Result<Self, EnvError> {
        if n_actors == 0 {
            return Err(EnvError::InvalidParams("n_actors must be >= 1".into()));
        }
        let mut actors = Vec::with_capacity(n_actors);
        for index in 0..n_actors {
            let env = factory.make().map_err(|e| EnvError::Actor {
                index,
                source: Box::new(e),
            })?;
            actors.push(Actor {
                env,
                index,
                base_seed,
                episode: 0,
            });
        }
        let action_space = actors[0].env.action_space();
        let observation_space = actors[0].env.observation_space();
        for a in &actors[1..] {
            if a.env.action_space() != action_space || a.env.observation_space() != observation_space {
                return Err(EnvError::IncompatibleSpace(format!(
                    "actor {} spaces differ from actor 0",
                    a.index
                )));
            }
        }
        let backend = match mode {
            VecMode::Serial => Backend::Serial(actors),
            VecMode::Parallel => Backend::Parallel(
                actors
                    .into_iter()
                    .map(Worker::spawn)
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(VectorizedEnv {
            backend,
            n: n_actors,
            base_seed,
            mode,
            action_space,
            observation_space,
            episodes: vec![0; n_actors],
            steps: vec![0; n_actors],
            is_reset: false,
        })
    }

    pub fn n_actors(&self) -> usize {
        self.n
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn mode(&self) -> VecMode {
        self.mode
    }

    pub fn action_space(&self) -> &Space {
        &self.action_space
    }

    pub fn observation_space(&self) -> &Space {
        &self.observation_space
    }

    /// Episodes started by actor `i` since the last reset, minus one.
    pub fn episode_index(&self, i: usize) -> u64 {
        self.episodes[i]
    }

    /// Steps taken by actor `i` since the last reset.
    pub fn actor_steps(&self, i: usize) -> u64 {
        self.steps[i]
    }

    pub fn total_steps(&self) -> u64 {
        self.steps.iter().sum()
    }

    /// Reset every actor to episode 0 and return the initial observations.
    pub fn reset(&mut self) -> Result<Vec<Observation>, EnvError> {
        let obs = match &mut self.backend {
            Backend::Serial(actors) => actors.iter_mut().map(Actor::reset).collect(),
            Backend::Parallel(workers) => {
                for (i, w) in workers.iter().enumerate() {
                    w.send(i, Command::Reset)?;
                }
                let mut obs = Vec::with_capacity(workers.len());
                for (i, w) in workers.iter().enumerate() {
                    match w.recv(i)? {
                        Reply::Reset(o) => obs.push(o),
                        Reply::Step(_) => unreachable!("reply out of order"),
                    }
                }
                obs
            }
        };
        self.episodes.iter_mut().for_each(|e| *e = 0);
        self.steps.iter_mut().for_each(|s| *s = 0);
        self.is_reset = true;
        Ok(obs)
    }

    /// Advance every actor by one step. Errors carry the lowest failing actor
    /// index.
    pub fn step(&mut self, actions: &[Action]) -> Result<VecStep, EnvError> {
        if !self.is_reset {
            return Err(EnvError::NotReset);
        }
        if actions.len() != self.n {
            return Err(EnvError::InvalidParams(format!(
                "expected {} actions, got {}",
                self.n,
                actions.len()
            )));
        }
        for (index, a) in actions.iter().enumerate() {
            if !self.action_space.contains(a) {
                return Err(EnvError::Actor {
                    index,
                    source: Box::new(EnvError::ActionOutOfSpace {
                        action: a.to_string(),
                        space: self.action_space.to_string(),
                    }),
                });
            }
        }
        let results: Vec<Result<ActorStep, EnvError>> = match &mut self.backend {
            Backend::Serial(actors) => actors
                .iter_mut()
                .zip(actions)
                .map(|(actor, a)| actor.step(a))
                .collect(),
            Backend::Parallel(workers) => {
                for (i, (w, a)) in workers.iter().zip(actions).enumerate() {
                    w.send(i, Command::Step(a.clone()))?;
                }
                let mut out = Vec::with_capacity(workers.len());
                for (i, w) in workers.iter().enumerate() {
                    match w.recv(i)? {
                        Reply::Step(r) => out.push(r),
                        Reply::Reset(_) => unreachable!("reply out of order"),
                    }
                }
                out
            }
        };
        let mut batch = VecStep {
            obs: Vec::with_capacity(self.n),
            rewards: Vec::with_capacity(self.n),
            dones: Vec::with_capacity(self.n),
            infos: Vec::with_capacity(self.n),
            terminal_obs: Vec::with_capacity(self.n),
        };
        let mut first_err = None;
        for (index, r) in results.into_iter().enumerate() {
            match r {
                Ok(s) => {
                    self.steps[index] += 1;
                    if s.done {
                        self.episodes[index] += 1;
                    }
                    batch.obs.push(s.obs);
                    batch.rewards.push(s.reward);
                    batch.dones.push(s.done);
                    batch.infos.push(s.info);
                    batch.terminal_obs.push(s.terminal);
                }
                Err(e) => {
                    first_err.get_or_insert(EnvError::Actor {
                        index,
                        source: Box::new(e),
                    });
                }
            }
        }
        match first_err {
            Some(e) => {
                // actors that did step are out of sync with the driver now
                self.is_reset = false;
                Err(e)
            }
            None => Ok(batch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TimeLimit, WrapperSpec};
    use crate::envs::{CartPole, CartPoleParams, GridScene, GridWorld};

    fn cartpole() -> EnvFactory {
        EnvFactory::new(|| Ok(Box::new(CartPole::new(CartPoleParams::default())?) as Box<dyn Environment>))
    }

    fn grid() -> EnvFactory {
        EnvFactory::new(|| {
            Ok(Box::new(GridWorld::new(GridScene::empty(5, 5, (0, 0), (4, 4))?)) as Box<dyn Environment>)
        })
    }

    #[test]
    fn seeds_follow_the_formula() {
        assert_eq!(actor_seed(5, 1, 0), 6);
        assert_eq!(actor_seed(5, 1, 2), 2_000_006);
    }

    #[test]
    fn single_actor_matches_the_environment() {
        let mut v = VectorizedEnv::new(&cartpole(), 1, 9, VecMode::Serial).unwrap();
        let mut e = CartPole::new(CartPoleParams::default()).unwrap();
        assert_eq!(v.reset().unwrap()[0], e.reset(Some(9)));
    }

    #[test]
    fn two_cartpoles_match_serial_resets() {
        let mut v = VectorizedEnv::new(&cartpole(), 2, 5, VecMode::Serial).unwrap();
        let rows = v.reset().unwrap();
        for (i, row) in rows.iter().enumerate() {
            let mut e = CartPole::new(CartPoleParams::default()).unwrap();
            assert_eq!(*row, e.reset(Some(5 + i as u64)));
        }
    }

    #[test]
    fn gridworld_rows_are_identical() {
        let mut v = VectorizedEnv::new(&grid(), 3, 0, VecMode::Parallel).unwrap();
        let rows = v.reset().unwrap();
        assert!(rows.iter().all(|r| *r == rows[0]));
    }

    #[test]
    fn auto_reset_reports_the_terminal_observation() {
        let f = grid().wrapped(vec![WrapperSpec::TimeLimit { max_steps: 2 }]);
        let mut v = VectorizedEnv::new(&f, 1, 0, VecMode::Serial).unwrap();
        let start = v.reset().unwrap();
        let a = [Action::Discrete(3)];
        let s1 = v.step(&a).unwrap();
        assert!(!s1.dones[0]);
        let s2 = v.step(&a).unwrap();
        assert!(s2.dones[0]);
        assert_eq!(s2.obs, start);
        let terminal = s2.terminal_obs[0].clone().unwrap();
        assert_eq!(terminal, Observation::one_hot(2, 25));
        let parsed: Vec<f64> = serde_json::from_str(&s2.infos[0]["terminal_obs"]).unwrap();
        assert_eq!(parsed, terminal.data());
        assert_eq!(v.episode_index(0), 1);
        assert_eq!(v.actor_steps(0), 2);
    }

    #[test]
    fn errors_name_the_actor() {
        let mut v = VectorizedEnv::new(&grid(), 2, 0, VecMode::Parallel).unwrap();
        assert!(matches!(v.step(&[Action::Discrete(0), Action::Discrete(0)]), Err(EnvError::NotReset)));
        v.reset().unwrap();
        let err = v.step(&[Action::Discrete(0), Action::Discrete(9)]).unwrap_err();
        assert!(matches!(err, EnvError::Actor { index: 1, .. }));
        assert!(v.step(&[Action::Discrete(0)]).is_err());
    }

    #[test]
    fn actor_failures_inside_the_env_are_indexed() {
        struct Broken;
        impl Environment for Broken {
            fn reset(&mut self, _: Option<u64>) -> Observation {
                Observation::vector(vec![0.0])
            }
            fn step(&mut self, _: &Action) -> Result<crate::env::StepResult, EnvError> {
                Err(EnvError::Other("boom".into()))
            }
            fn action_space(&self) -> Space {
                Space::Discrete(1)
            }
            fn observation_space(&self) -> Space {
                Space::unbounded(vec![1])
            }
        }
        let f = EnvFactory::new(|| Ok(Box::new(TimeLimit::new(Broken, 3)?) as Box<dyn Environment>));
        for mode in [VecMode::Serial, VecMode::Parallel] {
            let mut v = VectorizedEnv::new(&f, 3, 0, mode).unwrap();
            v.reset().unwrap();
            let err = v.step(&vec![Action::Discrete(0); 3]).unwrap_err();
            assert!(matches!(err, EnvError::Actor { index: 0, .. }), "{err}");
        }
    }
}
