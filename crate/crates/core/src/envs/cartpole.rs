//! Cart-pole with every physical constant exposed, so a stream can vary
//! gravity, masses or force between experiences.
//!
//! State is `[x, x_dot, theta, theta_dot]`. Action 0 pushes left, 1 pushes
//! right. Integration is explicit Euler with pre-update derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvError, Environment, EpisodeStatus, Info, Observation, Space, StepResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            max_steps: 500,
        }
    }
}

impl CartPoleParams {
    /// Every physical constant and threshold must be strictly positive.
    /// [`cartpole_step`] itself accepts degenerate values.
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("gravity", self.gravity),
            ("force_mag", self.force_mag),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("dt", self.dt),
            ("x_threshold", self.x_threshold),
            ("theta_threshold", self.theta_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidParams("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Partial parameter set; `None` fields keep the base value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cart_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_half_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_mag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl CartPoleOverrides {
    pub fn apply(&self, base: &CartPoleParams) -> CartPoleParams {
        CartPoleParams {
            gravity: self.gravity.unwrap_or(base.gravity),
            cart_mass: self.cart_mass.unwrap_or(base.cart_mass),
            pole_mass: self.pole_mass.unwrap_or(base.pole_mass),
            pole_half_length: self.pole_half_length.unwrap_or(base.pole_half_length),
            force_mag: self.force_mag.unwrap_or(base.force_mag),
            dt: self.dt.unwrap_or(base.dt),
            x_threshold: self.x_threshold.unwrap_or(base.x_threshold),
            theta_threshold: self.theta_threshold.unwrap_or(base.theta_threshold),
            max_steps: self.max_steps.unwrap_or(base.max_steps),
        }
    }
}

/// One physics step. Returns the next state, the reward (+1) and whether a
/// position/angle threshold was crossed. The step limit is the environment's
/// concern.
pub fn cartpole_step(state: [f64; 4], push_right: bool, p: &CartPoleParams) -> ([f64; 4], f64, bool) {
    let [x, x_dot, theta, theta_dot] = state;
    let force = if push_right { p.force_mag } else { -p.force_mag };
    let total_mass = p.cart_mass + p.pole_mass;
    let (sin, cos) = theta.sin_cos();

    let theta_acc = (p.gravity * sin
        + cos * (-force - p.pole_mass * p.pole_half_length * theta_dot * theta_dot * sin) / total_mass)
        / (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = (force
        + p.pole_mass * p.pole_half_length * (theta_dot * theta_dot * sin - theta_acc * cos))
        / total_mass;

    let next = [
        x + p.dt * x_dot,
        x_dot + p.dt * x_acc,
        theta + p.dt * theta_dot,
        theta_dot + p.dt * theta_acc,
    ];
    let terminated = next[0].abs() > p.x_threshold || next[2].abs() > p.theta_threshold;
    (next, 1.0, terminated)
}

pub struct CartPole {
    params: CartPoleParams,
    state: [f64; 4],
    steps: usize,
    status: EpisodeStatus,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(CartPole {
            params,
            state: [0.0; 4],
            steps: 0,
            status: EpisodeStatus::NotStarted,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Place the system in an explicit state and start an episode from it.
    pub fn set_state(&mut self, state: [f64; 4]) -> Observation {
        self.state = state;
        self.steps = 0;
        self.status = EpisodeStatus::Running;
        Observation::vector(state.to_vec())
    }
}

impl Environment for CartPole {
    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        let mut s = [0.0; 4];
        for v in &mut s {
            *v = self.rng.random_range(-0.05..=0.05);
        }
        self.set_state(s)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.status.ensure_running()?;
        Space::Discrete(2).check(action)?;
        let (next, reward, terminated) =
            cartpole_step(self.state, action.index() == Some(1), &self.params);
        self.state = next;
        self.steps += 1;
        let done = terminated || self.steps >= self.params.max_steps;
        if done {
            self.status = EpisodeStatus::Done;
        }
        Ok(StepResult {
            obs: Observation::new(next.to_vec(), vec![4])
                .map_err(|_| EnvError::Other("cart-pole state diverged".into()))?,
            reward,
            done,
            info: Info::new(),
        })
    }

    fn action_space(&self) -> Space {
        Space::Discrete(2)
    }

    fn observation_space(&self) -> Space {
        Space::unbounded(vec![4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_from_rest_matches_hand_evaluation() {
        // Hand-evaluated (independently, in floating point) from the
        // equations of motion with default parameters and dt = 0.02.
        let (next, r, done) = cartpole_step([0.0; 4], true, &CartPoleParams::default());
        let expected = [0.0, 0.1951219512195122, 0.0, -0.2926829268292683];
        for (a, b) in next.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{next:?}");
        }
        assert_eq!(r, 1.0);
        assert!(!done);
    }

    #[test]
    fn zero_force_zero_gravity_is_a_fixed_point() {
        let p = CartPoleParams {
            gravity: 0.0,
            force_mag: 0.0,
            ..CartPoleParams::default()
        };
        let (next, r, done) = cartpole_step([0.0; 4], true, &p);
        assert_eq!(next, [0.0; 4]);
        assert_eq!(r, 1.0);
        assert!(!done);
    }

    #[test]
    fn angle_past_threshold_terminates() {
        let p = CartPoleParams::default();
        let (_, _, done) = cartpole_step([0.0, 0.0, p.theta_threshold + 1e-3, 0.1], false, &p);
        assert!(done);
        let (_, _, done) = cartpole_step([-p.x_threshold - 1e-3, -0.1, 0.0, 0.0], true, &p);
        assert!(done);
    }

    #[test]
    fn reset_is_seeded_and_small() {
        let mut env = CartPole::new(CartPoleParams::default()).unwrap();
        let a = env.reset(Some(3));
        let b = env.reset(Some(3));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.05));
        let c = env.reset(Some(4));
        assert_ne!(a, c);
    }

    #[test]
    fn initial_state_covers_the_interval() {
        let mut env = CartPole::new(CartPoleParams::default()).unwrap();
        env.reset(Some(11));
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..2000 {
            for &v in env.reset(None).data() {
                assert!(v.abs() <= 0.05);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!(lo < -0.049 && hi > 0.049);
    }

    #[test]
    fn step_limit_ends_episode() {
        let p = CartPoleParams {
            max_steps: 3,
            ..CartPoleParams::default()
        };
        let mut env = CartPole::new(p).unwrap();
        env.set_state([0.0; 4]);
        let mut last = None;
        for i in 0..3 {
            let r = env.step(&Action::Discrete(i % 2)).unwrap();
            last = Some(r.done);
        }
        assert_eq!(last, Some(true));
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::EpisodeAlreadyDone));
    }

    #[test]
    fn step_before_reset_and_bad_action_fail() {
        let mut env = CartPole::new(CartPoleParams::default()).unwrap();
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::NotReset));
        env.reset(Some(0));
        assert!(matches!(
            env.step(&Action::Discrete(2)),
            Err(EnvError::ActionOutOfSpace { .. })
        ));
    }

    #[test]
    fn small_oscillation_stays_finite() {
        let p = CartPoleParams {
            force_mag: 0.0,
            x_threshold: f64::MAX,
            theta_threshold: f64::MAX,
            ..CartPoleParams::default()
        };
        let mut s = [0.0, 0.0, 0.01, 0.0];
        for _ in 0..10_000 {
            s = cartpole_step(s, false, &p).0;
        }
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gravity_changes_trajectory() {
        let heavy = CartPoleParams {
            gravity: 19.6,
            ..CartPoleParams::default()
        };
        let start = [0.0, 0.0, 0.1, 0.0];
        let a = cartpole_step(start, true, &CartPoleParams::default()).0;
        let b = cartpole_step(start, true, &heavy).0;
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = CartPoleParams {
            pole_mass: 0.0,
            ..CartPoleParams::default()
        };
        assert!(CartPole::new(p).is_err());
        let p = CartPoleParams {
            gravity: -1.0,
            ..CartPoleParams::default()
        };
        assert!(p.validate().is_err());
    }
}
