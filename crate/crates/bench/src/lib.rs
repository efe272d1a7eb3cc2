//! Shared helpers for the criterion benches.

use streamrl_core::benchmarks::EnvFactory;
use streamrl_core::env::Environment;
use streamrl_core::envs::{CartPole, CartPoleParams, GridScene, GridWorld};

pub fn cartpole_factory() -> EnvFactory {
    EnvFactory::new(|| Ok(Box::new(CartPole::new(CartPoleParams::default())?) as Box<dyn Environment>))
}

pub fn gridworld_factory(size: usize) -> EnvFactory {
    let scene = GridScene::empty(size, size, (0, 0), (size - 1, size - 1)).expect("valid scene");
    EnvFactory::new(move || Ok(Box::new(GridWorld::new(scene.clone())) as Box<dyn Environment>))
}
