//! Built-in parameterizable environments.

mod bandit;
mod cartpole;
mod gridworld;

pub use bandit::{bandit_step, Bandit, BanditParams};
pub use cartpole::{cartpole_step, CartPole, CartPoleOverrides, CartPoleParams};
pub use gridworld::{gridworld_step, GridScene, GridWorld, Pos, GRID_ACTIONS};
