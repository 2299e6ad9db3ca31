//! Simulation, handcrafted control, and reinforcement learning for the
//! collective flashing ratchet.

pub mod autograd;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod physics;
pub mod policy;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
