//! Joint coverage / localisation placement of a new base station in a grid
//! city that already hosts one pre-deployed base station.
//!
//! The crate is organised bottom-up:
//!
//! - [`city`]: grid geometry, buildings, candidate sites, line of sight.
//! - [`radio`]: synthetic path-loss RSS and the coverage-rate objective.
//! - [`locate`]: RSS fingerprinting with KNN and the localisation-error objective.
//! - [`optimize`]: per-site objective evaluation and the exhaustive-search oracles.
//! - [`env`]: the placement MDP (state encoding, actions, reward).
//! - [`nn`]: a small convolutional / dense Q-network with manual backprop and Adam.
//! - [`agent`]: DQN training with experience replay and a target network, and
//!   greedy application rollouts.
//! - [`cli`]: the `bsplace` command-line front end.

pub mod agent;
pub mod city;
pub mod cli;
pub mod env;
pub mod error;
pub mod locate;
pub mod nn;
pub mod optimize;
pub mod radio;
pub mod rng;

pub use error::{Error, Result};
