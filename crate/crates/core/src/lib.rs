//! Backstepping-stabilized direct heuristic dynamic programming (dHDP)
//! tracking control for Euler-Lagrange systems.
//!
//! The crate is organized bottom-up:
//!
//! - [`plant`]: manipulator dynamics, RK4 ground truth and the Euler design model
//! - [`backstepping`]: error coordinates, virtual controls and the gain condition
//! - [`actor_critic`]: the two networks, their update rules and learning-rate bounds
//! - [`trainer`]: the closed loop, trials and reset episodes
//! - [`eval`]: MSE, success criteria, benchmark scenarios
//! - [`config`]: experiment files
//! - [`cli`]: the `run`, `suite`, `check` and `plot-data` commands

pub mod actor_critic;
pub mod backstepping;
pub mod cli;
pub mod config;
pub mod eval;
pub mod plant;
pub mod trainer;
