//! Two-level multiple-timescale stochastic recurrent agent trained with
//! off-policy actor-critic on a sequential target-reaching task.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod exploration;
pub mod learner;
pub mod network;
pub mod replay;
pub mod runner;

pub use error::{Error, Result};
