//! Occupancy-grid driving simulator with joint motion and query Q-learning.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod grid;
pub mod learner;
pub mod motion;
pub mod oracle;
pub mod perception;
pub mod qfile;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
