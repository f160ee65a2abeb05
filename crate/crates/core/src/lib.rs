//! Chance-constrained trajectory planning under uncertainty.

pub mod calibration;
pub mod chance_eval;
pub mod error;
pub mod harness;
pub mod mpc;
pub mod planner;
pub mod rng;
pub mod trajectory;
pub mod uncertainty;

pub use error::{Error, Result};
