//! Robust reinforcement-learning informative path planning for
//! spatio-temporal wildfire monitoring.

pub mod error;
pub mod autodiff;
pub mod baselines;
pub mod belief;
pub mod dpm;
pub mod firesim;
pub mod harness;
pub mod mission;
pub mod model;
pub mod policy;
pub mod roadmap;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
