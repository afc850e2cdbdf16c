//! Online inverse reinforcement learning over a growing goal-directed MDP,
//! with goal and occupancy forecasting for everyday activity streams.

pub mod driver;
pub mod error;
pub mod eval;
pub mod exec;
pub mod forecast;
pub mod irl;
pub mod mdp;
pub mod planner;
pub mod sim;

pub use error::{DarkoError, Result};
pub use exec::Execution;
