//! Persistence, discovery and error threshold of the finite-population Moran
//! model on the sharp-peak landscape.

pub mod asymptotics;
pub mod bd_chain;
pub mod error;
pub mod laplace_audit;
pub mod log_weight;
pub mod params;
pub mod simulator;

pub use error::{Error, Result};
pub use log_weight::LogWeight;
pub use params::ModelParams;
