//! Exact and sample-based tools for average-reward multichain MDPs:
//! chain classification, gain/bias evaluation, policy gradients, floored
//! simplex projections and policy mirror ascent.

pub mod chain;
pub mod checks;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod pma;
pub mod projection;
pub mod rng;
pub mod sampling;
pub mod values;

pub use error::{Error, Result};
pub use mdp::{Mdp, Policy};
