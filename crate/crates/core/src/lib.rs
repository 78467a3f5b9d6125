//! Flows of continuous-state branching processes with competition, simulated three
//! ways: Euler schemes on a shared space-time noise, a Lamperti time change, and
//! pruned Brownian trees read through their Ray-Knight local-time profiles.

pub mod error;
pub mod flow;
pub mod harness;
pub mod mechanism;
pub mod noise;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use mechanism::{BranchingMechanism, CompetitionMechanism, Jump};
pub use noise::NoiseField;
