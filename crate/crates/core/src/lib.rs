//! Hierarchical soft actor-critic agents on a sparse-reward chain.

pub mod agents;
pub mod autodiff;
pub mod dist;
pub mod env;
pub mod error;
pub mod harness;

pub use error::{Error, Result};
