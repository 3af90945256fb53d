//! Gradient flow of a two-layer ReLU network on a two-point dataset.

pub mod dataset;
pub mod error;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod parallel;
pub mod phases;
pub mod record;
pub mod reduced;
pub mod theory;

pub use error::{Error, Result};
