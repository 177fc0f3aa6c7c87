//! Neural temporal point process for forecasting directed hyperedge events.
//!
//! The model runs in three stages on top of memory-based temporal node
//! representations: a lognormal time model decides which nodes fire next,
//! adjacency and size heads propose candidate hyperedges, and an attention
//! scorer ranks them.

pub mod checkpoint;
pub mod error;
pub mod forecast;
pub mod heads;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod stream;
pub mod train;

pub use error::{Error, Result};
