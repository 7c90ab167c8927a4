//! Deterministic highway multi-agent simulation and self-play training.
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod map;
pub mod nn;
pub mod observation;
pub mod reward;
pub mod scenario;
pub mod train;
pub mod world;

pub use error::{Error, Result};
