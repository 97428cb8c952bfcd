//! Efficient graph convolutional networks for skeleton-based action recognition.
//!
//! The crate covers the full pipeline at desk scale: skeleton graph partitions,
//! preprocessing into joint/velocity/bone branches, a small reverse-mode tensor
//! engine, the layer and block zoo, compound scaling with analytic complexity
//! accounting, and a deterministic training loop.

pub mod arch;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
