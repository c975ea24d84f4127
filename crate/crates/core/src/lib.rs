//! Streaming spiking keyword spotting.
//!
//! Log mel-filterbank frames drive a feed-forward network of adaptive LIF neurons one
//! frame per timestep. A cumulative softmax of the readout potentials gives a confidence
//! score at every step, and inference stops as soon as that score crosses a threshold.

pub mod audio;
pub mod checkpoint;
pub mod datasets;
pub mod decision;
pub mod energy;
pub mod error;
pub mod features;
pub mod snn;
pub mod training;

pub use error::{Error, Result};
