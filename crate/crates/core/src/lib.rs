//! Diversity-regularized prototype classification for rasterized
//! physiological waveforms.

pub mod cli;
pub mod diversity;
pub mod error;
pub mod latentmap;
pub mod ndgrad;
pub mod objective;
pub mod protomodel;
pub mod rng;
pub mod signalkit;
pub mod trainer;

pub use error::{Error, Result};
