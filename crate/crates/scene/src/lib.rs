//! Synthetic ground-truth scenes, the exact reference renderer, and the
//! dataset format shared with the trainer and evaluation suite.

pub mod camera;
pub mod dataset;
pub mod emit;
pub mod error;
pub mod exact;
pub mod geom;
pub mod heightgrid;
pub mod synth;

pub use error::{Result, SceneError};
