//! Core field implementation: rendering math, the sinusoidal network, the
//! loss stack, and the two-phase trainer.

pub mod alloc_tuning;
pub mod backprop;
pub mod barron;
pub mod checkpoint;
pub mod error;
pub mod fastmath;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod radiance;
pub mod real;
pub mod render;
pub mod sampling;
pub mod schedule;
pub mod trainer;

pub use error::{CoreError, Result};
