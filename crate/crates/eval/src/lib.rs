//! Measurement suite: image quality with seasonal alignment, height-map
//! accuracy, shadow scoring against the exact mask, and the stability
//! protocol with its combined tuning score.

pub mod align;
pub mod error;
pub mod field;
pub mod metrics;
pub mod report;
pub mod stability;

pub use error::{EvalError, Result};
