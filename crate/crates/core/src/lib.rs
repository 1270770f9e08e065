//! Integer-only inference and calibration for a small CNN that blends the two
//! motion-compensated predictions of a bi-predicted block.
//!
//! The float reference path lives in [`engine::forward_float`], the int16
//! path in [`engine::forward_int16`]; [`quantizer::calibrate`] turns float
//! weights into the integer form.

mod codec;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod gating;
pub mod metrics;
pub mod model;
pub mod quantizer;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use model::{NetworkConfig, Weights};
pub use quantizer::QuantizedWeights;
pub use tensor::Tensor;
