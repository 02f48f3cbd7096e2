//! Channel splitting network for single-image MR super-resolution.

pub mod autodiff;
pub mod cli;
pub mod degradation;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod resize;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor4};
