//! Nonlinear diffusion schemes for 1D signals and the residual networks they translate into.

pub mod error;
pub mod flux;
pub mod image;
pub mod network;
pub mod schemes;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
