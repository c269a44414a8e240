//! Unsupervised pansharpening with learnable degradation blocks.

pub mod autodiff;
pub mod baselines;
pub mod check;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
