pub mod datakit;
pub mod distortion;
pub mod error;
pub mod filterbank;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod raster;
pub mod supervision;
pub mod trainer;

pub use error::{Error, Result};
