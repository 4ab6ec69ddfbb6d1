pub mod error;
pub mod gaussians;
pub mod guidance;
pub mod image;
pub mod io;
pub mod metrics;
pub mod rasterizer;
pub mod trainer;

pub use error::{Error, Result};
pub use nalgebra;
