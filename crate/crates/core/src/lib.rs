//! Low-light image enhancement with classical preprocessing and a compact
//! depthwise-separable U-Net.

pub mod cli;
pub mod error;
pub mod image;
pub mod metrics;
pub mod preproc;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use image::{ImageF32, ImageU8};
