//! People counting from surveillance video.
//!
//! Frames are resampled and quantized, a streaming histogram background model
//! extracts a binary foreground channel, and RGBP sequences are regressed to a
//! people count by a recurrent convolutional network.

pub mod annotation;
pub mod background;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod label;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod window;

pub use error::{Error, Result};
