//! Coarse-to-fine residual image restoration with green (backprop-free) learning.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod complexity;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod gbrt;
pub mod generate;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod saab;
pub mod select;
pub mod synth;

pub use complexity::{report_complexity, Complexity};
pub use error::{GuslError, Result};
pub use image::Image;
pub use io::{load_image, load_model, save_image, save_model, Manifest, Normalization};
pub use pipeline::{restore, train, GuslModel, TrainConfig};
