//! Multi-view study classification with a convolutional feature extractor,
//! square concatenation of per-view feature maps and a patch-size-1 vision
//! transformer, plus the single-view and view-pooling baselines used to
//! compare against it.

pub mod assembly;
pub mod backbone;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod kv;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
