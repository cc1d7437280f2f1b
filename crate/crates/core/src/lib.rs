//! Adversarial policy-gradient augmentation (APGA).
//!
//! A segmentation policy scores each pixel's usefulness for a classifier. Erasing the pixels
//! it marks important yields a reward (the classifier's loss increase) that trains the
//! policy with a likelihood-ratio loss; keeping only those pixels yields augmented images
//! that train the classifier alongside the originals.

pub mod baselines;
pub mod batch;
pub mod data;
pub mod error;
pub mod harness;
pub mod masking;
pub mod nn;
pub mod objective;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use batch::{ImageBatch, MaskBatch, MaskMode, PolicyOutput};
pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor, TensorF};
