//! Value carriers passed between the networks, masking and objective code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Grayscale images `B×1×H×W` with values in `[0, 1]`, plus one class label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape("B×1×H×W images", format!("{shape:?}")));
        }
        if shape[0] != labels.len() {
            return Err(Error::shape(
                format!("{} labels", shape[0]),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(v) = images
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(ImageBatch { images, labels })
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn image(&self, index: usize) -> &[T] {
        let plane = self.height() * self.width();
        &self.images.data()[index * plane..(index + 1) * plane]
    }

    /// Replaces the pixels, keeping labels. Range is re-validated.
    pub fn with_images(&self, images: Tensor<T>) -> Result<Self> {
        images.expect_shape(self.images.shape(), "images")?;
        ImageBatch::new(images, self.labels.clone())
    }

    pub fn cast<U: Scalar>(&self) -> ImageBatch<U> {
        ImageBatch {
            images: self.images.cast(),
            labels: self.labels.clone(),
        }
    }
}

/// Per-pixel usefulness probabilities `B×1×H×W`, each strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    probs: Tensor<T>,
}

impl<T: Scalar> PolicyOutput<T> {
    pub fn new(probs: Tensor<T>) -> Result<Self> {
        if probs.rank() != 4 || probs.shape()[1] != 1 {
            return Err(Error::shape(
                "B×1×H×W probabilities",
                format!("{:?}", probs.shape()),
            ));
        }
        if let Some(v) = probs
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v <= T::zero() || **v >= T::one())
        {
            return Err(Error::InvalidArgument(format!(
                "probability {v} outside (0, 1)"
            )));
        }
        Ok(PolicyOutput { probs })
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn shape(&self) -> &[usize] {
        self.probs.shape()
    }

    pub fn mean(&self) -> f64 {
        self.probs.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Keeps pixels the policy scores as unimportant.
    Adversarial,
    /// Keeps pixels the policy scores as important.
    Aiding,
    /// Produced by a baseline augmenter (cutout, Grad-CAM) or loaded from disk.
    External,
}

/// Binary keep (1) / erase (0) decisions, `B×1×H×W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBatch {
    shape: [usize; 4],
    keep: Vec<u8>,
    mode: MaskMode,
}

impl MaskBatch {
    pub fn new(shape: [usize; 4], keep: Vec<u8>, mode: MaskMode) -> Result<Self> {
        if shape[1] != 1 {
            return Err(Error::shape("B×1×H×W mask", format!("{shape:?}")));
        }
        if shape.iter().product::<usize>() != keep.len() {
            return Err(Error::shape(
                format!("{} mask elements", shape.iter().product::<usize>()),
                format!("{}", keep.len()),
            ));
        }
        if keep.iter().any(|&k| k > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(MaskBatch { shape, keep, mode })
    }

    pub fn filled(shape: [usize; 4], value: bool, mode: MaskMode) -> Self {
        MaskBatch {
            shape,
            keep: vec![value as u8; shape.iter().product()],
            mode,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn keep(&self) -> &[u8] {
        &self.keep
    }

    pub fn plane(&self, index: usize) -> &[u8] {
        let plane = self.shape[2] * self.shape[3];
        &self.keep[index * plane..(index + 1) * plane]
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().map(|&k| k as usize).sum::<usize>() as f64 / self.keep.len() as f64
    }

    pub fn is_all_ones(&self) -> bool {
        self.keep.iter().all(|&k| k == 1)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &self.shape,
            self.keep.iter().map(|&k| if k == 1 { T::one() } else { T::zero() }).collect(),
        )
        .expect("mask shape is consistent")
    }
}

/// Builds a `B×1×H×W` shape from a tensor shape, for mask construction.
pub(crate) fn shape4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}
