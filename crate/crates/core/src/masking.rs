//! Thresholding policy probabilities into keep/erase masks and applying them.

use std::path::Path;

use rand::Rng;

use crate::batch::{shape4, ImageBatch, MaskBatch, MaskMode, PolicyOutput};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Keep-mask that erases the pixels the policy calls important: keep where `p < 0.5`.
pub fn adversarial_mask<T: Scalar>(p: &PolicyOutput<T>) -> MaskBatch {
    let half = T::of(0.5);
    let keep = p.probs().data().iter().map(|&v| (v < half) as u8).collect();
    MaskBatch::new(shape4(p.shape()), keep, MaskMode::Adversarial).expect("policy shape is B×1×H×W")
}

/// Keep-mask that preserves the pixels the policy calls important: keep where `p > 0.5`.
///
/// A pixel at exactly 0.5 is erased by both this and [`adversarial_mask`].
pub fn aiding_mask<T: Scalar>(p: &PolicyOutput<T>) -> MaskBatch {
    let half = T::of(0.5);
    let keep = p.probs().data().iter().map(|&v| (v > half) as u8).collect();
    MaskBatch::new(shape4(p.shape()), keep, MaskMode::Aiding).expect("policy shape is B×1×H×W")
}

/// Stochastic adversarial action: each pixel is erased independently with probability `p`.
/// Only used to check the likelihood-ratio estimator; training thresholds deterministically.
pub fn sample_adversarial_mask<T: Scalar>(p: &PolicyOutput<T>, rng: &mut impl Rng) -> MaskBatch {
    let keep = sample_erasures(p.probs().data(), rng)
        .into_iter()
        .map(|erase| (!erase) as u8)
        .collect();
    MaskBatch::new(shape4(p.shape()), keep, MaskMode::Adversarial).expect("policy shape is B×1×H×W")
}

/// Independent Bernoulli draws, `true` with probability `p[i]`.
pub fn sample_erasures<T: Scalar>(p: &[T], rng: &mut impl Rng) -> Vec<bool> {
    p.iter().map(|&v| rng.random::<f64>() < v.f64()).collect()
}

/// Elementwise product of images and mask; labels pass through.
pub fn apply_mask<T: Scalar>(batch: &ImageBatch<T>, mask: &MaskBatch) -> Result<ImageBatch<T>> {
    if batch.images().shape() != mask.shape() {
        return Err(Error::shape(
            format!("mask {:?}", batch.images().shape()),
            format!("{:?}", mask.shape()),
        ));
    }
    let data = batch
        .images()
        .data()
        .iter()
        .zip(mask.keep())
        .map(|(&x, &k)| if k == 1 { x } else { T::zero() })
        .collect();
    batch.with_images(Tensor::from_vec(batch.images().shape(), data)?)
}

fn mask_plane_bytes(mask: &MaskBatch, index: usize) -> Result<(u32, u32, Vec<u8>)> {
    let [b, _, h, w] = mask.shape();
    if index >= b {
        return Err(Error::InvalidArgument(format!(
            "mask index {index} out of range for batch of {b}"
        )));
    }
    let bytes = mask.plane(index).iter().map(|&k| k * 255).collect();
    Ok((w as u32, h as u32, bytes))
}

/// Writes one mask of the batch as an 8-bit PNG (0 ↦ 0, 1 ↦ 255).
pub fn write_mask_png(mask: &MaskBatch, index: usize, path: &Path) -> Result<()> {
    let (w, h, bytes) = mask_plane_bytes(mask, index)?;
    let img = image::GrayImage::from_raw(w, h, bytes).expect("plane size matches");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes one mask of the batch as a binary (P5) PGM.
pub fn write_mask_pgm(mask: &MaskBatch, index: usize, path: &Path) -> Result<()> {
    let (w, h, bytes) = mask_plane_bytes(mask, index)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&bytes);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
