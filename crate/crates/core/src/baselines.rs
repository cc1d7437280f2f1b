//! Comparison augmenters: random cutout and thresholded class-activation maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{ImageBatch, MaskBatch, MaskMode};
use crate::error::{Error, Result};
use crate::masking::apply_mask;
use crate::nn::layers::bilinear_resize;
use crate::nn::ClassifierModel;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutoutConfig {
    /// Smallest patch side as a fraction of the image side.
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub patches: usize,
}

impl Default for CutoutConfig {
    fn default() -> Self {
        CutoutConfig {
            min_fraction: 0.1,
            max_fraction: 0.5,
            patches: 1,
        }
    }
}

impl CutoutConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_fraction > 0.0 && self.min_fraction <= self.max_fraction && self.max_fraction <= 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "cutout fractions must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.min_fraction, self.max_fraction
            )));
        }
        if self.patches == 0 {
            return Err(Error::Config("cutout needs at least one patch".into()));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

fn side(len: usize, cfg: &CutoutConfig, rng: &mut impl Rng) -> usize {
    let frac = if cfg.min_fraction == cfg.max_fraction {
        cfg.min_fraction
    } else {
        rng.random_range(cfg.min_fraction..=cfg.max_fraction)
    };
    ((frac * len as f64).round() as usize).clamp(1, len)
}

/// Keep-mask with `cfg.patches` zeroed rectangles per image, placed entirely inside the image.
pub fn cutout_mask(shape: [usize; 4], cfg: &CutoutConfig, rng: &mut impl Rng) -> Result<(MaskBatch, Vec<Vec<Rect>>)> {
    cfg.validate()?;
    let [b, _, h, w] = shape;
    let mut keep = vec![1u8; b * h * w];
    let mut rects = Vec::with_capacity(b);
    for i in 0..b {
        let plane = &mut keep[i * h * w..(i + 1) * h * w];
        let mut mine = Vec::with_capacity(cfg.patches);
        for _ in 0..cfg.patches {
            let (rh, rw) = (side(h, cfg, rng), side(w, cfg, rng));
            let r = Rect {
                y: rng.random_range(0..=h - rh),
                x: rng.random_range(0..=w - rw),
                h: rh,
                w: rw,
            };
            for y in r.y..r.y + r.h {
                plane[y * w + r.x..y * w + r.x + r.w].fill(0);
            }
            mine.push(r);
        }
        rects.push(mine);
    }
    Ok((MaskBatch::new(shape, keep, MaskMode::External)?, rects))
}

pub fn cutout<T: Scalar>(batch: &ImageBatch<T>, cfg: &CutoutConfig, rng: &mut impl Rng) -> Result<ImageBatch<T>> {
    Ok(cutout_with_rects(batch, cfg, rng)?.0)
}

/// As [`cutout`], also returning the rectangles placed in each image.
pub fn cutout_with_rects<T: Scalar>(
    batch: &ImageBatch<T>,
    cfg: &CutoutConfig,
    rng: &mut impl Rng,
) -> Result<(ImageBatch<T>, Vec<Vec<Rect>>)> {
    let (mask, rects) = cutout_mask(crate::batch::shape4(batch.images().shape()), cfg, rng)?;
    Ok((apply_mask(batch, &mask)?, rects))
}

/// Class-activation maps at the final conv layer, upsampled to the input size and min-max
/// normalized. A flat map yields `None`.
pub fn gradcam_maps<T: Scalar>(classifier: &ClassifierModel<T>, batch: &ImageBatch<T>) -> Result<Vec<Option<Vec<f64>>>> {
    let (h, w) = (batch.height(), batch.width());
    let attributions = classifier.final_conv_attribution(batch)?;
    Ok(attributions
        .iter()
        .map(|a| {
            let hw = a.h * a.w;
            let mut cam = vec![0.0f64; hw];
            for c in 0..a.channels {
                let g = &a.grads[c * hw..(c + 1) * hw];
                let weight = g.iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
                for (m, f) in cam.iter_mut().zip(&a.features[c * hw..(c + 1) * hw]) {
                    *m += weight * f.f64();
                }
            }
            cam.iter_mut().for_each(|v| *v = v.max(0.0));
            let up = bilinear_resize(&cam, a.h, a.w, h, w);
            let lo = up.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then(|| up.iter().map(|v| (v - lo) / (hi - lo)).collect())
        })
        .collect())
}

/// Keep-mask from each image's normalized activation map, kept where it exceeds 0.5. A flat
/// map gives an all-zeros mask and a warning.
pub fn gradcam_mask<T: Scalar>(classifier: &ClassifierModel<T>, batch: &ImageBatch<T>) -> Result<MaskBatch> {
    let maps = gradcam_maps(classifier, batch)?;
    let hw = batch.height() * batch.width();
    let mut keep = Vec::with_capacity(batch.len() * hw);
    for (i, map) in maps.iter().enumerate() {
        match map {
            Some(m) => keep.extend(m.iter().map(|&v| u8::from(v > 0.5))),
            None => {
                log::warn!("flat activation map for image {i}; using an all-zeros mask");
                keep.extend(std::iter::repeat_n(0u8, hw));
            }
        }
    }
    MaskBatch::new(crate::batch::shape4(batch.images().shape()), keep, MaskMode::External)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ClassifierArch, Parameterized};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones(b: usize, h: usize, w: usize) -> ImageBatch<f32> {
        ImageBatch::new(Tensor::full(&[b, 1, h, w], 1.0), vec![0; b]).unwrap()
    }

    #[test]
    fn fixed_half_fraction_zeroes_exactly_256_pixels() {
        let cfg = CutoutConfig { min_fraction: 0.5, max_fraction: 0.5, patches: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, rects) = cutout_with_rects(&ones(4, 32, 32), &cfg, &mut rng).unwrap();
        for i in 0..4 {
            let zeros = out.image(i).iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 256);
            assert_eq!(rects[i][0].area(), 256);
        }
    }

    #[test]
    fn zero_count_matches_rectangle_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, rects) = cutout_with_rects(&ones(50, 20, 28), &CutoutConfig::default(), &mut rng).unwrap();
        for (i, r) in rects.iter().enumerate() {
            let r = r[0];
            assert!(r.y + r.h <= 20 && r.x + r.w <= 28);
            let zeros = out.image(i).iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, r.area());
        }
        assert_eq!(out.labels(), &[0; 50]);
    }

    #[test]
    fn invalid_fractions_are_rejected() {
        for (lo, hi) in [(0.0, 0.0), (0.0, 0.5), (0.6, 0.5), (0.5, 1.2)] {
            let cfg = CutoutConfig { min_fraction: lo, max_fraction: hi, patches: 1 };
            assert!(cfg.validate().is_err());
        }
        let cfg = CutoutConfig { patches: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cutout_is_deterministic_per_seed() {
        let a = cutout_mask([3, 1, 16, 16], &CutoutConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = cutout_mask([3, 1, 16, 16], &CutoutConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_map_gives_all_zeros_mask() {
        let mut clf = ClassifierModel::<f32>::new(ClassifierArch::default(), 0).unwrap();
        for (_, t) in clf.parameters_mut() {
            t.fill(0.0);
        }
        let m = gradcam_mask(&clf, &ones(2, 16, 16)).unwrap();
        assert_eq!(m.kept_fraction(), 0.0);
        assert_eq!(m.shape(), [2, 1, 16, 16]);
    }

    #[test]
    fn mask_is_binary_and_pure() {
        let clf = ClassifierModel::<f32>::new(ClassifierArch::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = (0..2 * 16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = ImageBatch::new(Tensor::from_vec(&[2, 1, 16, 16], data).unwrap(), vec![0, 1]).unwrap();
        let a = gradcam_mask(&clf, &batch).unwrap();
        assert!(a.keep().iter().all(|&k| k <= 1));
        assert_eq!(a, gradcam_mask(&clf, &batch).unwrap());
    }

    #[test]
    fn no_conv_classifier_is_unsupported() {
        let arch = ClassifierArch { blocks: vec![], head: None, classes: 2 };
        let clf = ClassifierModel::<f32>::new(arch, 0).unwrap();
        assert!(matches!(gradcam_mask(&clf, &ones(1, 4, 4)), Err(Error::Unsupported(_))));
    }
}
