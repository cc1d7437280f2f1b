//! Agreement between predicted keep-masks and ground-truth regions of interest.

use serde::{Deserialize, Serialize};

use crate::baselines::gradcam_mask;
use crate::batch::MaskBatch;
use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::masking::aiding_mask;
use crate::nn::{ClassifierModel, PolicyModel};
use crate::tensor::Scalar;

/// `|A ∩ B| / |A ∪ B|`; two empty masks count as identical.
pub fn iou(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x & y);
        union += usize::from(x | y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Expected IoU between a region of `roi` pixels and a uniformly random mask of `kept` pixels,
/// out of `total`.
pub fn random_mask_iou(total: usize, roi: usize, kept: usize) -> f64 {
    if roi == 0 && kept == 0 {
        return 1.0;
    }
    // overlap is hypergeometric; walk its pmf by successive ratios
    let lo = (roi + kept).saturating_sub(total);
    let hi = roi.min(kept);
    let mut weights = Vec::with_capacity(hi - lo + 1);
    let mut w = 1.0f64;
    for i in lo..=hi {
        weights.push(w);
        if i < hi {
            w *= ((roi - i) * (kept - i)) as f64 / ((i + 1) * (total + i + 1 - roi - kept)) as f64;
        }
    }
    let norm: f64 = weights.iter().sum();
    (lo..=hi)
        .zip(&weights)
        .map(|(i, w)| w / norm * i as f64 / (roi + kept - i) as f64)
        .sum()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskQualityReport {
    pub samples: usize,
    pub mean_iou: f64,
    pub median_iou: f64,
    /// Mean expected IoU of random masks with the same kept area as each predicted mask.
    pub mean_random_iou: f64,
    pub mean_keep_fraction: f64,
    /// Counts of per-sample keep fractions in ten equal bins over `[0, 1]`.
    pub keep_histogram: [usize; 10],
    pub per_sample_iou: Vec<f64>,
}

impl MaskQualityReport {
    pub fn to_text(&self) -> String {
        format!(
            "samples {}\nmean IoU {:.4}\nmedian IoU {:.4}\narea-matched random IoU {:.4}\nmean keep fraction {:.4}\nkeep histogram {:?}\n",
            self.samples, self.mean_iou, self.median_iou, self.mean_random_iou, self.mean_keep_fraction, self.keep_histogram
        )
    }
}

/// Scores each mask plane against the corresponding ROI.
pub fn score_masks(masks: &[&[u8]], rois: &[Vec<u8>]) -> Result<MaskQualityReport> {
    if masks.len() != rois.len() {
        return Err(Error::shape(format!("{} ROI masks", masks.len()), format!("{}", rois.len())));
    }
    if masks.is_empty() {
        return Err(Error::EmptyDataset("no masks to score".into()));
    }
    let mut per_sample = Vec::with_capacity(masks.len());
    let (mut random, mut keep) = (0.0, 0.0);
    let mut hist = [0usize; 10];
    for (m, r) in masks.iter().zip(rois) {
        if m.len() != r.len() {
            return Err(Error::shape(format!("{} pixels", r.len()), format!("{}", m.len())));
        }
        let kept = m.iter().filter(|&&v| v == 1).count();
        let area = r.iter().filter(|&&v| v == 1).count();
        per_sample.push(iou(m, r));
        random += random_mask_iou(m.len(), area, kept);
        let frac = kept as f64 / m.len() as f64;
        keep += frac;
        hist[((frac * 10.0) as usize).min(9)] += 1;
    }
    let n = masks.len() as f64;
    Ok(MaskQualityReport {
        samples: masks.len(),
        mean_iou: per_sample.iter().sum::<f64>() / n,
        median_iou: median(&per_sample),
        mean_random_iou: random / n,
        mean_keep_fraction: keep / n,
        keep_histogram: hist,
        per_sample_iou: per_sample,
    })
}

fn rois(data: &Dataset, split: SplitKind) -> Result<&[Vec<u8>]> {
    data.roi_masks(split)
        .ok_or_else(|| Error::Unsupported("dataset has no ground-truth ROI masks".into()))
}

fn score_batches(data: &Dataset, split: SplitKind, mut masks_for: impl FnMut(&[usize]) -> Result<MaskBatch>) -> Result<MaskQualityReport> {
    let truth = rois(data, split)?;
    let n = truth.len();
    let mut keep: Vec<MaskBatch> = Vec::new();
    for start in (0..n).step_by(100) {
        let idx: Vec<usize> = (start..(start + 100).min(n)).collect();
        keep.push(masks_for(&idx)?);
    }
    let planes: Vec<&[u8]> = keep
        .iter()
        .flat_map(|m| (0..m.shape()[0]).map(move |i| m.plane(i)))
        .collect();
    score_masks(&planes, truth)
}

/// Aiding masks of `policy` on every sample of `split`.
pub fn policy_mask_quality<T: Scalar>(policy: &PolicyModel<T>, data: &Dataset, split: SplitKind) -> Result<MaskQualityReport> {
    score_batches(data, split, |idx| Ok(aiding_mask(&policy.forward(&data.batch::<T>(split, idx)?)?)))
}

/// Thresholded activation-map masks of `classifier` on every sample of `split`.
pub fn gradcam_mask_quality<T: Scalar>(
    classifier: &ClassifierModel<T>,
    data: &Dataset,
    split: SplitKind,
) -> Result<MaskQualityReport> {
    score_batches(data, split, |idx| gradcam_mask(classifier, &data.batch::<T>(split, idx)?))
}
