//! Labeled grayscale datasets with deterministic train/val/test splits and batch order.
//!
//! Ground-truth ROI masks, when present, live beside the samples and are only reachable
//! through [`Dataset::roi_masks`]; batches carry pixels and labels only.

mod folder;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use folder::{load_folder, split_by_hash, write_dataset};
pub use synthetic::{generate, rule_label, RoiShape, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(SplitKind::Train),
            "val" | "valid" | "validation" => Some(SplitKind::Val),
            "test" => Some(SplitKind::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitKind::parse(s).ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Row-major `H×W` pixels in `[0, 1]`.
    pub image: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    classes: usize,
    splits: [Vec<Sample>; 3],
    roi: Option<[Vec<Vec<u8>>; 3]>,
}

impl Dataset {
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        splits: [Vec<Sample>; 3],
        roi: Option<[Vec<Vec<u8>>; 3]>,
    ) -> Result<Self> {
        if splits.iter().all(Vec::is_empty) {
            return Err(Error::EmptyDataset("no samples in any split".into()));
        }
        for s in splits.iter().flatten() {
            if s.image.len() != height * width {
                return Err(Error::shape(
                    format!("{height}×{width} image"),
                    format!("{} pixels in {}", s.image.len(), s.id),
                ));
            }
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
        }
        if let Some(roi) = &roi {
            for (masks, samples) in roi.iter().zip(&splits) {
                if masks.len() != samples.len() || masks.iter().any(|m| m.len() != height * width) {
                    return Err(Error::shape("one H×W ROI mask per sample", "mismatched ROI masks"));
                }
            }
        }
        Ok(Dataset {
            height,
            width,
            classes,
            splits,
            roi,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self, kind: SplitKind) -> &[Sample] {
        &self.splits[kind.index()]
    }

    pub fn has_roi(&self) -> bool {
        self.roi.is_some()
    }

    /// Ground-truth ROI masks (1 = inside), parallel to [`split`](Self::split). Evaluation only.
    pub fn roi_masks(&self, kind: SplitKind) -> Option<&[Vec<u8>]> {
        self.roi.as_ref().map(|r| r[kind.index()].as_slice())
    }

    /// Materializes the given sample indices of a split as a batch.
    pub fn batch<T: Scalar>(&self, kind: SplitKind, indices: &[usize]) -> Result<ImageBatch<T>> {
        let samples = self.split(kind);
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = samples.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("sample {i} out of range for {} split", kind.name()))
            })?;
            data.extend(s.image.iter().map(|&v| T::of(v as f64)));
            labels.push(s.label);
        }
        ImageBatch::new(
            Tensor::from_vec(&[indices.len(), 1, self.height, self.width], data)?,
            labels,
        )
    }

    /// The whole split, in stored order.
    pub fn full_batch<T: Scalar>(&self, kind: SplitKind) -> Result<ImageBatch<T>> {
        let idx: Vec<usize> = (0..self.split(kind).len()).collect();
        self.batch(kind, &idx)
    }

    /// Batches of one epoch in an order fixed by `(seed, epoch)`; the final short batch is kept.
    pub fn batches<T: Scalar>(
        &self,
        kind: SplitKind,
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> Result<Vec<ImageBatch<T>>> {
        let n = self.split(kind).len();
        if n == 0 {
            return Err(Error::EmptyDataset(format!("{} split is empty", kind.name())));
        }
        batch_indices(n, batch_size, seed, epoch)?
            .iter()
            .map(|idx| self.batch(kind, idx))
            .collect()
    }
}

/// Epoch permutation of `0..n` chunked into batches. `batch_size > n` yields one batch.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}
