//! Synthetic task with a known region of interest.
//!
//! Each image has one bright disc (or square) filled with period-4 stripes whose orientation
//! is the class. Dimmer striped squares of random orientation are scattered outside it; they
//! carry no label information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SplitKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiShape {
    Disc,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    /// Number of stripe orientations used as classes (2 to 4).
    pub classes: usize,
    pub roi_shape: RoiShape,
    /// Inclusive radius (half-side for squares) range of the ROI.
    pub roi_radius: (usize, usize),
    /// Stripe levels inside the ROI.
    pub roi_levels: (f32, f32),
    pub distractors: usize,
    /// Inclusive side-length range of distractor squares.
    pub distractor_side: (usize, usize),
    pub distractor_levels: (f32, f32),
    pub background: f32,
    pub noise_sigma: f32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 32,
            width: 32,
            classes: 2,
            roi_shape: RoiShape::Disc,
            roi_radius: (5, 8),
            roi_levels: (0.5, 1.0),
            distractors: 3,
            distractor_side: (4, 7),
            distractor_levels: (0.1, 0.4),
            background: 0.05,
            noise_sigma: 0.03,
            train: 1000,
            val: 200,
            test: 200,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic dataset: {m}")));
        if self.train + self.val + self.test == 0 {
            return Err(Error::EmptyDataset("synthetic dataset has no samples".into()));
        }
        if !(2..=4).contains(&self.classes) {
            return bad("classes must be between 2 and 4");
        }
        let (rmin, rmax) = self.roi_radius;
        if rmin < 2 || rmin > rmax || 2 * rmax + 1 > self.height.min(self.width) {
            return bad("ROI radius range must fit inside the image and be at least 2");
        }
        let (dmin, dmax) = self.distractor_side;
        if self.distractors > 0 && (dmin == 0 || dmin > dmax || dmax > self.height.min(self.width)) {
            return bad("distractor side range must fit inside the image");
        }
        let levels = [
            self.roi_levels.0,
            self.roi_levels.1,
            self.distractor_levels.0,
            self.distractor_levels.1,
            self.background,
        ];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensity levels must lie in [0, 1]");
        }
        if self.roi_levels.0 == self.roi_levels.1 {
            return bad("ROI stripes need two distinct levels");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }

    fn count(&self, kind: SplitKind) -> usize {
        match kind {
            SplitKind::Train => self.train,
            SplitKind::Val => self.val,
            SplitKind::Test => self.test,
        }
    }
}

/// Stripe level for orientation `o` at pixel `(y, x)`: period 4, two pixels per level.
fn stripe_is_high(o: usize, y: usize, x: usize, phase: usize, size: usize) -> bool {
    let coord = match o {
        0 => y,
        1 => x,
        2 => x + y,
        _ => x + size - y,
    };
    ((coord + phase) / 2) % 2 == 0
}

/// Pixel offset `(dy, dx)` along which stripes of orientation `o` are constant.
fn stripe_direction(o: usize) -> (isize, isize) {
    match o {
        0 => (0, 1),
        1 => (1, 0),
        2 => (1, -1),
        _ => (1, 1),
    }
}

pub(crate) struct Generated {
    pub image: Vec<f32>,
    pub roi: Vec<u8>,
    pub label: usize,
}

fn sample_rng(seed: u64, kind: SplitKind, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind.index() as u64) << 40) | index as u64);
    rng
}

pub(crate) fn generate_one(spec: &SyntheticSpec, kind: SplitKind, index: usize) -> Generated {
    let (h, w) = (spec.height, spec.width);
    let size = h.max(w);
    let label = index % spec.classes;
    let mut rng = sample_rng(spec.seed, kind, index);
    let mut image = vec![spec.background; h * w];
    let mut roi = vec![0u8; h * w];

    let r = rng.random_range(spec.roi_radius.0..=spec.roi_radius.1);
    let cy = rng.random_range(r..h - r);
    let cx = rng.random_range(r..w - r);
    let phase = rng.random_range(0..4);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as isize - cy as isize, x as isize - cx as isize);
            let inside = match spec.roi_shape {
                RoiShape::Disc => dy * dy + dx * dx <= (r * r) as isize,
                RoiShape::Square => dy.unsigned_abs() <= r && dx.unsigned_abs() <= r,
            };
            if inside {
                roi[y * w + x] = 1;
                image[y * w + x] = if stripe_is_high(label, y, x, phase, size) {
                    spec.roi_levels.1
                } else {
                    spec.roi_levels.0
                };
            }
        }
    }

    let mut occupied: Vec<bool> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            // ROI dilated by one pixel
            (y.saturating_sub(1)..(y + 2).min(h))
                .any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| roi[yy * w + xx] == 1))
        })
        .collect();
    for _ in 0..spec.distractors {
        let side = rng.random_range(spec.distractor_side.0..=spec.distractor_side.1);
        let orientation = rng.random_range(0..spec.classes);
        let dphase = rng.random_range(0..4);
        for _attempt in 0..50 {
            let y0 = rng.random_range(0..=h - side);
            let x0 = rng.random_range(0..=w - side);
            let free = (y0..y0 + side).all(|y| (x0..x0 + side).all(|x| !occupied[y * w + x]));
            if !free {
                continue;
            }
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    occupied[y * w + x] = true;
                    image[y * w + x] = if stripe_is_high(orientation, y, x, dphase, size) {
                        spec.distractor_levels.1
                    } else {
                        spec.distractor_levels.0
                    };
                }
            }
            break;
        }
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, spec.noise_sigma).expect("validated sigma");
        for v in &mut image {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Generated { image, roi, label }
}

/// Deterministic train/val/test dataset with ground-truth ROI masks.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut splits: [Vec<Sample>; 3] = Default::default();
    let mut rois: [Vec<Vec<u8>>; 3] = Default::default();
    for kind in SplitKind::ALL {
        for i in 0..spec.count(kind) {
            let g = generate_one(spec, kind, i);
            splits[kind.index()].push(Sample {
                id: format!("{}_{i:05}", kind.name()),
                image: g.image,
                label: g.label,
            });
            rois[kind.index()].push(g.roi);
        }
    }
    Dataset::new(spec.height, spec.width, spec.classes, splits, Some(rois))
}

/// Rule-based label read from ROI pixels only: the orientation with the least variation
/// along its stripe direction. `None` when the ROI carries no orientation information.
pub fn rule_label(image: &[f32], roi: &[u8], height: usize, width: usize, classes: usize) -> Option<usize> {
    let mut scores = Vec::with_capacity(classes);
    for o in 0..classes {
        let (dy, dx) = stripe_direction(o);
        let (mut total, mut count) = (0.0f64, 0usize);
        for y in 0..height {
            for x in 0..width {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let (a, b) = (y * width + x, ny as usize * width + nx as usize);
                if roi[a] == 1 && roi[b] == 1 {
                    total += (image[a] as f64 - image[b] as f64).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            return None;
        }
        scores.push(total / count as f64);
    }
    let best = (0..classes).min_by(|&a, &b| scores[a].total_cmp(&scores[b]))?;
    let unique = scores
        .iter()
        .enumerate()
        .all(|(o, &s)| o == best || s > scores[best] + 1e-9);
    unique.then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f32) -> SyntheticSpec {
        SyntheticSpec {
            train: 60,
            val: 20,
            test: 20,
            noise_sigma: noise,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small(0.03)).unwrap(), generate(&small(0.03)).unwrap());
        let other = SyntheticSpec { seed: 1, ..small(0.03) };
        assert_ne!(generate(&small(0.03)).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn classes_are_balanced() {
        let spec = SyntheticSpec {
            train: 200,
            val: 0,
            test: 0,
            ..SyntheticSpec::default()
        };
        let d = generate(&spec).unwrap();
        let ones = d.split(SplitKind::Train).iter().filter(|s| s.label == 1).count();
        assert!((99..=101).contains(&ones));
    }

    #[test]
    fn oracle_is_perfect_on_noiseless_data() {
        for classes in 2..=4 {
            let spec = SyntheticSpec { classes, ..small(0.0) };
            let d = generate(&spec).unwrap();
            for kind in SplitKind::ALL {
                for (s, roi) in d.split(kind).iter().zip(d.roi_masks(kind).unwrap()) {
                    assert_eq!(rule_label(&s.image, roi, 32, 32, classes), Some(s.label), "{}", s.id);
                }
            }
        }
    }

    #[test]
    fn roi_suffices_and_is_necessary_for_the_label() {
        let d = generate(&small(0.0)).unwrap();
        for (s, roi) in d.split(SplitKind::Train).iter().zip(d.roi_masks(SplitKind::Train).unwrap()) {
            let outside_erased: Vec<f32> = s.image.iter().zip(roi).map(|(&v, &m)| v * m as f32).collect();
            assert_eq!(rule_label(&outside_erased, roi, 32, 32, 2), Some(s.label));
            let inside_erased: Vec<f32> = s.image.iter().zip(roi).map(|(&v, &m)| v * (1 - m) as f32).collect();
            assert_eq!(rule_label(&inside_erased, roi, 32, 32, 2), None);
        }
    }

    #[test]
    fn distractors_stay_outside_roi_and_pixels_in_range() {
        let d = generate(&small(0.0)).unwrap();
        for (s, roi) in d.split(SplitKind::Val).iter().zip(d.roi_masks(SplitKind::Val).unwrap()) {
            for (&v, &m) in s.image.iter().zip(roi) {
                assert!((0.0..=1.0).contains(&v));
                if m == 1 {
                    assert!(v == 0.5 || v == 1.0);
                } else {
                    assert!(v <= 0.4);
                }
            }
        }
    }

    #[test]
    fn split_ids_are_disjoint() {
        let d = generate(&small(0.03)).unwrap();
        let mut ids: Vec<&str> = SplitKind::ALL
            .iter()
            .flat_map(|&k| d.split(k).iter().map(|s| s.id.as_str()))
            .collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let spec = SyntheticSpec {
            train: 0,
            val: 0,
            test: 0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::EmptyDataset(_))));
    }
}
