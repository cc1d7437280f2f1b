//! On-disk layout: `images/*.png`, `labels.csv` (`filename,label[,split]`), optional
//! `roi/*.png`, and `spec.json` for generated data.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Dataset, Sample, SplitKind};
use crate::error::{Error, Result};
use crate::nn::layers::bilinear_resize;

/// Split fractions applied to rows without an explicit split.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.60, 0.25, 0.15];

/// Assigns splits by sorting on SHA-256 of the filename, with counts from largest-remainder
/// rounding of [`SPLIT_FRACTIONS`].
pub fn split_by_hash(filenames: &[String]) -> Vec<SplitKind> {
    let n = filenames.len();
    let exact: Vec<f64> = SPLIT_FRACTIONS.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in &by_remainder {
        if remaining == 0 {
            break;
        }
        counts[k] += 1;
        remaining -= 1;
    }
    let mut order: Vec<(Vec<u8>, usize)> = filenames
        .iter()
        .enumerate()
        .map(|(i, f)| (Sha256::digest(f.as_bytes()).to_vec(), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| filenames[a.1].cmp(&filenames[b.1])));
    let mut out = vec![SplitKind::Train; n];
    let mut pos = 0;
    for (kind, &count) in SplitKind::ALL.iter().zip(&counts) {
        for &(_, i) in &order[pos..pos + count] {
            out[i] = *kind;
        }
        pos += count;
    }
    out
}

fn decode_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let pixels = if wide {
        img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    };
    Ok((pixels, h, w))
}

struct Row {
    filename: String,
    label: usize,
    split: Option<SplitKind>,
}

fn read_labels(path: &Path) -> Result<Vec<Row>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() < 2 {
            if record.iter().all(str::is_empty) {
                continue;
            }
            return Err(Error::Config(format!(
                "{}:{}: expected filename,label[,split]",
                path.display(),
                line + 1
            )));
        }
        if line == 0 && &record[0] == "filename" {
            continue;
        }
        let label = record[1].parse().map_err(|_| {
            Error::Config(format!("{}:{}: bad label {:?}", path.display(), line + 1, &record[1]))
        })?;
        let split = match record.get(2).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        rows.push(Row {
            filename: record[0].to_string(),
            label,
            split,
        });
    }
    Ok(rows)
}

/// Loads an image folder, resizing every image (bilinear) to `height×width`.
pub fn load_folder(root: &Path, height: usize, width: usize) -> Result<Dataset> {
    if height == 0 || width == 0 {
        return Err(Error::Config("target image size must be positive".into()));
    }
    let labels_path = root.join("labels.csv");
    if !labels_path.is_file() {
        return Err(Error::io(
            &labels_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "labels.csv not found"),
        ));
    }
    let rows = read_labels(&labels_path)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", labels_path.display())));
    }
    let unsplit: Vec<String> = rows
        .iter()
        .filter(|r| r.split.is_none())
        .map(|r| r.filename.clone())
        .collect();
    let mut hashed = split_by_hash(&unsplit).into_iter();
    let roi_dir = root.join("roi");
    let with_roi = roi_dir.is_dir();
    let mut splits: [Vec<Sample>; 3] = Default::default();
    let mut rois: [Vec<Vec<u8>>; 3] = Default::default();
    for row in &rows {
        let kind = match row.split {
            Some(k) => k,
            None => hashed.next().expect("one hashed split per unsplit row"),
        };
        let path = root.join("images").join(&row.filename);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let (pixels, h, w) = decode_gray(&path)?;
        let image = bilinear_resize(&pixels, h, w, height, width)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0) as f32)
            .collect();
        splits[kind.index()].push(Sample {
            id: row.filename.clone(),
            image,
            label: row.label,
        });
        if with_roi {
            let rpath = roi_dir.join(&row.filename);
            if !rpath.is_file() {
                return Err(Error::MissingFile(rpath));
            }
            let (m, mh, mw) = decode_gray(&rpath)?;
            let mask = bilinear_resize(&m, mh, mw, height, width)
                .into_iter()
                .map(|v| (v >= 0.5) as u8)
                .collect();
            rois[kind.index()].push(mask);
        }
    }
    let classes = rows.iter().map(|r| r.label).max().unwrap_or(0).max(1) + 1;
    Dataset::new(height, width, classes, splits, with_roi.then_some(rois))
}

/// Writes the dataset in the folder layout (16-bit images, 8-bit ROI masks).
pub fn write_dataset<S: Serialize>(dataset: &Dataset, root: &Path, spec: Option<&S>) -> Result<()> {
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let roi_dir = root.join("roi");
    if dataset.has_roi() {
        std::fs::create_dir_all(&roi_dir).map_err(|e| Error::io(&roi_dir, e))?;
    }
    let (h, w) = (dataset.height() as u32, dataset.width() as u32);
    let labels_path = root.join("labels.csv");
    let mut csv_out = String::from("filename,label,split\n");
    for kind in SplitKind::ALL {
        for (i, s) in dataset.split(kind).iter().enumerate() {
            let filename = format!("{}.png", s.id);
            let raw: Vec<u16> = s.image.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, raw).expect("image size matches");
            let path = images.join(&filename);
            img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            if let Some(masks) = dataset.roi_masks(kind) {
                let raw: Vec<u8> = masks[i].iter().map(|&m| m * 255).collect();
                let img = image::GrayImage::from_raw(w, h, raw).expect("mask size matches");
                let path = roi_dir.join(&filename);
                img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            }
            csv_out.push_str(&format!("{filename},{},{}\n", s.label, kind.name()));
        }
    }
    std::fs::write(&labels_path, csv_out).map_err(|e| Error::io(&labels_path, e))?;
    if let Some(spec) = spec {
        let path = root.join("spec.json");
        let json = serde_json::to_string_pretty(spec).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    #[test]
    fn hundred_rows_split_sixty_twenty_five_fifteen() {
        let names: Vec<String> = (0..100).map(|i| format!("img{i}.png")).collect();
        let kinds = split_by_hash(&names);
        let count = |k| kinds.iter().filter(|&&x| x == k).count();
        assert_eq!(
            (count(SplitKind::Train), count(SplitKind::Val), count(SplitKind::Test)),
            (60, 25, 15)
        );
        assert_eq!(kinds, split_by_hash(&names));
    }

    #[test]
    fn largest_remainder_rounding() {
        // 7 · (0.6, 0.25, 0.15) = (4.2, 1.75, 1.05) → floors (4, 1, 1), one left → val
        let names: Vec<String> = (0..7).map(|i| format!("{i}")).collect();
        let kinds = split_by_hash(&names);
        let count = |k| kinds.iter().filter(|&&x| x == k).count();
        assert_eq!((count(SplitKind::Train), count(SplitKind::Val), count(SplitKind::Test)), (4, 2, 1));
    }

    #[test]
    fn empty_labels_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.csv"), "").unwrap();
        assert!(matches!(load_folder(dir.path(), 8, 8), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        std::fs::write(dir.path().join("labels.csv"), "filename,label\nghost.png,1\n").unwrap();
        match load_folder(dir.path(), 8, 8) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("ghost.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sixteen_bit_images_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        let raw: Vec<u16> = vec![0, 65535, 32768, 13107];
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 2, raw).unwrap();
        img.save(dir.path().join("images/a.png")).unwrap();
        std::fs::write(dir.path().join("labels.csv"), "a.png,0,train\n").unwrap();
        let d = load_folder(dir.path(), 2, 2).unwrap();
        let px = &d.split(SplitKind::Train)[0].image;
        let expected = [0.0, 1.0, 32768.0 / 65535.0, 0.2];
        for (a, b) in px.iter().zip(expected) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        assert_eq!(d.classes(), 2);
    }

    #[test]
    fn written_dataset_reloads_with_rois() {
        let spec = SyntheticSpec {
            train: 6,
            val: 2,
            test: 2,
            ..SyntheticSpec::default()
        };
        let d = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path(), Some(&spec)).unwrap();
        let back = load_folder(dir.path(), 32, 32).unwrap();
        for kind in SplitKind::ALL {
            assert_eq!(back.split(kind).len(), d.split(kind).len());
            assert_eq!(back.roi_masks(kind), d.roi_masks(kind));
            for (a, b) in back.split(kind).iter().zip(d.split(kind)) {
                assert_eq!(a.label, b.label);
                assert!(a.image.iter().zip(&b.image).all(|(x, y)| (x - y).abs() < 1e-4));
            }
        }
        let again = tempfile::tempdir().unwrap();
        write_dataset(&d, again.path(), Some(&spec)).unwrap();
        for f in ["labels.csv", "spec.json", "images/train_00000.png", "roi/test_00001.png"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
    }
}
