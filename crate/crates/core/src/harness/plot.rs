//! SVG line charts of the metrics log and PNG mask galleries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use super::experiment::{run_checkpoint, RUN_CONFIG_FILE};
use super::ExperimentConfig;
use crate::baselines::gradcam_mask;
use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::masking::aiding_mask;
use crate::trainer::{load_classifier, load_policy, read_metrics, Augmentation, StepMetrics, METRICS_FILE, PRETRAINED_CKPT};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Renders series as polylines on shared axes. Output depends only on the inputs.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 == y0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    for (v, y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.4}</text>"#, left - 4.0, y + 4.0);
    }
    for (v, x) in [(x0, left), (x1, right)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, bottom + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, WIDTH / 2.0, HEIGHT - 8.0);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        if pts.len() == 1 {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, px(ser.points[0].0), py(ser.points[0].1));
        } else if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            right,
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

fn series<'a>(name: &'a str, rows: &[StepMetrics], f: impl Fn(&StepMetrics) -> Option<f64>) -> Series<'a> {
    Series {
        name,
        points: rows.iter().filter_map(|r| f(r).map(|v| (r.step as f64, v))).collect(),
    }
}

/// Writes `plots/{losses,reward,policy,val_accuracy}.svg` from the run's metrics log.
pub fn write_charts(dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(&dir.join(METRICS_FILE))?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", dir.join(METRICS_FILE).display())));
    }
    let charts = [
        (
            "losses",
            "Classification loss",
            vec![
                series("original", &rows, |r| Some(r.l_original)),
                series("adversarial", &rows, |r| r.l_adversarial),
            ],
        ),
        (
            "reward",
            "Adversarial reward",
            vec![series("reward", &rows, |r| r.reward), series("baseline", &rows, |r| r.baseline)],
        ),
        (
            "policy",
            "Mask statistics",
            vec![
                series("mean probability", &rows, |r| r.mean_policy_prob),
                series("kept fraction", &rows, |r| r.aid_keep_fraction),
            ],
        ),
        ("val_accuracy", "Validation accuracy", vec![series("accuracy", &rows, |r| r.val_accuracy)]),
    ];
    let out = dir.join("plots");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    for (file, title, ser) in charts {
        let path = out.join(format!("{file}.svg"));
        std::fs::write(&path, line_chart_svg(title, "step", &ser)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Grid image: one row per entry of `rows`, `columns` cells of `h × w` values in `[0, 1]`,
/// separated by 2-pixel white borders.
pub fn grid_image(rows: &[Vec<Vec<f64>>], h: usize, w: usize) -> GrayImage {
    const GAP: usize = 2;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = cols * (w + GAP) + GAP;
    let height = rows.len() * (h + GAP) + GAP;
    let mut img = GrayImage::from_pixel(width as u32, height as u32, Luma([255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let v = (cell[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                    let px = (GAP + c * (w + GAP) + x) as u32;
                    let py = (GAP + r * (h + GAP) + y) as u32;
                    img.put_pixel(px, py, Luma([v]));
                }
            }
        }
    }
    img
}

/// Writes `plots/gallery.png`: validation inputs, the run's aiding masks, and activation-map
/// masks, one row each. The aiding-mask row is mid-gray for runs without a trained policy.
pub fn write_gallery(dir: &Path, data: &Dataset, columns: usize) -> Result<PathBuf> {
    let config = ExperimentConfig::load(&dir.join(RUN_CONFIG_FILE))?;
    let n = data.split(SplitKind::Val).len().min(columns);
    if n == 0 {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    let (h, w) = (data.height(), data.width());
    let idx: Vec<usize> = (0..n).collect();
    let batch = data.batch::<f64>(SplitKind::Val, &idx)?;
    let inputs: Vec<Vec<f64>> = (0..n).map(|i| batch.image(i).to_vec()).collect();
    let planes = |m: &crate::batch::MaskBatch| -> Vec<Vec<f64>> {
        (0..n).map(|i| m.plane(i).iter().map(|&k| f64::from(k)).collect()).collect()
    };
    let policy_row = if config.train.augmentation == Augmentation::Apga {
        let policy = load_policy::<f64>(&config.train, &run_checkpoint(dir)?)?;
        planes(&aiding_mask(&policy.forward(&batch)?))
    } else {
        vec![vec![0.5; h * w]; n]
    };
    let reference = config.saliency_reference.clone().unwrap_or_else(|| dir.join(PRETRAINED_CKPT));
    let cam_row = planes(&gradcam_mask(&load_classifier::<f64>(&config.train, &reference)?, &batch)?);
    let out = dir.join("plots");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("gallery.png");
    grid_image(&[inputs, policy_row, cam_row], h, w)
        .save(&path)
        .map_err(|source| Error::Image { path: path.clone(), source })?;
    Ok(path)
}
