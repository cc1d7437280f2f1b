use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::plot::{write_charts, write_gallery};
use super::quality::{gradcam_mask_quality, policy_mask_quality, MaskQualityReport};
use crate::baselines::gradcam_mask;
use crate::data::{Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::masking::{aiding_mask, write_mask_png};
use crate::tensor::Precision;
use crate::trainer::{
    evaluate, load_classifier, load_policy, read_metrics, run, Augmentation, RunOptions, FINAL_CKPT, LATEST_CKPT,
    METRICS_FILE, PRETRAINED_CKPT,
};

pub const RUN_CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MASK_QUALITY_FILE: &str = "mask_quality.json";

/// Worker count: `APGA_THREADS` if set to a positive integer, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("APGA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub augmentation: Augmentation,
    pub seed: u64,
    pub steps: usize,
    /// Last validation accuracy in the run's metrics log.
    pub final_val_accuracy: Option<f64>,
    pub mask_iou: Option<f64>,
    pub random_mask_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub augmentation: Augmentation,
    pub runs: usize,
    pub mean_val_accuracy: f64,
    pub std_val_accuracy: f64,
    pub mean_mask_iou: Option<f64>,
    pub mean_random_mask_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub runs: Vec<RunSummary>,
    pub by_augmentation: Vec<ModeSummary>,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::from("augmentation  runs  val accuracy (mean ± std)  mask IoU (random)\n");
        for m in &self.by_augmentation {
            let iou = match (m.mean_mask_iou, m.mean_random_mask_iou) {
                (Some(a), Some(b)) => format!("{a:.4} ({b:.4})"),
                _ => "-".into(),
            };
            s.push_str(&format!(
                "{:<12}  {:>4}  {:.4} ± {:.4}            {iou}\n",
                m.augmentation.name(),
                m.runs,
                m.mean_val_accuracy,
                m.std_val_accuracy
            ));
        }
        s
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rebuilds the summary from the per-run metrics logs (and mask-quality files when present).
pub fn summarize(config: &ExperimentConfig) -> Result<Summary> {
    let mut runs = Vec::new();
    let mut by_augmentation = Vec::new();
    for &aug in &config.augmentations {
        let mut accs = Vec::new();
        let (mut ious, mut randoms) = (Vec::new(), Vec::new());
        for &seed in &config.seeds {
            let dir = config.run_dir(aug, seed);
            let rows = read_metrics(&dir.join(METRICS_FILE))?;
            let final_val_accuracy = rows.iter().rev().find_map(|r| r.val_accuracy);
            let quality_path = dir.join(MASK_QUALITY_FILE);
            let quality: Option<MaskQualityReport> =
                if quality_path.exists() { Some(read_json(&quality_path)?) } else { None };
            accs.extend(final_val_accuracy);
            if let Some(q) = &quality {
                ious.push(q.mean_iou);
                randoms.push(q.mean_random_iou);
            }
            runs.push(RunSummary {
                augmentation: aug,
                seed,
                steps: rows.len(),
                final_val_accuracy,
                mask_iou: quality.as_ref().map(|q| q.mean_iou),
                random_mask_iou: quality.as_ref().map(|q| q.mean_random_iou),
            });
        }
        let (mean, std) = mean_std(&accs);
        let avg = |v: &[f64]| (!v.is_empty()).then(|| mean_std(v).0);
        by_augmentation.push(ModeSummary {
            augmentation: aug,
            runs: config.seeds.len(),
            mean_val_accuracy: mean,
            std_val_accuracy: std,
            mean_mask_iou: avg(&ious),
            mean_random_mask_iou: avg(&randoms),
        });
    }
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        runs,
        by_augmentation,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    pub resume: bool,
    /// Worker threads; `None` means [`worker_threads`].
    pub threads: Option<usize>,
}

/// Runs every `(augmentation, seed)` pair, then writes `summary.json` in the output directory.
pub fn run_experiment(config: &ExperimentConfig, options: &ExperimentOptions) -> Result<Summary> {
    config.validate()?;
    let data = config.dataset.load()?;
    let jobs: Vec<(Augmentation, u64)> = config
        .augmentations
        .iter()
        .flat_map(|&a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let threads = options.threads.unwrap_or_else(worker_threads).clamp(1, jobs.len());
    let queue = Mutex::new(jobs.into_iter());
    let errors = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((aug, seed)) = next else { break };
                if let Err(e) = run_one(&config.for_run(aug, seed), &data, options.resume) {
                    log::error!("{aug} seed {seed} failed: {e}");
                    errors.lock().expect("error lock").push(e);
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().expect("error lock").into_iter().next() {
        return Err(e);
    }
    let summary = summarize(config)?;
    write_json(&config.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Trains one run described by a single-run config and writes its artifacts.
pub fn run_one(config: &ExperimentConfig, data: &Dataset, resume: bool) -> Result<()> {
    let aug = config.train.augmentation;
    let dir = config.run_dir(aug, config.train.seed);
    config.save(&dir.join(RUN_CONFIG_FILE))?;
    let options = RunOptions {
        resume,
        stop_after: None,
        saliency_reference: config.saliency_reference.clone(),
    };
    match config.train.precision {
        Precision::F32 => finish_run(config, data, &dir, run::<f32>(&config.train, data, &dir, &options)?.seconds),
        Precision::F64 => finish_run(config, data, &dir, run::<f64>(&config.train, data, &dir, &options)?.seconds),
    }
}

fn finish_run(config: &ExperimentConfig, data: &Dataset, dir: &Path, seconds: f64) -> Result<()> {
    log::info!("{} finished in {seconds:.1}s", dir.display());
    if data.has_roi() {
        if let Some(q) = run_mask_quality(dir, data, SplitKind::Val)? {
            write_json(&dir.join(MASK_QUALITY_FILE), &q)?;
        }
    }
    if config.export.masks {
        export_masks(dir, data, 16)?;
    }
    if config.export.plots {
        write_charts(dir)?;
        write_gallery(dir, data, 8)?;
    }
    Ok(())
}

fn load_run_config(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&dir.join(RUN_CONFIG_FILE))
}

/// Final checkpoint if the run finished, else the latest one.
pub fn run_checkpoint(dir: &Path) -> Result<PathBuf> {
    [FINAL_CKPT, LATEST_CKPT]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| Error::MissingFile(dir.join(FINAL_CKPT)))
}

fn saliency_checkpoint(config: &ExperimentConfig, dir: &Path) -> PathBuf {
    config.saliency_reference.clone().unwrap_or_else(|| dir.join(PRETRAINED_CKPT))
}

/// Mask quality of the run's masks: aiding masks for policy runs, activation-map masks for
/// activation-map runs. Other modes have no learned mask.
pub fn run_mask_quality(dir: &Path, data: &Dataset, split: SplitKind) -> Result<Option<MaskQualityReport>> {
    let config = load_run_config(dir)?;
    match config.train.augmentation {
        Augmentation::Apga => {
            let policy = load_policy::<f64>(&config.train, &run_checkpoint(dir)?)?;
            Ok(Some(policy_mask_quality(&policy, data, split)?))
        }
        Augmentation::Gradcam => {
            let clf = load_classifier::<f64>(&config.train, &saliency_checkpoint(&config, dir))?;
            Ok(Some(gradcam_mask_quality(&clf, data, split)?))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_dir: PathBuf,
    pub split: String,
    pub samples: usize,
    pub accuracy: f64,
}

/// Accuracy of the run's classifier checkpoint on `split` of the run's own dataset.
pub fn evaluate_run(dir: &Path, split: SplitKind) -> Result<EvalReport> {
    let config = load_run_config(dir)?;
    let data = config.dataset.load()?;
    let clf = load_classifier::<f64>(&config.train, &run_checkpoint(dir)?)?;
    Ok(EvalReport {
        run_dir: dir.to_path_buf(),
        split: split.name().into(),
        samples: data.split(split).len(),
        accuracy: evaluate(&clf, &data, split)?,
    })
}

/// Writes up to `limit` validation masks of the run as `masks/val_XXXX.png`.
pub fn export_masks(dir: &Path, data: &Dataset, limit: usize) -> Result<()> {
    let config = load_run_config(dir)?;
    let n = data.split(SplitKind::Val).len().min(limit);
    if n == 0 {
        return Ok(());
    }
    let idx: Vec<usize> = (0..n).collect();
    let batch = data.batch::<f64>(SplitKind::Val, &idx)?;
    let mask = match config.train.augmentation {
        Augmentation::Apga => aiding_mask(&load_policy::<f64>(&config.train, &run_checkpoint(dir)?)?.forward(&batch)?),
        Augmentation::Gradcam => gradcam_mask(
            &load_classifier::<f64>(&config.train, &saliency_checkpoint(&config, dir))?,
            &batch,
        )?,
        _ => return Ok(()),
    };
    let out = dir.join("masks");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for i in 0..n {
        write_mask_png(&mask, i, &out.join(format!("val_{i:04}.png")))?;
    }
    Ok(())
}
