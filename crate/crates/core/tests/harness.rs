mod common;

use apga_core::data::{SplitKind, SyntheticSpec};
use apga_core::harness::{
    line_chart_svg, mean_std, run_experiment, summarize, write_charts, DatasetSource, ExperimentConfig,
    ExperimentOptions, Series, Summary, SUMMARY_FILE,
};
use apga_core::trainer::{read_metrics, write_metrics, Augmentation, StepMetrics, METRICS_FILE};
use proptest::prelude::*;

fn tiny_experiment(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            height: 16,
            width: 16,
            train: 24,
            val: 8,
            test: 4,
            roi_radius: (3, 5),
            distractor_side: (2, 4),
            ..Default::default()
        }),
        train: common::tiny_config(3),
        out_dir: out.to_path_buf(),
        seeds: vec![0, 1, 2],
        augmentations: vec![Augmentation::Apga, Augmentation::None, Augmentation::Gradcam],
        ..Default::default()
    }
}

#[test]
fn summary_recomputed_from_run_logs_matches_written_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    let summary = run_experiment(&cfg, &ExperimentOptions { resume: false, threads: Some(2) }).unwrap();
    let written: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(written, summary);
    assert_eq!(summarize(&cfg).unwrap(), summary);

    assert_eq!(summary.runs.len(), 9);
    for mode in &summary.by_augmentation {
        let accs: Vec<f64> = (0..3)
            .map(|s| {
                let rows = read_metrics(&cfg.run_dir(mode.augmentation, s).join(METRICS_FILE)).unwrap();
                rows.last().unwrap().val_accuracy.unwrap()
            })
            .collect();
        let (m, sd) = mean_std(&accs);
        assert_eq!(mode.mean_val_accuracy, m);
        assert_eq!(mode.std_val_accuracy, sd);
        assert_eq!(mode.mean_mask_iou.is_some(), mode.augmentation != Augmentation::None);
    }
}

#[test]
fn run_directory_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.seeds = vec![5];
    cfg.augmentations = vec![Augmentation::Apga];
    run_experiment(&cfg, &ExperimentOptions::default()).unwrap();
    let run_dir = cfg.run_dir(Augmentation::Apga, 5);
    let first = std::fs::read(run_dir.join(METRICS_FILE)).unwrap();

    let mut again = ExperimentConfig::load(&run_dir.join("config.json")).unwrap();
    let other = tempfile::tempdir().unwrap();
    again.out_dir = other.path().to_path_buf();
    run_experiment(&again, &ExperimentOptions::default()).unwrap();
    assert_eq!(std::fs::read(again.run_dir(Augmentation::Apga, 5).join(METRICS_FILE)).unwrap(), first);
}

#[test]
fn charts_are_byte_identical_on_rerun_and_single_rows_render() {
    let dir = tempfile::tempdir().unwrap();
    let row = StepMetrics {
        step: 1,
        l_original: 0.7,
        l_adversarial: Some(0.9),
        reward: Some(0.2),
        baseline: Some(0.2),
        mean_policy_prob: Some(0.5),
        aid_keep_fraction: Some(0.4),
        val_accuracy: Some(0.5),
    };
    write_metrics(&dir.path().join(METRICS_FILE), &[row]).unwrap();
    let files = write_charts(dir.path()).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert!(String::from_utf8_lossy(&first[0]).contains("<circle"));
    let again: Vec<Vec<u8>> = write_charts(dir.path()).unwrap().iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(first, again);
}

#[test]
fn empty_metrics_cannot_be_plotted() {
    let dir = tempfile::tempdir().unwrap();
    write_metrics(&dir.path().join(METRICS_FILE), &[]).unwrap();
    assert!(write_charts(dir.path()).is_err());
}

#[test]
fn chart_without_points_is_still_valid_svg() {
    let svg = line_chart_svg("empty", "step", &[Series { name: "none", points: vec![] }]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn untrained_policy_masks_are_no_better_than_chance() {
    let data = common::tiny_data(8);
    let policy = apga_core::nn::PolicyModel::<f64>::new(Default::default(), 3).unwrap();
    let q = apga_core::harness::policy_mask_quality(&policy, &data, SplitKind::Val).unwrap();
    // Eight samples: only gross departures from the area-matched expectation are meaningful.
    assert!((q.mean_iou - q.mean_random_iou).abs() < 0.15, "{q:?}");
}

proptest! {
    #[test]
    fn experiment_config_round_trips(
        seeds in prop::collection::vec(0u64..1000, 1..5),
        lr in 1e-6f64..1e-1,
        lambda in 0.0f64..5.0,
        steps in 1usize..10_000,
        masks: bool,
        folder: bool,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = seeds;
        cfg.train.lr_policy = lr;
        cfg.train.lambda_zeros = lambda;
        cfg.train.steps = steps;
        cfg.export.masks = masks;
        if folder {
            cfg.dataset = DatasetSource::Folder { path: "data/xray".into(), height: 64, width: 48 };
        }
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
