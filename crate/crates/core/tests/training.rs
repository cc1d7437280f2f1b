mod common;

use apga_core::objective::ema;
use apga_core::trainer::{
    apga_step, read_metrics, run, AdversarialActions, Augmentation, PolicyTarget, RewardGranularity, RunOptions,
    TrainState, FINAL_CKPT, LATEST_CKPT, METRICS_FILE,
};
use apga_core::data::SplitKind;
use apga_core::nn::Parameterized;
use common::{tiny_config, tiny_data};

#[test]
fn same_config_and_seed_give_identical_metrics() {
    let data = tiny_data(0);
    let cfg = tiny_config(6);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run::<f32>(&cfg, &data, a.path(), &RunOptions::default()).unwrap();
    run::<f32>(&cfg, &data, b.path(), &RunOptions::default()).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        std::fs::read(a.path().join(FINAL_CKPT)).unwrap(),
        std::fs::read(b.path().join(FINAL_CKPT)).unwrap()
    );
}

#[test]
fn different_seeds_diverge() {
    let data = tiny_data(0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run::<f32>(&tiny_config(3), &data, a.path(), &RunOptions::default()).unwrap();
    let cfg = apga_core::trainer::TrainConfig { seed: 1, ..tiny_config(3) };
    let rb = run::<f32>(&cfg, &data, b.path(), &RunOptions::default()).unwrap();
    assert_ne!(ra.metrics, rb.metrics);
}

#[test]
fn interrupted_run_resumes_to_identical_result() {
    let data = tiny_data(3);
    let cfg = tiny_config(9);
    let full = tempfile::tempdir().unwrap();
    let straight = run::<f32>(&cfg, &data, full.path(), &RunOptions::default()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = run::<f32>(
        &cfg,
        &data,
        split.path(),
        &RunOptions {
            stop_after: Some(5),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!first.completed);
    assert!(!split.path().join(FINAL_CKPT).exists());
    assert!(split.path().join(LATEST_CKPT).exists());
    let resumed = run::<f32>(
        &cfg,
        &data,
        split.path(),
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(resumed.completed);
    assert_eq!(resumed.metrics, straight.metrics);
    assert_eq!(
        std::fs::read(split.path().join(METRICS_FILE)).unwrap(),
        std::fs::read(full.path().join(METRICS_FILE)).unwrap()
    );
    assert_eq!(resumed.state.classifier.param_hash(), straight.state.classifier.param_hash());
    assert_eq!(resumed.state.policy.param_hash(), straight.state.policy.param_hash());
}

#[test]
fn resume_from_a_periodic_checkpoint_discards_later_rows() {
    let data = tiny_data(3);
    let cfg = tiny_config(8);
    let full = tempfile::tempdir().unwrap();
    let straight = run::<f64>(&cfg, &data, full.path(), &RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let latest = dir.path().join(LATEST_CKPT);
    let stop = |k| RunOptions { resume: true, stop_after: Some(k), ..Default::default() };
    run::<f64>(&cfg, &data, dir.path(), &stop(4)).unwrap();
    let at_four = std::fs::read(&latest).unwrap();
    run::<f64>(&cfg, &data, dir.path(), &stop(6)).unwrap();
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), 6);
    // A crash after step 6 but before its checkpoint landed leaves the step-4 checkpoint.
    std::fs::write(&latest, at_four).unwrap();
    let resumed = run::<f64>(&cfg, &data, dir.path(), &RunOptions { resume: true, ..Default::default() }).unwrap();
    assert_eq!(resumed.metrics, straight.metrics);
}

#[test]
fn every_step_has_two_classifier_updates_and_one_policy_update() {
    let data = tiny_data(1);
    let cfg = tiny_config(1);
    let mut state = TrainState::<f64>::new(&cfg).unwrap();
    for t in 0..5 {
        let idx: Vec<usize> = (t * 4..t * 4 + 8).collect();
        let batch = data.batch::<f64>(SplitKind::Train, &idx).unwrap();
        let r = apga_step(&mut state, &batch, &cfg).unwrap();
        assert_eq!((r.audit.classifier_updates, r.audit.policy_updates), (2, 1));
        assert!(r.audit.policy_untouched_by_classifier);
        assert!(r.audit.classifier_untouched_by_policy);
    }
    assert_eq!(state.classifier_updates, 10);
    assert_eq!(state.policy_updates, 5);
}

#[test]
fn logged_baseline_replays_from_logged_rewards() {
    let data = tiny_data(2);
    let cfg = tiny_config(10);
    let dir = tempfile::tempdir().unwrap();
    run::<f32>(&cfg, &data, dir.path(), &RunOptions::default()).unwrap();
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 10);
    let mut b: Option<f64> = None;
    for row in rows {
        let r = row.reward.unwrap();
        let expected = b.map_or(r, |prev| ema(prev, r, cfg.baseline_decay));
        assert_eq!(row.baseline.unwrap(), expected, "step {}", row.step);
        b = Some(expected);
    }
}

#[test]
fn comparison_modes_log_no_reward() {
    let data = tiny_data(2);
    for aug in [Augmentation::None, Augmentation::Cutout, Augmentation::Gradcam] {
        let cfg = apga_core::trainer::TrainConfig { augmentation: aug, ..tiny_config(3) };
        let dir = tempfile::tempdir().unwrap();
        let out = run::<f32>(&cfg, &data, dir.path(), &RunOptions::default()).unwrap();
        assert!(out.metrics.iter().all(|m| m.reward.is_none() && m.baseline.is_none()), "{aug}");
        assert_eq!(out.state.policy_updates, 0);
        let per_step = if aug == Augmentation::None { 1 } else { 2 };
        assert_eq!(out.state.classifier_updates, 3 + 3 * per_step, "{aug}");
    }
}

#[test]
fn loss_variants_train_and_stay_deterministic() {
    let data = tiny_data(4);
    for (target, gran, actions) in [
        (PolicyTarget::EraseMask, RewardGranularity::Batch, AdversarialActions::Threshold),
        (PolicyTarget::KeepMask, RewardGranularity::Sample, AdversarialActions::Threshold),
        (PolicyTarget::EraseMask, RewardGranularity::Sample, AdversarialActions::Sample),
    ] {
        let cfg = apga_core::trainer::TrainConfig {
            policy_target: target,
            reward_granularity: gran,
            adversarial_actions: actions,
            ..tiny_config(4)
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run::<f32>(&cfg, &data, a.path(), &RunOptions::default()).unwrap();
        let rb = run::<f32>(&cfg, &data, b.path(), &RunOptions::default()).unwrap();
        assert_eq!(ra.metrics, rb.metrics);
        assert_eq!(ra.state.policy_updates, 4);
    }
}

#[test]
fn f32_checkpoint_loads_in_f64_with_same_predictions() {
    let data = tiny_data(0);
    let cfg = tiny_config(2);
    let dir = tempfile::tempdir().unwrap();
    let out = run::<f32>(&cfg, &data, dir.path(), &RunOptions::default()).unwrap();
    let wide = TrainState::<f64>::load(&cfg, &dir.path().join(FINAL_CKPT)).unwrap();
    assert_eq!(wide.step, 2);
    let batch = data.full_batch::<f32>(SplitKind::Val).unwrap();
    let narrow_logits = out.state.classifier.forward(&batch).unwrap();
    let wide_logits = wide.classifier.forward(&batch.cast::<f64>()).unwrap();
    for (a, b) in narrow_logits.data().iter().zip(wide_logits.data()) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }
}
