//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if
//! any fails. Set `APGA_ACCEPTANCE_DIR` to keep the benchmark run directories.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apga_core::baselines::{cutout_mask, CutoutConfig};
use apga_core::data::{Dataset, SplitKind};
use apga_core::harness::{gradcam_mask_quality, run_one, summarize, ExperimentConfig, Summary};
use apga_core::nn::Parameterized;
use apga_core::objective::ema;
use apga_core::trainer::{
    apga_step, load_classifier, read_metrics, run, Augmentation, RunOptions, TrainConfig, TrainState, FINAL_CKPT,
    METRICS_FILE,
};
use apga_core::verify::{estimator_suite, gradient_suite, random_batch, EstimatorSuite};
use apga_core::Result;

const RUN_LIMIT_SECONDS: f64 = 600.0;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        passed,
        detail: detail.into(),
    })
}

fn estimator() -> Result<Verdict> {
    let report = estimator_suite(EstimatorSuite::default())?;
    let worst = report.checks.iter().map(|c| c.value).fold(0.0, f64::max);
    verdict(
        report.passed() && report.checks.len() == 20 && report.seconds < 60.0,
        format!(
            "20 instances, n=6, 1e5 samples: worst relative L2 {worst:.4} (< 0.05), {:.1}s (< 60s)",
            report.seconds
        ),
    )
}

fn gradients() -> Result<Verdict> {
    let report = gradient_suite(0)?;
    let parts: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{} {:.2e} (< {:.0e})", c.name, c.value, c.threshold))
        .collect();
    verdict(
        report.passed() && report.seconds < 60.0,
        format!("{}; {:.1}s (< 60s)", parts.join(", "), report.seconds),
    )
}

fn reward_identity() -> Result<Verdict> {
    let mut cfg = ExperimentConfig::reference().train;
    cfg.batch_size = 8;
    let mut state = TrainState::<f32>::new(&cfg)?;
    *state.policy.output_bias_mut() = -40.0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut nonzero = 0;
    for k in 0..1000u64 {
        let b = rng.random_range(1..=8);
        let batch = random_batch(b, 16, 16, 2, k)?.cast::<f32>();
        let r = apga_step(&mut state, &batch, &cfg)?;
        if r.metrics.reward != Some(0.0) || r.metrics.aid_keep_fraction != Some(0.0) {
            nonzero += 1;
        }
    }
    verdict(
        nonzero == 0,
        format!("{nonzero} of 1000 random batches with an all-ones adversarial mask gave R != 0"),
    )
}

struct Benchmark {
    config: ExperimentConfig,
    data: Dataset,
    summary: Summary,
    seconds: Vec<(Augmentation, u64, f64)>,
}

fn benchmark(root: &Path) -> Result<Benchmark> {
    let mut config = ExperimentConfig::reference();
    config.out_dir = root.join("benchmark");
    let data = config.dataset.load()?;
    let mut seconds = Vec::new();
    for &aug in &config.augmentations {
        for &seed in &config.seeds {
            let t = Instant::now();
            run_one(&config.for_run(aug, seed), &data, false)?;
            seconds.push((aug, seed, t.elapsed().as_secs_f64()));
        }
    }
    let summary = summarize(&config)?;
    Ok(Benchmark {
        config,
        data,
        summary,
        seconds,
    })
}

fn ema_replay(bench: &Benchmark) -> Result<Verdict> {
    let decay = bench.config.train.baseline_decay;
    let mut rows_checked = 0;
    let mut mismatches = 0;
    for &seed in &bench.config.seeds {
        let rows = read_metrics(&bench.config.run_dir(Augmentation::Apga, seed).join(METRICS_FILE))?;
        let mut b: Option<f64> = None;
        for row in rows {
            let (Some(r), Some(logged)) = (row.reward, row.baseline) else {
                mismatches += 1;
                continue;
            };
            let replayed = b.map_or(r, |prev| ema(prev, r, decay));
            if replayed != logged {
                mismatches += 1;
            }
            b = Some(replayed);
            rows_checked += 1;
        }
    }
    verdict(
        mismatches == 0 && rows_checked > 0,
        format!("{rows_checked} logged steps replayed with decay {decay}: {mismatches} mismatches"),
    )
}

fn mean_prob_after(config: &TrainConfig, data: &Dataset, dir: &Path) -> Result<f64> {
    let out = run::<f32>(config, data, dir, &RunOptions::default())?;
    out.metrics
        .last()
        .and_then(|m| m.mean_policy_prob)
        .ok_or_else(|| apga_core::Error::InvalidArgument("run logged no policy probability".into()))
}

fn regularizer(root: &Path) -> Result<Verdict> {
    let reference = ExperimentConfig::reference();
    let data = reference.dataset.load()?;
    let base = TrainConfig {
        steps: 500,
        eval_interval: 500,
        checkpoint_interval: 500,
        ..reference.train
    };
    let heavy = mean_prob_after(
        &TrainConfig {
            lambda_zeros: 10.0,
            ..base.clone()
        },
        &data,
        &root.join("lambda10"),
    )?;
    let free = mean_prob_after(
        &TrainConfig {
            lambda_zeros: 0.0,
            ..base
        },
        &data,
        &root.join("lambda0"),
    )?;
    verdict(
        heavy < 0.1 && free >= 0.1,
        format!("mean policy probability after 500 steps: {heavy:.4} with penalty 10 (< 0.1), {free:.4} without (>= 0.1)"),
    )
}

fn end_to_end(bench: &Benchmark) -> Result<Verdict> {
    let mode = |aug| bench.summary.by_augmentation.iter().find(|m| m.augmentation == aug);
    let (Some(apga), Some(none)) = (mode(Augmentation::Apga), mode(Augmentation::None)) else {
        return verdict(false, "benchmark lacks apga or none runs");
    };
    let iou = apga.mean_mask_iou.unwrap_or(0.0);
    let random = apga.mean_random_mask_iou.unwrap_or(f64::INFINITY);
    let slowest = bench.seconds.iter().map(|s| s.2).fold(0.0, f64::max);
    let accuracy_ok = apga.mean_val_accuracy >= none.mean_val_accuracy - 0.01;
    let iou_ok = iou >= 0.3 && iou >= 2.0 * random;
    verdict(
        accuracy_ok && iou_ok && slowest <= RUN_LIMIT_SECONDS && apga.runs == 5 && none.runs == 5,
        format!(
            "seeds {:?}: accuracy apga {:.4} vs none {:.4} (>= none - 0.01); mask IoU {iou:.4} vs random {random:.4} \
             (>= 0.3 and >= 2x); slowest run {slowest:.0}s (<= {RUN_LIMIT_SECONDS:.0}s)",
            bench.config.seeds, apga.mean_val_accuracy, none.mean_val_accuracy
        ),
    )
}

fn cadence(bench: &Benchmark) -> Result<Verdict> {
    let train = &bench.config.train;
    let mut state = TrainState::<f32>::new(train)?;
    let batches = bench.data.batches::<f32>(SplitKind::Train, train.batch_size, train.seed, 0)?;
    let mut bad_steps = 0;
    for batch in batches.iter().take(25) {
        let r = apga_step(&mut state, batch, train)?;
        let a = r.audit;
        if a.classifier_updates != 2
            || a.policy_updates != 1
            || !a.policy_untouched_by_classifier
            || !a.classifier_untouched_by_policy
        {
            bad_steps += 1;
        }
    }
    let pretrain_updates = (train.pretrain_epochs * train.batches_per_epoch(bench.data.split(SplitKind::Train).len())) as u64;
    let mut bad_runs = 0;
    for &seed in &bench.config.seeds {
        let cfg = bench.config.for_run(Augmentation::Apga, seed).train;
        let s = TrainState::<f32>::load(&cfg, &bench.config.run_dir(Augmentation::Apga, seed).join(FINAL_CKPT))?;
        let steps = s.step as u64;
        if s.classifier_updates != pretrain_updates + 2 * steps || s.policy_updates != steps {
            bad_runs += 1;
        }
    }
    verdict(
        bad_steps == 0 && bad_runs == 0,
        format!(
            "25 instrumented steps with a deviating update count or parameter hash: {bad_steps}; \
             benchmark runs with update counters != (pretrain + 2/step, 1/step): {bad_runs}"
        ),
    )
}

fn determinism(root: &Path) -> Result<Verdict> {
    let reference = ExperimentConfig::reference();
    let data = reference.dataset.load()?;
    let cfg = TrainConfig {
        steps: 30,
        pretrain_epochs: 1,
        eval_interval: 10,
        checkpoint_interval: 10,
        ..reference.train
    };
    let dirs: Vec<PathBuf> = ["a", "b", "resumed"].iter().map(|d| root.join("determinism").join(d)).collect();
    run::<f32>(&cfg, &data, &dirs[0], &RunOptions::default())?;
    run::<f32>(&cfg, &data, &dirs[1], &RunOptions::default())?;
    let interrupted = run::<f32>(
        &cfg,
        &data,
        &dirs[2],
        &RunOptions {
            stop_after: Some(17),
            ..Default::default()
        },
    )?;
    let resumed = run::<f32>(
        &cfg,
        &data,
        &dirs[2],
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    )?;
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).map_err(|e| apga_core::Error::io(d.join(f), e));
    let same_twice = read(&dirs[0], METRICS_FILE)? == read(&dirs[1], METRICS_FILE)?;
    let same_resumed = read(&dirs[0], METRICS_FILE)? == read(&dirs[2], METRICS_FILE)?
        && read(&dirs[0], FINAL_CKPT)? == read(&dirs[2], FINAL_CKPT)?;
    let straight = TrainState::<f32>::load(&cfg, &dirs[0].join(FINAL_CKPT))?;
    verdict(
        same_twice && same_resumed && !interrupted.completed && resumed.state.policy.param_hash() == straight.policy.param_hash(),
        format!(
            "30-step runs: repeat identical {same_twice}; interrupted at step 17 then resumed identical {same_resumed}"
        ),
    )
}

fn baseline_augmenters(bench: &Benchmark) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut area_mismatch = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let b = rng.random_range(1..=4);
        let lo = rng.random_range(0.01..0.9);
        let cfg = CutoutConfig {
            min_fraction: lo,
            max_fraction: rng.random_range(lo..=1.0),
            patches: 1,
        };
        let (mask, rects) = cutout_mask([b, 1, h, w], &cfg, &mut rng)?;
        for (i, r) in rects.iter().enumerate() {
            let zeros = mask.keep()[i * h * w..(i + 1) * h * w].iter().filter(|&&k| k == 0).count();
            if zeros != r[0].area() {
                area_mismatch += 1;
            }
        }
    }
    let mut cam_iou = Vec::new();
    let mut cam_random = Vec::new();
    for &seed in &bench.config.seeds {
        let cfg = bench.config.for_run(Augmentation::None, seed).train;
        let clf = load_classifier::<f64>(&cfg, &bench.config.run_dir(Augmentation::None, seed).join(FINAL_CKPT))?;
        let q = gradcam_mask_quality(&clf, &bench.data, SplitKind::Val)?;
        cam_iou.push(q.mean_iou);
        cam_random.push(q.mean_random_iou);
    }
    let beats = cam_iou.iter().zip(&cam_random).all(|(a, r)| a > r);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    verdict(
        area_mismatch == 0 && beats,
        format!(
            "cutout area mismatches in 1000 draws: {area_mismatch}; activation-map IoU {:.4} vs area-matched random {:.4} \
             (every seed higher: {beats})",
            mean(&cam_iou),
            mean(&cam_random)
        ),
    )
}

fn report(name: &str, started: Instant, outcome: Result<Verdict>, failures: &mut usize) {
    let (passed, detail) = match outcome {
        Ok(v) => (v.passed, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if !passed {
        *failures += 1;
    }
    println!(
        "{} {name}: {detail} [{:.1}s]",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
}

fn main() {
    let keep = std::env::var_os("APGA_ACCEPTANCE_DIR").map(PathBuf::from);
    let temp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| temp.path().to_path_buf());
    let mut failures = 0;

    let t = Instant::now();
    report("estimator correctness", t, estimator(), &mut failures);
    let t = Instant::now();
    report("gradient checks", t, gradients(), &mut failures);
    let t = Instant::now();
    report("reward identity", t, reward_identity(), &mut failures);

    let t = Instant::now();
    let bench = benchmark(&root);
    let bench_seconds = t.elapsed();
    let with_bench = |f: &dyn Fn(&Benchmark) -> Result<Verdict>| match &bench {
        Ok(b) => f(b),
        Err(e) => Err(apga_core::Error::InvalidArgument(format!("benchmark failed: {e}"))),
    };

    let t = Instant::now();
    report("moving-average baseline replay", t, with_bench(&ema_replay), &mut failures);
    let t = Instant::now();
    report("all-zeros penalty", t, regularizer(&root), &mut failures);
    let t = Instant::now() - bench_seconds;
    report("end-to-end synthetic benchmark", t, with_bench(&end_to_end), &mut failures);
    let t = Instant::now();
    report("update cadence", t, with_bench(&cadence), &mut failures);
    let t = Instant::now();
    report("determinism and resume", t, determinism(&root), &mut failures);
    let t = Instant::now();
    report("baseline augmenters", t, with_bench(&baseline_augmenters), &mut failures);

    println!("{failures} of 9 criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
