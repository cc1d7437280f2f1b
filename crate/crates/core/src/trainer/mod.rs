//! Classifier pretraining and the joint classifier/policy loop, plus the comparison modes that
//! replace the policy with no augmentation, cutout, or activation-map masks.

mod config;
mod metrics;
mod state;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AdversarialActions, Augmentation, PolicyTarget, RewardGranularity, TrainConfig};
pub use metrics::{read_metrics, write_metrics, MetricsWriter, StepMetrics, METRICS_HEADER};
pub use state::{load_classifier, load_policy, TrainState};

use crate::baselines::{cutout_mask, gradcam_mask};
use crate::batch::{ImageBatch, MaskBatch};
use crate::data::{batch_indices, Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::masking::{adversarial_mask, aiding_mask, apply_mask, sample_adversarial_mask};
use crate::nn::{ClassifierModel, Parameterized};
use crate::objective::{
    adversarial_reward, class_loss, class_loss_grad, class_loss_per_sample, policy_loss_grad, weighted_policy_loss_grad,
    PolicyLossTerms,
};
use crate::tensor::{Scalar, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PRETRAIN_FILE: &str = "pretrain.csv";
pub const PRETRAINED_CKPT: &str = "pretrained.ckpt";
pub const LATEST_CKPT: &str = "checkpoints/latest.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const DIAGNOSTIC_CKPT: &str = "diagnostic.ckpt";

/// Update counts and parameter-isolation checks for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepAudit {
    pub classifier_updates: u32,
    pub policy_updates: u32,
    /// Policy parameter hash unchanged across every classifier update.
    pub policy_untouched_by_classifier: bool,
    /// Classifier parameter hash unchanged across the policy update.
    pub classifier_untouched_by_policy: bool,
}

/// Full step output, including the policy-loss breakdown when the policy was updated with a
/// batch-level reward.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub metrics: StepMetrics,
    pub audit: StepAudit,
    pub policy_loss: Option<PolicyLossTerms>,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// One Adam step of the classifier on `batch`; returns the pre-update loss.
fn classifier_update<T: Scalar>(state: &mut TrainState<T>, batch: &ImageBatch<T>) -> Result<f64> {
    let logits = state.classifier.forward_recorded(batch)?;
    let (loss, g) = class_loss_grad(&logits, batch.labels())?;
    finite(loss, "classification loss")?;
    let grads = state.classifier.backward(&g)?;
    grads.check_finite()?;
    state.adam_classifier.step(&mut state.classifier, &grads)?;
    state.classifier_updates += 1;
    Ok(loss)
}

/// Plain cross-entropy training for `epochs` epochs; returns the mean loss of each epoch.
pub fn pretrain_classifier<T: Scalar>(
    state: &mut TrainState<T>,
    data: &Dataset,
    config: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    let n = data.split(SplitKind::Train).len();
    if n == 0 {
        return Err(Error::EmptyDataset("train split is empty".into()));
    }
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for idx in batch_indices(n, config.batch_size, config.seed, epoch as u64)? {
            let batch = data.batch::<T>(SplitKind::Train, &idx)?;
            sum += classifier_update(state, &batch)? * idx.len() as f64;
            count += idx.len();
        }
        losses.push(sum / count as f64);
        log::debug!("pretrain epoch {epoch}: loss {:.4}", sum / count as f64);
    }
    Ok(losses)
}

fn complement(mask: &MaskBatch) -> Result<MaskBatch> {
    MaskBatch::new(mask.shape(), mask.keep().iter().map(|&k| 1 - k).collect(), mask.mode())
}

/// One joint step: classifier update on the originals, reward from the adversarial mask,
/// policy update, then classifier update on the aiding-masked originals.
///
/// Both reward losses are evaluated with the same classifier parameters, so an adversarial
/// mask that erases nothing yields a reward of exactly zero.
pub fn apga_step<T: Scalar>(state: &mut TrainState<T>, batch: &ImageBatch<T>, config: &TrainConfig) -> Result<StepReport> {
    let labels = batch.labels();
    let policy_hash = state.policy.param_hash();
    classifier_update(state, batch)?;
    let mut policy_untouched = state.policy.param_hash() == policy_hash;

    let probs = state.policy.forward_recorded(batch)?;
    let mut rng = step_rng(config.seed, state.step + 1);
    let a_adv = match config.adversarial_actions {
        AdversarialActions::Threshold => adversarial_mask(&probs),
        AdversarialActions::Sample => sample_adversarial_mask(&probs, &mut rng),
    };
    let x_adv = apply_mask(batch, &a_adv)?;
    let logits_original = state.classifier.forward(batch)?;
    let logits_adversarial = state.classifier.forward(&x_adv)?;
    let l_original = finite(class_loss(&logits_original, labels)?, "L_original")?;
    let l_adversarial = finite(class_loss(&logits_adversarial, labels)?, "L_adversarial")?;
    let reward = adversarial_reward(l_adversarial, l_original);
    let baseline = state.baseline.update(reward);
    let subtract = if config.use_baseline { baseline } else { 0.0 };

    let target_of = |mask: MaskBatch| match config.policy_target {
        PolicyTarget::KeepMask => Ok(mask),
        PolicyTarget::EraseMask => complement(&mask),
    };
    let (terms, grad_p) = match config.reward_granularity {
        RewardGranularity::Batch => {
            let (terms, g) = policy_loss_grad(
                &probs,
                &target_of(a_adv)?,
                reward,
                config.use_baseline.then_some(baseline),
                config.lambda_zeros,
            )?;
            (Some(terms), g)
        }
        RewardGranularity::Sample if config.action_samples == 1 => {
            let orig = class_loss_per_sample(&logits_original, labels)?;
            let adv = class_loss_per_sample(&logits_adversarial, labels)?;
            let weights: Vec<f64> = adv.iter().zip(&orig).map(|(a, o)| a - o - subtract).collect();
            let (total, g) = weighted_policy_loss_grad(&probs, &target_of(a_adv)?, &weights, config.lambda_zeros)?;
            finite(total, "policy loss")?;
            (None, g)
        }
        RewardGranularity::Sample => {
            let orig = class_loss_per_sample(&logits_original, labels)?;
            let k = config.action_samples;
            let mut draws = vec![(a_adv, class_loss_per_sample(&logits_adversarial, labels)?)];
            for _ in 1..k {
                let mask = sample_adversarial_mask(&probs, &mut rng);
                let adv = class_loss_per_sample(&state.classifier.forward(&apply_mask(batch, &mask)?)?, labels)?;
                draws.push((mask, adv));
            }
            let sums: Vec<f64> = (0..orig.len()).map(|i| draws.iter().map(|d| d.1[i]).sum()).collect();
            let mut grad: Option<Tensor<T>> = None;
            for (mask, adv) in draws {
                let weights: Vec<f64> =
                    adv.iter().zip(&sums).map(|(a, s)| a - (s - a) / (k - 1) as f64).collect();
                let (total, g) = weighted_policy_loss_grad(&probs, &target_of(mask)?, &weights, config.lambda_zeros)?;
                finite(total, "policy loss")?;
                match grad.as_mut() {
                    None => grad = Some(g),
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
                }
            }
            let scale = T::of(1.0 / k as f64);
            (None, grad.expect("at least two draws").map(|x| x * scale))
        }
    };
    let classifier_hash = state.classifier.param_hash();
    let grads = state.policy.backward(&grad_p)?;
    grads.check_finite()?;
    state.adam_policy.step(&mut state.policy, &grads)?;
    state.policy_updates += 1;
    let classifier_untouched = state.classifier.param_hash() == classifier_hash;

    let a_aid = aiding_mask(&state.policy.forward(batch)?);
    let x_aid = apply_mask(batch, &a_aid)?;
    let policy_hash = state.policy.param_hash();
    classifier_update(state, &x_aid)?;
    policy_untouched &= state.policy.param_hash() == policy_hash;

    state.step += 1;
    Ok(StepReport {
        metrics: StepMetrics {
            step: state.step,
            l_original,
            l_adversarial: Some(l_adversarial),
            reward: Some(reward),
            baseline: Some(baseline),
            mean_policy_prob: Some(probs.mean()),
            aid_keep_fraction: Some(a_aid.kept_fraction()),
            val_accuracy: None,
        },
        audit: StepAudit {
            classifier_updates: 2,
            policy_updates: 1,
            policy_untouched_by_classifier: policy_untouched,
            classifier_untouched_by_policy: classifier_untouched,
        },
        policy_loss: terms,
    })
}

/// Randomness for step `step` of a run, independent of the data-order streams.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | step as u64);
    rng
}

/// One step of a comparison mode: classifier update on the originals, then (for cutout and
/// activation-map modes) a second update on the masked originals.
pub fn baseline_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &ImageBatch<T>,
    config: &TrainConfig,
    saliency_reference: Option<&ClassifierModel<T>>,
) -> Result<StepReport> {
    let policy_hash = state.policy.param_hash();
    let l_original = classifier_update(state, batch)?;
    let shape = crate::batch::shape4(batch.images().shape());
    let mask = match config.augmentation {
        Augmentation::None => None,
        Augmentation::Cutout => {
            let mut rng = step_rng(config.seed, state.step + 1);
            Some(cutout_mask(shape, &config.cutout, &mut rng)?.0)
        }
        Augmentation::Gradcam => {
            let reference = saliency_reference
                .ok_or_else(|| Error::Config("activation-map augmentation needs a reference classifier".into()))?;
            Some(gradcam_mask(reference, batch)?)
        }
        Augmentation::Apga => return Err(Error::InvalidArgument("baseline_step called in apga mode".into())),
    };
    if let Some(m) = &mask {
        classifier_update(state, &apply_mask(batch, m)?)?;
    }
    state.step += 1;
    let updates = 1 + u32::from(mask.is_some());
    Ok(StepReport {
        metrics: StepMetrics {
            step: state.step,
            l_original,
            aid_keep_fraction: mask.as_ref().map(MaskBatch::kept_fraction),
            ..Default::default()
        },
        audit: StepAudit {
            classifier_updates: updates,
            policy_updates: 0,
            policy_untouched_by_classifier: state.policy.param_hash() == policy_hash,
            classifier_untouched_by_policy: true,
        },
        policy_loss: None,
    })
}

/// Fraction of `split` classified correctly; ties go to the lower class index.
pub fn evaluate<T: Scalar>(classifier: &ClassifierModel<T>, data: &Dataset, split: SplitKind) -> Result<f64> {
    let n = data.split(split).len();
    if n == 0 {
        return Err(Error::EmptyDataset(format!("{} split is empty", split.name())));
    }
    let mut correct = 0;
    for start in (0..n).step_by(250) {
        let idx: Vec<usize> = (start..(start + 250).min(n)).collect();
        let batch = data.batch::<T>(split, &idx)?;
        let pred = classifier.predict(&batch)?;
        correct += pred.iter().zip(batch.labels()).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / n as f64)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `checkpoints/latest.ckpt` when present.
    pub resume: bool,
    /// Return after completing this step, as if interrupted.
    pub stop_after: Option<usize>,
    /// Classifier checkpoint for activation-map masks; defaults to this run's pretrained snapshot.
    pub saliency_reference: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub state: TrainState<T>,
    pub metrics: Vec<StepMetrics>,
    pub pretrain_losses: Vec<f64>,
    /// Whether all configured steps ran.
    pub completed: bool,
    pub seconds: f64,
}

fn write_pretrain_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_pretrain_log(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("{}: bad line '{l}'", path.display())))
        })
        .collect()
}

/// Pretrains, then runs `config.steps` steps, writing the metrics log and checkpoints under
/// `out_dir`.
pub fn run<T: Scalar>(config: &TrainConfig, data: &Dataset, out_dir: &Path, options: &RunOptions) -> Result<RunOutcome<T>> {
    config.validate()?;
    let started = Instant::now();
    let n = data.split(SplitKind::Train).len();
    if n == 0 {
        return Err(Error::EmptyDataset("train split is empty".into()));
    }
    if config.classifier.classes < data.classes() {
        return Err(Error::Config(format!(
            "classifier has {} outputs but the dataset has {} classes",
            config.classifier.classes,
            data.classes()
        )));
    }
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let latest = out_dir.join(LATEST_CKPT);

    let (mut state, mut rows, pretrain_losses) = if options.resume && latest.exists() {
        let state = TrainState::<T>::load(config, &latest)?;
        let rows: Vec<StepMetrics> = if metrics_path.exists() {
            read_metrics(&metrics_path)?.into_iter().filter(|r| r.step <= state.step).collect()
        } else {
            Vec::new()
        };
        if rows.len() != state.step {
            return Err(Error::Checkpoint(format!(
                "{} holds {} rows but the checkpoint is at step {}",
                metrics_path.display(),
                rows.len(),
                state.step
            )));
        }
        let losses = read_pretrain_log(&out_dir.join(PRETRAIN_FILE)).unwrap_or_default();
        log::info!("resuming {} at step {}", out_dir.display(), state.step);
        (state, rows, losses)
    } else {
        let mut state = TrainState::<T>::new(config)?;
        let losses = pretrain_classifier(&mut state, data, config, config.pretrain_epochs)?;
        state.pretrained = true;
        write_pretrain_log(&out_dir.join(PRETRAIN_FILE), &losses)?;
        state.save(&out_dir.join(PRETRAINED_CKPT))?;
        state.save(&latest)?;
        (state, Vec::new(), losses)
    };

    let reference = match config.augmentation {
        Augmentation::Gradcam => {
            let path = options.saliency_reference.clone().unwrap_or_else(|| out_dir.join(PRETRAINED_CKPT));
            Some(load_classifier::<T>(config, &path)?)
        }
        _ => None,
    };

    let mut writer = MetricsWriter::create(&metrics_path, &rows)?;
    let bpe = config.batches_per_epoch(n);
    let mut epoch_cache: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.step < config.steps {
        if options.stop_after.is_some_and(|k| state.step >= k) {
            break;
        }
        let t = state.step;
        let epoch = (config.pretrain_epochs + t / bpe) as u64;
        if epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            epoch_cache = Some((epoch, batch_indices(n, config.batch_size, config.seed, epoch)?));
        }
        let idx = &epoch_cache.as_ref().expect("filled above").1[t % bpe];
        let batch = data.batch::<T>(SplitKind::Train, idx)?;
        let result = match config.augmentation {
            Augmentation::Apga => apga_step(&mut state, &batch, config),
            _ => baseline_step(&mut state, &batch, config, reference.as_ref()),
        };
        let mut report = match result {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                let diag = out_dir.join(DIAGNOSTIC_CKPT);
                state.save(&diag)?;
                log::error!("aborting at step {}: {e}; state saved to {}", t + 1, diag.display());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let step = state.step;
        if (step % config.eval_interval == 0 || step == config.steps) && !data.split(SplitKind::Val).is_empty() {
            report.metrics.val_accuracy = Some(evaluate(&state.classifier, data, SplitKind::Val)?);
            log::info!(
                "{} step {step}/{}: val accuracy {:.4}",
                config.augmentation,
                config.steps,
                report.metrics.val_accuracy.unwrap_or(f64::NAN)
            );
        }
        writer.push(&report.metrics)?;
        rows.push(report.metrics);
        let stopping = options.stop_after == Some(step);
        if step % config.checkpoint_interval == 0 || step == config.steps || stopping {
            state.save(&latest)?;
        }
    }
    let completed = state.step >= config.steps;
    if completed {
        state.save(&out_dir.join(FINAL_CKPT))?;
    }
    Ok(RunOutcome {
        state,
        metrics: rows,
        pretrain_losses,
        completed,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn toy() -> Dataset {
        generate(&SyntheticSpec {
            height: 8,
            width: 8,
            train: 4,
            val: 4,
            test: 2,
            roi_radius: (2, 3),
            distractors: 0,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            steps: 1,
            pretrain_epochs: 1,
            classifier: crate::nn::ClassifierArch { blocks: vec![4], head: Some(4), classes: 2 },
            policy: crate::nn::PolicyArch { enc1: 4, enc2: 4, start_prob: None },
            ..Default::default()
        }
    }

    #[test]
    fn single_step_smoke_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = run::<f32>(&small_config(), &toy(), dir.path(), &RunOptions::default()).unwrap();
        assert!(out.completed);
        assert_eq!(out.metrics.len(), 1);
        assert!(out.metrics[0].val_accuracy.is_some());
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), out.metrics);
        assert!(dir.path().join(FINAL_CKPT).exists());
        assert!(dir.path().join(PRETRAINED_CKPT).exists());
    }

    #[test]
    fn apga_step_updates_classifier_twice_and_policy_once() {
        let cfg = small_config();
        let data = toy();
        let mut state = TrainState::<f64>::new(&cfg).unwrap();
        let batch = data.full_batch::<f64>(SplitKind::Train).unwrap();
        let r = apga_step(&mut state, &batch, &cfg).unwrap();
        assert_eq!((r.audit.classifier_updates, r.audit.policy_updates), (2, 1));
        assert!(r.audit.policy_untouched_by_classifier && r.audit.classifier_untouched_by_policy);
        assert_eq!((state.classifier_updates, state.policy_updates, state.step), (2, 1, 1));
        assert_eq!(state.adam_classifier.step_count(), 2);
        let terms = r.policy_loss.unwrap();
        assert_eq!(terms.total, terms.recompute_total());
    }

    #[test]
    fn all_below_half_gives_zero_reward_and_black_aiding_batch() {
        let cfg = small_config();
        let data = toy();
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        *state.policy.output_bias_mut() = -30.0;
        let batch = data.full_batch::<f32>(SplitKind::Train).unwrap();
        let r = apga_step(&mut state, &batch, &cfg).unwrap();
        assert_eq!(r.metrics.reward, Some(0.0));
        assert_eq!(r.metrics.aid_keep_fraction, Some(0.0));
    }

    #[test]
    fn several_draws_with_equal_losses_leave_only_the_zeros_term() {
        let data = toy();
        let batch = data.full_batch::<f64>(SplitKind::Train).unwrap();
        let hash = |k: usize| {
            let cfg = TrainConfig {
                adversarial_actions: AdversarialActions::Sample,
                reward_granularity: RewardGranularity::Sample,
                action_samples: k,
                ..small_config()
            };
            let mut state = TrainState::<f64>::new(&cfg).unwrap();
            *state.policy.output_bias_mut() = -40.0;
            let r = apga_step(&mut state, &batch, &cfg).unwrap();
            assert_eq!(r.metrics.reward, Some(0.0));
            assert_eq!((r.audit.classifier_updates, r.audit.policy_updates), (2, 1));
            state.policy.param_hash()
        };
        assert_eq!(hash(2), hash(5));
    }

    #[test]
    fn several_draws_are_reproducible() {
        let data = toy();
        let batch = data.full_batch::<f32>(SplitKind::Train).unwrap();
        let cfg = TrainConfig {
            adversarial_actions: AdversarialActions::Sample,
            reward_granularity: RewardGranularity::Sample,
            action_samples: 3,
            ..small_config()
        };
        let run = || {
            let mut state = TrainState::<f32>::new(&cfg).unwrap();
            apga_step(&mut state, &batch, &cfg).unwrap();
            state.policy.param_hash()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn comparison_modes_update_as_configured() {
        let data = toy();
        let batch = data.full_batch::<f32>(SplitKind::Train).unwrap();
        for (aug, updates) in [(Augmentation::None, 1), (Augmentation::Cutout, 2), (Augmentation::Gradcam, 2)] {
            let cfg = TrainConfig { augmentation: aug, ..small_config() };
            let mut state = TrainState::<f32>::new(&cfg).unwrap();
            let reference = state.classifier.clone();
            let r = baseline_step(&mut state, &batch, &cfg, Some(&reference)).unwrap();
            assert_eq!(r.audit.classifier_updates, updates);
            assert_eq!(r.audit.policy_updates, 0);
            assert!(r.metrics.reward.is_none());
        }
    }

    #[test]
    fn zero_pretrain_epochs_leave_classifier_unchanged() {
        let cfg = small_config();
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let h = state.classifier.param_hash();
        assert!(pretrain_classifier(&mut state, &toy(), &cfg, 0).unwrap().is_empty());
        assert_eq!(state.classifier.param_hash(), h);
    }

    #[test]
    fn checkpoint_round_trip_preserves_state() {
        let cfg = small_config();
        let data = toy();
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let batch = data.full_batch::<f32>(SplitKind::Train).unwrap();
        apga_step(&mut state, &batch, &cfg).unwrap();
        let back = TrainState::<f32>::from_checkpoint(&cfg, &state.to_checkpoint()).unwrap();
        assert_eq!(back.classifier.param_hash(), state.classifier.param_hash());
        assert_eq!(back.policy.param_hash(), state.policy.param_hash());
        assert_eq!(back.baseline, state.baseline);
        assert_eq!(back.step, 1);
        let (mut a, mut b) = (state, back);
        let ra = apga_step(&mut a, &batch, &cfg).unwrap();
        let rb = apga_step(&mut b, &batch, &cfg).unwrap();
        assert_eq!(ra, rb);
    }
}
