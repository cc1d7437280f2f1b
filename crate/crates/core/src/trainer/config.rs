use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::CutoutConfig;
use crate::error::{Error, Result};
use crate::nn::{ClassifierArch, PolicyArch};
use crate::tensor::Precision;

/// How the classifier's second update per step is produced, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    #[default]
    Apga,
    None,
    Cutout,
    Gradcam,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [Augmentation::None, Augmentation::Cutout, Augmentation::Gradcam, Augmentation::Apga];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Apga => "apga",
            Augmentation::None => "none",
            Augmentation::Cutout => "cutout",
            Augmentation::Gradcam => "gradcam",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown augmentation '{s}' (expected apga, none, cutout or gradcam)")))
    }
}

/// Target of the probability term in the policy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTarget {
    /// BCE against the adversarial keep-mask.
    #[default]
    KeepMask,
    /// BCE against its complement, the erased pixels.
    EraseMask,
}

/// Whether the advantage weighting the probability term is shared by the batch or computed
/// per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardGranularity {
    /// One reward from the batch-mean losses.
    #[default]
    Batch,
    /// Each sample's own loss increase, less the shared baseline.
    Sample,
}

/// How the adversarial mask is drawn from the policy's probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialActions {
    /// Erase exactly the pixels with probability of at least one half.
    #[default]
    Threshold,
    /// Erase each pixel independently with its probability.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Joint-training steps after pretraining.
    pub steps: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_policy: f64,
    pub baseline_decay: f64,
    pub lambda_zeros: f64,
    pub use_baseline: bool,
    pub policy_target: PolicyTarget,
    pub reward_granularity: RewardGranularity,
    pub adversarial_actions: AdversarialActions,
    /// Adversarial masks drawn per image when actions are sampled. Above one, each draw's
    /// advantage is its loss increase less the mean over the image's other draws.
    pub action_samples: usize,
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub augmentation: Augmentation,
    /// Validation every this many steps, and always at the last step.
    pub eval_interval: usize,
    pub checkpoint_interval: usize,
    pub classifier: ClassifierArch,
    pub policy: PolicyArch,
    pub cutout: CutoutConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            batch_size: 25,
            lr_classifier: 1e-4,
            lr_policy: 1e-4,
            baseline_decay: 0.5,
            lambda_zeros: 0.1,
            use_baseline: true,
            policy_target: PolicyTarget::KeepMask,
            reward_granularity: RewardGranularity::Batch,
            adversarial_actions: AdversarialActions::Threshold,
            action_samples: 1,
            pretrain_epochs: 5,
            seed: 0,
            precision: Precision::F32,
            augmentation: Augmentation::Apga,
            eval_interval: 50,
            checkpoint_interval: 50,
            classifier: ClassifierArch::default(),
            policy: PolicyArch::default(),
            cutout: CutoutConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return fail("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, lr) in [("lr_classifier", self.lr_classifier), ("lr_policy", self.lr_policy)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return fail(format!("baseline_decay must lie in [0, 1), got {}", self.baseline_decay));
        }
        if !(self.lambda_zeros >= 0.0 && self.lambda_zeros.is_finite()) {
            return fail(format!("lambda_zeros must be non-negative, got {}", self.lambda_zeros));
        }
        if self.eval_interval == 0 || self.checkpoint_interval == 0 {
            return fail("eval_interval and checkpoint_interval must be positive".into());
        }
        if self.action_samples == 0 {
            return fail("action_samples must be positive".into());
        }
        if self.action_samples > 1
            && (self.adversarial_actions != AdversarialActions::Sample
                || self.reward_granularity != RewardGranularity::Sample)
        {
            return fail("action_samples above 1 needs sampled actions and per-sample rewards".into());
        }
        if self.classifier.classes < 2 {
            return fail("classifier needs at least 2 classes".into());
        }
        self.cutout.validate()
    }

    /// Batches per epoch for a training split of `n` samples.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}
