use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Checkpoint, ClassifierModel, PolicyModel};
use crate::objective::RewardBaseline;
use crate::tensor::Scalar;

/// Everything needed to continue training bit-exactly. Per-step randomness is derived from
/// `(seed, step)`, so no generator state is stored.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub classifier: ClassifierModel<T>,
    pub policy: PolicyModel<T>,
    pub adam_classifier: AdamState<T>,
    pub adam_policy: AdamState<T>,
    pub baseline: RewardBaseline,
    /// Completed joint-training steps.
    pub step: usize,
    pub pretrained: bool,
    pub classifier_updates: u64,
    pub policy_updates: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let base = AdamConfig::default();
        Ok(TrainState {
            classifier: ClassifierModel::new(config.classifier.clone(), config.seed)?,
            policy: PolicyModel::new(config.policy.clone(), config.seed.wrapping_add(0x9e37_79b9))?,
            adam_classifier: AdamState::new(AdamConfig { lr: config.lr_classifier, ..base }),
            adam_policy: AdamState::new(AdamConfig { lr: config.lr_policy, ..base }),
            baseline: RewardBaseline::new(config.baseline_decay)?,
            step: 0,
            pretrained: false,
            classifier_updates: 0,
            policy_updates: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.save_params("classifier", &self.classifier);
        ck.save_params("policy", &self.policy);
        ck.save_adam("adam_classifier", &self.adam_classifier);
        ck.save_adam("adam_policy", &self.adam_policy);
        ck.push_f64("meta/step", self.step as f64);
        ck.push_f64("meta/pretrained", f64::from(u8::from(self.pretrained)));
        ck.push_f64("meta/baseline_value", self.baseline.value());
        ck.push_f64("meta/baseline_initialized", f64::from(u8::from(self.baseline.is_initialized())));
        ck.push_f64("meta/classifier_updates", self.classifier_updates as f64);
        ck.push_f64("meta/policy_updates", self.policy_updates as f64);
        ck
    }

    pub fn from_checkpoint(config: &TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut s = TrainState::new(config)?;
        ck.load_params("classifier", &mut s.classifier)?;
        ck.load_params("policy", &mut s.policy)?;
        ck.load_adam("adam_classifier", &s.classifier, &mut s.adam_classifier)?;
        ck.load_adam("adam_policy", &s.policy, &mut s.adam_policy)?;
        let count = |name: &str| -> Result<u64> {
            let v = ck.f64(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("{name} is not a count: {v}")));
            }
            Ok(v as u64)
        };
        s.step = count("meta/step")? as usize;
        s.pretrained = count("meta/pretrained")? == 1;
        s.baseline = RewardBaseline::restore(
            config.baseline_decay,
            ck.f64("meta/baseline_value")?,
            count("meta/baseline_initialized")? == 1,
        );
        s.classifier_updates = count("meta/classifier_updates")?;
        s.policy_updates = count("meta/policy_updates")?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(config: &TrainConfig, path: &Path) -> Result<Self> {
        Self::from_checkpoint(config, &Checkpoint::read(path)?)
    }
}

/// Loads just the classifier weights stored under `classifier/` in a checkpoint.
pub fn load_classifier<T: Scalar>(config: &TrainConfig, path: &Path) -> Result<ClassifierModel<T>> {
    let mut m = ClassifierModel::new(config.classifier.clone(), config.seed)?;
    Checkpoint::read(path)?.load_params("classifier", &mut m)?;
    Ok(m)
}

pub fn load_policy<T: Scalar>(config: &TrainConfig, path: &Path) -> Result<PolicyModel<T>> {
    let mut m = PolicyModel::new(config.policy.clone(), config.seed)?;
    Checkpoint::read(path)?.load_params("policy", &mut m)?;
    Ok(m)
}
