use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate, load_folder, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::PolicyArch;
use crate::trainer::{AdversarialActions, Augmentation, PolicyTarget, RewardGranularity, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directory with `labels.csv` and `images/`, resized to `height × width`.
    Folder { path: PathBuf, height: usize, width: usize },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(spec) => generate(spec),
            DatasetSource::Folder { path, height, width } => {
                if !path.is_dir() {
                    return Err(Error::MissingFile(path.clone()));
                }
                load_folder(path, *height, *width)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportFlags {
    /// Write validation-split mask PNGs for each finished run.
    pub masks: bool,
    /// Write SVG charts and a mask gallery for each finished run.
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    /// Shared training settings; `seed` and `augmentation` are overridden per run.
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub augmentations: Vec<Augmentation>,
    pub export: ExportFlags,
    /// Classifier checkpoint for activation-map masks; each run's pretrained snapshot if absent.
    pub saliency_reference: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetSource::default(),
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
            augmentations: vec![Augmentation::Apga],
            export: ExportFlags::default(),
            saliency_reference: None,
        }
    }
}

impl ExperimentConfig {
    /// Benchmark on the default synthetic task: five seeds of APGA against plain training.
    /// The policy draws eight erase masks per image and learns from each draw's loss increase
    /// over the image's other draws, with a light all-zeros penalty.
    pub fn reference() -> Self {
        ExperimentConfig {
            seeds: (0..5).collect(),
            augmentations: vec![Augmentation::None, Augmentation::Apga],
            train: TrainConfig {
                steps: 500,
                lr_classifier: 1e-3,
                lr_policy: 3e-4,
                lambda_zeros: 0.002,
                pretrain_epochs: 10,
                policy_target: PolicyTarget::EraseMask,
                reward_granularity: RewardGranularity::Sample,
                adversarial_actions: AdversarialActions::Sample,
                action_samples: 8,
                policy: PolicyArch { start_prob: Some(0.6), ..PolicyArch::default() },
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.augmentations.is_empty() {
            return Err(Error::Config("at least one augmentation is required".into()));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Directory of the run for `(augmentation, seed)`.
    pub fn run_dir(&self, aug: Augmentation, seed: u64) -> PathBuf {
        self.out_dir.join(aug.name()).join(format!("seed_{seed}"))
    }

    /// The single-run configuration written into that run's directory.
    pub fn for_run(&self, aug: Augmentation, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.augmentations = vec![aug];
        c.train.seed = seed;
        c.train.augmentation = aug;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_matches_shipped_config() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json");
        let shipped = ExperimentConfig::load(&path).unwrap();
        assert_eq!(shipped, ExperimentConfig::reference());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig {
            dataset: DatasetSource::Folder { path: "d".into(), height: 16, width: 16 },
            seeds: vec![0, 1, 2],
            augmentations: vec![Augmentation::None, Augmentation::Apga],
            export: ExportFlags { masks: true, plots: false },
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"dataset": {"kind": "synthetic", "train": 40}}"#).unwrap();
        match c.dataset {
            DatasetSource::Synthetic(s) => assert_eq!((s.train, s.height), (40, 32)),
            _ => panic!("expected synthetic"),
        }
        assert_eq!(c.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn wrong_schema_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 9}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"steps": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds": []}"#).is_err());
        assert!(ExperimentConfig::from_json("{").is_err());
    }

    #[test]
    fn missing_folder_names_the_path() {
        let src = DatasetSource::Folder { path: "/no/such/dir".into(), height: 8, width: 8 };
        match src.load() {
            Err(Error::MissingFile(p)) => assert_eq!(p, PathBuf::from("/no/such/dir")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn per_run_config_pins_seed_and_mode() {
        let c = ExperimentConfig { seeds: vec![3, 4], ..Default::default() };
        let r = c.for_run(Augmentation::Cutout, 4);
        assert_eq!((r.train.seed, r.train.augmentation, r.seeds.clone()), (4, Augmentation::Cutout, vec![4]));
        assert!(c.run_dir(Augmentation::Cutout, 4).ends_with("cutout/seed_4"));
    }
}
