#![allow(dead_code)]

use apga_core::data::{generate, Dataset, SyntheticSpec};
use apga_core::nn::{ClassifierArch, PolicyArch};
use apga_core::trainer::TrainConfig;

pub fn tiny_data(seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        height: 16,
        width: 16,
        train: 24,
        val: 8,
        test: 4,
        roi_radius: (3, 5),
        distractor_side: (2, 4),
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn tiny_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 8,
        pretrain_epochs: 1,
        eval_interval: 3,
        checkpoint_interval: 4,
        classifier: ClassifierArch {
            blocks: vec![4, 8],
            head: Some(8),
            classes: 2,
        },
        policy: PolicyArch {
            enc1: 4,
            enc2: 6,
            start_prob: None,
        },
        ..Default::default()
    }
}
