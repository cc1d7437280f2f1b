//! Finite-difference checks of the losses and both reference networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{fd_check, fd_check_at, FdOptions, FdReport};
use crate::batch::{ImageBatch, PolicyOutput};
use crate::error::Result;
use crate::masking::adversarial_mask;
use crate::nn::{ClassifierArch, ClassifierModel, Parameterized, PolicyArch, PolicyModel};
use crate::objective::{bce, bce_grad, class_loss, class_loss_grad, policy_loss_grad};
use crate::tensor::Tensor;

/// Random f64 images in `[0, 1]`, labels cycling through `classes`.
pub fn random_batch(b: usize, h: usize, w: usize, classes: usize, seed: u64) -> Result<ImageBatch<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    ImageBatch::new(Tensor::from_vec(&[b, 1, h, w], data)?, (0..b).map(|i| i % classes).collect())
}

/// Probabilities in `[0.05, 0.95]` at least `margin` away from 0.5, so thresholding is stable
/// under perturbation.
pub fn random_probs(shape: &[usize], margin: f64, seed: u64) -> Result<PolicyOutput<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let d = rng.random_range(margin..0.45);
            if rng.random_bool(0.5) {
                0.5 + d
            } else {
                0.5 - d
            }
        })
        .collect();
    PolicyOutput::new(Tensor::from_vec(shape, data)?)
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).expect("shape preserved")
}

pub fn check_bce(seed: u64, opts: FdOptions) -> Result<FdReport> {
    let p = random_probs(&[3, 1, 4, 4], 0.01, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let target = Tensor::from_vec(&[3, 1, 4, 4], (0..48).map(|_| rng.random_range(0..2) as f64).collect())?;
    let shape = p.shape().to_vec();
    let (_, g) = bce_grad(p.probs(), &target)?;
    fd_check(
        |v: &[f64]| bce(&with_data(&shape, v), &target).expect("valid bce"),
        p.probs().data(),
        g.data(),
        opts,
    )
}

pub fn check_class_loss(seed: u64, opts: FdOptions) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k) = (5, 3);
    let logits = Tensor::from_vec(&[b, k], (0..b * k).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let labels: Vec<usize> = (0..b).map(|i| i % k).collect();
    let (_, g) = class_loss_grad(&logits, &labels)?;
    fd_check(
        |v: &[f64]| class_loss(&with_data(&[b, k], v), &labels).expect("valid logits"),
        logits.data(),
        g.data(),
        opts,
    )
}

/// Regularized policy loss with respect to the probabilities, with the adversarial mask frozen
/// at the unperturbed probabilities.
pub fn check_policy_loss(seed: u64, opts: FdOptions) -> Result<FdReport> {
    let p = random_probs(&[2, 1, 4, 4], 0.01, seed)?;
    let a = adversarial_mask(&p);
    let (reward, baseline, lambda) = (0.37, Some(0.12), 0.1);
    let shape = p.shape().to_vec();
    let (_, g) = policy_loss_grad(&p, &a, reward, baseline, lambda)?;
    fd_check(
        |v: &[f64]| {
            let q = PolicyOutput::new(with_data(&shape, v)).expect("stays in (0,1)");
            policy_loss_grad(&q, &a, reward, baseline, lambda).expect("valid").0.total
        },
        p.probs().data(),
        g.data(),
        opts,
    )
}

/// Deterministic subset of up to `per_tensor` coordinates from each parameter tensor.
fn sample_coordinates(sizes: &[usize], per_tensor: Option<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for &n in sizes {
        match per_tensor {
            Some(k) if k < n => {
                let stride = n as f64 / k as f64;
                out.extend((0..k).map(|i| offset + (i as f64 * stride) as usize));
            }
            _ => out.extend(offset..offset + n),
        }
        offset += n;
    }
    out
}

fn flat_params<M: Parameterized<f64>>(m: &M) -> (Vec<f64>, Vec<usize>) {
    let params = m.parameters();
    let sizes = params.iter().map(|(_, t)| t.len()).collect();
    (params.iter().flat_map(|(_, t)| t.data().iter().copied()).collect(), sizes)
}

fn set_flat<M: Parameterized<f64>>(m: &mut M, v: &[f64]) {
    let mut off = 0;
    for (_, t) in m.parameters_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

/// Cross-entropy of the classifier with respect to every parameter (or a strided subset).
pub fn check_classifier(
    arch: &ClassifierArch,
    batch: &ImageBatch<f64>,
    seed: u64,
    per_tensor: Option<usize>,
    opts: FdOptions,
) -> Result<FdReport> {
    let mut model = ClassifierModel::<f64>::new(arch.clone(), seed)?;
    let logits = model.forward_recorded(batch)?;
    let (_, g) = class_loss_grad(&logits, batch.labels())?;
    let analytic = model.backward(&g)?.flatten();
    let (x, sizes) = flat_params(&model);
    let idx = sample_coordinates(&sizes, per_tensor);
    let mut probe = model.clone();
    fd_check_at(
        |v: &[f64]| {
            set_flat(&mut probe, v);
            class_loss(&probe.forward(batch).expect("forward"), batch.labels()).expect("loss")
        },
        &x,
        &analytic,
        &idx,
        opts,
    )
}

/// Regularized policy loss through the policy network, with respect to its parameters. The
/// adversarial mask is frozen at the unperturbed output.
pub fn check_policy(
    arch: &PolicyArch,
    batch: &ImageBatch<f64>,
    seed: u64,
    per_tensor: Option<usize>,
    opts: FdOptions,
) -> Result<FdReport> {
    let mut model = PolicyModel::<f64>::new(arch.clone(), seed)?;
    let p = model.forward_recorded(batch)?;
    let a = adversarial_mask(&p);
    let (reward, baseline, lambda) = (0.8, Some(0.3), 0.1);
    let (_, g) = policy_loss_grad(&p, &a, reward, baseline, lambda)?;
    let analytic = model.backward(&g)?.flatten();
    let (x, sizes) = flat_params(&model);
    let idx = sample_coordinates(&sizes, per_tensor);
    let mut probe = model.clone();
    fd_check_at(
        |v: &[f64]| {
            set_flat(&mut probe, v);
            let q = probe.forward(batch).expect("forward");
            policy_loss_grad(&q, &a, reward, baseline, lambda).expect("loss").0.total
        },
        &x,
        &analytic,
        &idx,
        opts,
    )
}
