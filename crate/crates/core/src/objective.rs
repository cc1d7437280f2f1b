//! Losses and rewards: pixelwise BCE, classification cross-entropy, the adversarial reward,
//! its moving-average baseline, and the regularized policy loss.
//!
//! Scalar results are reported in f64 regardless of tensor precision. Functions suffixed
//! `_grad` also return the gradient with respect to their first argument.

use serde::{Deserialize, Serialize};

use crate::batch::{MaskBatch, PolicyOutput};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy between probabilities and 0/1 targets.
pub fn bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(bce_grad(pred, target)?.0)
}

pub fn bce_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            format!("target {:?}", pred.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    let n = pred.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let (p, y) = (p.f64(), y.f64());
        let clamped = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += bce_term(p, y);
        let g = if p == clamped {
            (-y / clamped + (1.0 - y) / (1.0 - clamped)) / n
        } else {
            0.0
        };
        grad.push(T::of(g));
    }
    Ok((total / n, Tensor::from_vec(pred.shape(), grad)?))
}

fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn class_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    Ok(class_loss_grad(logits, labels)?.0)
}

pub fn class_loss_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(
            format!("[{}, K] logits", labels.len()),
            format!("{:?}", logits.shape()),
        ));
    }
    let k = logits.shape()[1];
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let b = labels.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for (j, v) in row.iter().enumerate() {
            let softmax = (v - log_z).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of((softmax - onehot) / b));
        }
    }
    Ok((total / b, Tensor::from_vec(logits.shape(), grad)?))
}

/// `-log softmax(logits)[label]` for each row.
pub fn class_loss_per_sample<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Vec<f64>> {
    class_loss_grad(logits, labels)?;
    let k = logits.shape()[1];
    Ok(logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            log_z - row[label].f64()
        })
        .collect())
}

/// Loss increase caused by erasing the pixels the policy marked important.
pub fn adversarial_reward(l_adversarial: f64, l_original: f64) -> f64 {
    l_adversarial - l_original
}

/// Exponential moving average of rewards. The first observation initializes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    value: f64,
    decay: f64,
    initialized: bool,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("baseline decay {decay} not in [0, 1)")));
        }
        Ok(RewardBaseline {
            value: 0.0,
            decay,
            initialized: false,
        })
    }

    pub(crate) fn restore(decay: f64, value: f64, initialized: bool) -> Self {
        RewardBaseline {
            value,
            decay,
            initialized,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Folds in one reward and returns the new baseline.
    pub fn update(&mut self, reward: f64) -> f64 {
        self.value = if self.initialized {
            ema(self.value, reward, self.decay)
        } else {
            reward
        };
        self.initialized = true;
        self.value
    }
}

/// One step of the moving-average recurrence; shared by the trainer and log replays.
#[inline]
pub fn ema(previous: f64, reward: f64, decay: f64) -> f64 {
    decay * previous + (1.0 - decay) * reward
}

/// Components of the regularized policy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyLossTerms {
    pub l_prob: f64,
    pub l_extreme: f64,
    pub reward: f64,
    /// Baseline subtracted from the reward; zero when the baseline is disabled.
    pub baseline: f64,
    pub lambda_zeros: f64,
    pub total: f64,
}

impl PolicyLossTerms {
    pub fn advantage(&self) -> f64 {
        self.reward - self.baseline
    }

    pub fn recompute_total(&self) -> f64 {
        self.l_prob * (self.reward - self.baseline) + self.l_extreme * self.lambda_zeros
    }
}

/// `bce(P, A_adv)·(R − b) + bce(P, 0)·λ_zeros`, with gradient with respect to `P` only.
pub fn policy_loss_grad<T: Scalar>(
    p: &PolicyOutput<T>,
    a_adv: &MaskBatch,
    reward: f64,
    baseline: Option<f64>,
    lambda_zeros: f64,
) -> Result<(PolicyLossTerms, Tensor<T>)> {
    if lambda_zeros < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda_zeros {lambda_zeros} < 0")));
    }
    if p.shape() != a_adv.shape() {
        return Err(Error::shape(
            format!("mask {:?}", p.shape()),
            format!("{:?}", a_adv.shape()),
        ));
    }
    let probs = p.probs();
    let (l_prob, g_prob) = bce_grad(probs, &a_adv.to_tensor())?;
    let (l_extreme, g_extreme) = bce_grad(probs, &Tensor::zeros(probs.shape()))?;
    let baseline = baseline.unwrap_or(0.0);
    let terms = PolicyLossTerms {
        l_prob,
        l_extreme,
        reward,
        baseline,
        lambda_zeros,
        total: l_prob * (reward - baseline) + l_extreme * lambda_zeros,
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    let adv = T::of(reward - baseline);
    let lam = T::of(lambda_zeros);
    let grad = g_prob
        .data()
        .iter()
        .zip(g_extreme.data())
        .map(|(&a, &b)| a * adv + b * lam)
        .collect();
    Ok((terms, Tensor::from_vec(probs.shape(), grad)?))
}

/// `mean_i[bce(P_i, A_i)·w_i] + lambda_zeros·bce(P, 0)`, with one weight per sample; returns the
/// total and its gradient with respect to `P`.
pub fn weighted_policy_loss_grad<T: Scalar>(
    p: &PolicyOutput<T>,
    target: &MaskBatch,
    weights: &[f64],
    lambda_zeros: f64,
) -> Result<(f64, Tensor<T>)> {
    if lambda_zeros < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda_zeros {lambda_zeros} < 0")));
    }
    if p.shape() != target.shape() {
        return Err(Error::shape(format!("mask {:?}", p.shape()), format!("{:?}", target.shape())));
    }
    let b = p.shape()[0];
    if weights.len() != b {
        return Err(Error::shape(format!("{b} sample weights"), format!("{}", weights.len())));
    }
    let probs = p.probs();
    let target = target.to_tensor::<T>();
    let plane = probs.len() / b.max(1);
    let (_, g_prob) = bce_grad(probs, &target)?;
    let (l_extreme, g_extreme) = bce_grad(probs, &Tensor::zeros(probs.shape()))?;
    let weighted: f64 = probs
        .data()
        .chunks(plane)
        .zip(target.data().chunks(plane))
        .zip(weights)
        .map(|((pi, ti), w)| {
            let per: f64 = pi.iter().zip(ti).map(|(&p, &y)| bce_term(p.f64(), y.f64())).sum();
            w * per / plane as f64
        })
        .sum();
    let total = weighted / b as f64 + lambda_zeros * l_extreme;
    if !total.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    let lam = T::of(lambda_zeros);
    let grad = g_prob
        .data()
        .iter()
        .zip(g_extreme.data())
        .enumerate()
        .map(|(k, (&a, &e))| a * T::of(weights[k / plane]) + e * lam)
        .collect();
    Ok((total, Tensor::from_vec(probs.shape(), grad)?))
}

pub fn policy_loss<T: Scalar>(
    p: &PolicyOutput<T>,
    a_adv: &MaskBatch,
    reward: f64,
    baseline: Option<f64>,
    lambda_zeros: f64,
) -> Result<PolicyLossTerms> {
    Ok(policy_loss_grad(p, a_adv, reward, baseline, lambda_zeros)?.0)
}
