//! Enumerable masking problems: `n ≤ 12` pixels, a Bernoulli erase-policy, and a fixed
//! differentiable loss over the masked pixel vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::masking::sample_erasures;
use crate::objective::RewardBaseline;

pub const MAX_PIXELS: usize = 12;

/// Scalar loss of the masked pixel vector `x ⊙ (1 − a)`.
pub trait MaskedLoss {
    fn eval(&self, z: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> MaskedLoss for F {
    fn eval(&self, z: &[f64]) -> f64 {
        self(z)
    }
}

/// `½ zᵀQz + cᵀz`, with `Q` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

impl MaskedLoss for QuadraticLoss {
    fn eval(&self, z: &[f64]) -> f64 {
        let n = z.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += z[i] * self.q[i * n + j] * z[j];
            }
        }
        0.5 * quad + self.c.iter().zip(z).map(|(c, z)| c * z).sum::<f64>()
    }
}

impl QuadraticLoss {
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        QuadraticLoss {
            q: (0..n * n).map(|k| self.q[perm[k / n] * n + perm[k % n]]).collect(),
            c: perm.iter().map(|&i| self.c[i]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyInstance<L> {
    pub x: Vec<f64>,
    /// Per-pixel erase probabilities.
    pub p: Vec<f64>,
    pub loss: L,
}

impl<L: MaskedLoss> TinyInstance<L> {
    pub fn new(x: Vec<f64>, p: Vec<f64>, loss: L) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::shape(format!("{} probabilities", x.len()), format!("{}", p.len())));
        }
        if x.len() > MAX_PIXELS {
            return Err(Error::InvalidArgument(format!(
                "{} pixels exceeds the enumeration limit of {MAX_PIXELS}",
                x.len()
            )));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        Ok(TinyInstance { x, p, loss })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    fn masked(&self, erase: impl Fn(usize) -> bool) -> Vec<f64> {
        self.x
            .iter()
            .enumerate()
            .map(|(i, &v)| if erase(i) { 0.0 } else { v })
            .collect()
    }

    /// `R(a) = L(x ⊙ (1 − a)) − L(x)`; bit `i` of `action` set means pixel `i` is erased.
    pub fn reward(&self, action: u32) -> f64 {
        self.loss.eval(&self.masked(|i| action >> i & 1 == 1)) - self.loss.eval(&self.x)
    }

    fn reward_of(&self, erase: &[bool]) -> f64 {
        self.loss.eval(&self.masked(|i| erase[i])) - self.loss.eval(&self.x)
    }

    pub fn action_probability(&self, action: u32) -> f64 {
        self.p
            .iter()
            .enumerate()
            .map(|(i, &p)| if action >> i & 1 == 1 { p } else { 1.0 - p })
            .product()
    }

    fn actions(&self) -> std::ops::Range<u32> {
        0..1u32 << self.n()
    }
}

impl TinyInstance<QuadraticLoss> {
    /// Random pixels in `[0, 1]`, probabilities in `[0.1, 0.9]`, and a random quadratic loss.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        let c = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TinyInstance::new(x, p, QuadraticLoss { q, c })
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        TinyInstance {
            x: perm.iter().map(|&i| self.x[i]).collect(),
            p: perm.iter().map(|&i| self.p[i]).collect(),
            loss: self.loss.permuted(perm),
        }
    }
}

/// `Σ_a P(a)`, which should be 1.
pub fn total_probability<L: MaskedLoss>(inst: &TinyInstance<L>) -> f64 {
    inst.actions().map(|a| inst.action_probability(a)).sum()
}

/// `J = Σ_a P(a)·R(a)` by enumeration.
pub fn exact_expected_reward<L: MaskedLoss>(inst: &TinyInstance<L>) -> f64 {
    inst.actions()
        .map(|a| inst.action_probability(a) * inst.reward(a))
        .sum()
}

/// `∂J/∂p_i = Σ_a ∂P(a)/∂p_i · R(a)` by enumeration.
pub fn exact_policy_gradient<L: MaskedLoss>(inst: &TinyInstance<L>) -> Vec<f64> {
    let n = inst.n();
    let mut grad = vec![0.0; n];
    for a in inst.actions() {
        let r = inst.reward(a);
        for (i, g) in grad.iter_mut().enumerate() {
            let others: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| if a >> j & 1 == 1 { inst.p[j] } else { 1.0 - inst.p[j] })
                .product();
            let sign = if a >> i & 1 == 1 { 1.0 } else { -1.0 };
            *g += sign * others * r;
        }
    }
    grad
}

/// Monte-Carlo estimate of `J` with its standard error.
pub fn monte_carlo_reward<L: MaskedLoss>(inst: &TinyInstance<L>, samples: usize, rng: &mut impl Rng) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let r = inst.reward_of(&sample_erasures(&inst.p, rng));
        sum += r;
        sq += r * r;
    }
    let mean = sum / samples as f64;
    let var = (sq - samples as f64 * mean * mean) / (samples - 1) as f64;
    Ok((mean, (var.max(0.0) / samples as f64).sqrt()))
}

/// Likelihood-ratio estimate: mean of `∇_p log P(a) · (R(a) − b)` over sampled actions.
///
/// With `baseline_decay`, `b` is the moving average of the rewards seen *before* the current
/// sample, so it never depends on the action it weights.
pub fn reinforce_estimate<L: MaskedLoss>(
    inst: &TinyInstance<L>,
    samples: usize,
    rng: &mut impl Rng,
    baseline_decay: Option<f64>,
) -> Result<Vec<f64>> {
    Ok(reinforce_samples(inst, samples, rng, baseline_decay)?.mean)
}

pub(crate) struct EstimatorStats {
    pub mean: Vec<f64>,
    /// Per-coordinate sample variance of the single-sample estimates.
    pub variance: Vec<f64>,
}

pub(crate) fn reinforce_samples<L: MaskedLoss>(
    inst: &TinyInstance<L>,
    samples: usize,
    rng: &mut impl Rng,
    baseline_decay: Option<f64>,
) -> Result<EstimatorStats> {
    if samples == 0 {
        return Err(Error::InvalidArgument("zero samples".into()));
    }
    let n = inst.n();
    let mut baseline = baseline_decay.map(RewardBaseline::new).transpose()?;
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for _ in 0..samples {
        let erase = sample_erasures(&inst.p, rng);
        let r = inst.reward_of(&erase);
        let b = match &mut baseline {
            Some(bl) => {
                let prev = if bl.is_initialized() { bl.value() } else { 0.0 };
                bl.update(r);
                prev
            }
            None => 0.0,
        };
        for i in 0..n {
            let score = if erase[i] {
                1.0 / inst.p[i]
            } else {
                -1.0 / (1.0 - inst.p[i])
            };
            let g = score * (r - b);
            sum[i] += g;
            sq[i] += g * g;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let variance = sq
        .iter()
        .zip(&mean)
        .map(|(s, mu)| if samples > 1 { (s - m * mu * mu) / (m - 1.0) } else { 0.0 })
        .collect();
    Ok(EstimatorStats { mean, variance })
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_l2(estimate: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}
