//! Mask policy: two-level encoder-decoder with a skip connection and a per-pixel sigmoid.
//!
//! ```text
//! x ─ conv3×3(c1)+relu ─ e1 ─────────────────────────┐
//!                         └ maxpool2 ─ conv3×3(c2)+relu ─ up2 ─ concat ─ conv3×3(c1)+relu ─ conv1×1(1) ─ sigmoid
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv2d};
use super::params::{Grads, Parameterized};
use crate::batch::{ImageBatch, PolicyOutput};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub enc1: usize,
    pub enc2: usize,
    /// When set, the output layer starts with zero weights and the bias that gives this
    /// probability at every pixel, whatever the input.
    #[serde(default)]
    pub start_prob: Option<f64>,
}

impl Default for PolicyArch {
    fn default() -> Self {
        PolicyArch {
            enc1: 16,
            enc2: 32,
            start_prob: None,
        }
    }
}

#[derive(Debug, Clone)]
struct PolicyTrace<T> {
    x: Vec<T>,
    e1: Vec<T>,
    pool_idx: Vec<u32>,
    q: Vec<T>,
    e2: Vec<T>,
    cat: Vec<T>,
    d: Vec<T>,
    p: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct PolicyModel<T> {
    arch: PolicyArch,
    enc1: Conv2d<T>,
    enc2: Conv2d<T>,
    dec: Conv2d<T>,
    head: Conv2d<T>,
    recorded: Option<(Vec<PolicyTrace<T>>, usize, usize)>,
}

impl<T: Scalar> PolicyModel<T> {
    pub fn new(arch: PolicyArch, seed: u64) -> Result<Self> {
        if arch.enc1 == 0 || arch.enc2 == 0 {
            return Err(Error::Config("policy layers need at least one channel".into()));
        }
        if let Some(p) = arch.start_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("policy start probability {p} not in (0, 1)")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = 6f64.sqrt();
        let enc1 = Conv2d::new(1, arch.enc1, 3, he, &mut rng);
        let enc2 = Conv2d::new(arch.enc1, arch.enc2, 3, he, &mut rng);
        let dec = Conv2d::new(arch.enc1 + arch.enc2, arch.enc1, 3, he, &mut rng);
        let mut head = Conv2d::new(arch.enc1, 1, 1, 1.0, &mut rng);
        if let Some(p) = arch.start_prob {
            head.weight.data_mut().iter_mut().for_each(|w| *w = T::zero());
            head.bias.data_mut()[0] = T::of((p / (1.0 - p)).ln());
        }
        Ok(PolicyModel {
            enc1,
            enc2,
            dec,
            head,
            arch,
            recorded: None,
        })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    /// Bias feeding the output sigmoid.
    pub fn output_bias_mut(&mut self) -> &mut T {
        &mut self.head.bias.data_mut()[0]
    }

    fn check_input(&self, batch: &ImageBatch<T>) -> Result<()> {
        let (h, w) = (batch.height(), batch.width());
        if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "even spatial size of at least 2×2",
                format!("{h}×{w}"),
            ));
        }
        Ok(())
    }

    fn forward_image(&self, x: &[T], h: usize, w: usize) -> PolicyTrace<T> {
        let (c1, c2) = (self.arch.enc1, self.arch.enc2);
        let mut e1 = self.enc1.forward(x, h, w);
        layers::relu_inplace(&mut e1);
        let (q, pool_idx) = layers::maxpool2(&e1, c1, h, w);
        let mut e2 = self.enc2.forward(&q, h / 2, w / 2);
        layers::relu_inplace(&mut e2);
        let mut cat = layers::upsample2(&e2, c2, h / 2, w / 2);
        cat.extend_from_slice(&e1);
        let mut d = self.dec.forward(&cat, h, w);
        layers::relu_inplace(&mut d);
        let z = self.head.forward(&d, h, w);
        let (lo, hi) = (T::epsilon(), T::one() - T::epsilon());
        let p = z.into_iter().map(|v| layers::sigmoid(v).max(lo).min(hi)).collect();
        PolicyTrace {
            x: x.to_vec(),
            e1,
            pool_idx,
            q,
            e2,
            cat,
            d,
            p,
        }
    }

    fn run(&self, batch: &ImageBatch<T>) -> Result<Vec<PolicyTrace<T>>> {
        self.check_input(batch)?;
        let (h, w) = (batch.height(), batch.width());
        Ok((0..batch.len())
            .map(|i| self.forward_image(batch.image(i), h, w))
            .collect())
    }

    fn collect(traces: &[PolicyTrace<T>], h: usize, w: usize) -> Result<PolicyOutput<T>> {
        let probs: Vec<T> = traces.iter().flat_map(|t| t.p.iter().copied()).collect();
        PolicyOutput::new(Tensor::from_vec(&[traces.len(), 1, h, w], probs)?)
    }

    /// `B×1×H×W` probabilities in `(0, 1)`. Pure.
    pub fn forward(&self, batch: &ImageBatch<T>) -> Result<PolicyOutput<T>> {
        let traces = self.run(batch)?;
        Self::collect(&traces, batch.height(), batch.width())
    }

    pub fn forward_recorded(&mut self, batch: &ImageBatch<T>) -> Result<PolicyOutput<T>> {
        let traces = self.run(batch)?;
        let out = Self::collect(&traces, batch.height(), batch.width())?;
        self.recorded = Some((traces, batch.height(), batch.width()));
        Ok(out)
    }

    /// Gradients given `dL/dprobs`, using the recorded forward pass (consumed).
    pub fn backward(&mut self, grad_probs: &Tensor<T>) -> Result<Grads<T>> {
        let (traces, h, w) = self.recorded.take().ok_or(Error::NoRecordedForward)?;
        grad_probs.expect_shape(&[traces.len(), 1, h, w], "probability gradient")?;
        let mut grads = self.zero_grads();
        let plane = h * w;
        for (i, t) in traces.iter().enumerate() {
            self.backward_image(t, &grad_probs.data()[i * plane..(i + 1) * plane], h, w, &mut grads);
        }
        grads.check_finite()?;
        Ok(grads)
    }

    fn backward_image(&self, t: &PolicyTrace<T>, dp: &[T], h: usize, w: usize, grads: &mut Grads<T>) {
        let (c1, c2) = (self.arch.enc1, self.arch.enc2);
        let mut g = grads.entries.iter_mut().map(|(_, t)| t.data_mut());
        let (dw_e1, db_e1) = (g.next().unwrap(), g.next().unwrap());
        let (dw_e2, db_e2) = (g.next().unwrap(), g.next().unwrap());
        let (dw_d, db_d) = (g.next().unwrap(), g.next().unwrap());
        let (dw_h, db_h) = (g.next().unwrap(), g.next().unwrap());

        let dz: Vec<T> = dp
            .iter()
            .zip(&t.p)
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        let mut dd = self
            .head
            .backward(&t.d, h, w, &dz, dw_h, db_h, true)
            .expect("input grad requested");
        layers::relu_backward_inplace(&t.d, &mut dd);
        let dcat = self
            .dec
            .backward(&t.cat, h, w, &dd, dw_d, db_d, true)
            .expect("input grad requested");
        let (dup, de1_skip) = dcat.split_at(c2 * h * w);
        let mut de2 = layers::upsample2_backward(dup, c2, h / 2, w / 2);
        layers::relu_backward_inplace(&t.e2, &mut de2);
        let dq = self
            .enc2
            .backward(&t.q, h / 2, w / 2, &de2, dw_e2, db_e2, true)
            .expect("input grad requested");
        let mut de1 = layers::maxpool2_backward(&dq, &t.pool_idx, c1 * h * w);
        for (a, &b) in de1.iter_mut().zip(de1_skip) {
            *a += b;
        }
        layers::relu_backward_inplace(&t.e1, &mut de1);
        self.enc1.backward(&t.x, h, w, &de1, dw_e1, db_e1, false);
    }
}

impl<T: Scalar> Parameterized<T> for PolicyModel<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("enc1.weight".into(), &self.enc1.weight),
            ("enc1.bias".into(), &self.enc1.bias),
            ("enc2.weight".into(), &self.enc2.weight),
            ("enc2.bias".into(), &self.enc2.bias),
            ("dec.weight".into(), &self.dec.weight),
            ("dec.bias".into(), &self.dec.bias),
            ("head.weight".into(), &self.head.weight),
            ("head.bias".into(), &self.head.bias),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("enc1.weight".into(), &mut self.enc1.weight),
            ("enc1.bias".into(), &mut self.enc1.bias),
            ("enc2.weight".into(), &mut self.enc2.weight),
            ("enc2.bias".into(), &mut self.enc2.bias),
            ("dec.weight".into(), &mut self.dec.weight),
            ("dec.bias".into(), &mut self.dec.bias),
            ("head.weight".into(), &mut self.head.weight),
            ("head.bias".into(), &mut self.head.bias),
        ]
    }
}
