//! Reference classifier: `[conv3×3 + ReLU + maxpool]×n → conv3×3 + ReLU → GAP → dense(K)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv2d};
use super::params::{Grads, Parameterized};
use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    /// Output channels of each conv+ReLU+maxpool block.
    pub blocks: Vec<usize>,
    /// Output channels of the final unpooled conv+ReLU, if any.
    pub head: Option<usize>,
    pub classes: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch {
            blocks: vec![16, 16],
            head: Some(32),
            classes: 2,
        }
    }
}

impl ClassifierArch {
    pub fn with_classes(classes: usize) -> Self {
        ClassifierArch {
            classes,
            ..Self::default()
        }
    }

    /// Human-readable layer list.
    pub fn layers(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.blocks {
            out.push(format!("conv3x3({c})+relu+maxpool2"));
        }
        if let Some(c) = self.head {
            out.push(format!("conv3x3({c})+relu"));
        }
        out.push("global_avg_pool".into());
        out.push(format!("dense({})", self.classes));
        out
    }
}

#[derive(Debug, Clone)]
struct ConvTrace<T> {
    input: Vec<T>,
    h: usize,
    w: usize,
    /// Post-ReLU, pre-pool activation.
    output: Vec<T>,
    pool_idx: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct ImageTrace<T> {
    convs: Vec<ConvTrace<T>>,
    pooled: Vec<T>,
    ph: usize,
    pw: usize,
    logits: Vec<T>,
}

/// Final-conv activations and the gradient of the predicted-class logit with respect to them.
#[derive(Debug, Clone)]
pub struct ConvAttribution<T> {
    pub features: Vec<T>,
    pub grads: Vec<T>,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel<T> {
    arch: ClassifierArch,
    convs: Vec<Conv2d<T>>,
    dense_w: Tensor<T>,
    dense_b: Tensor<T>,
    recorded: Option<Vec<ImageTrace<T>>>,
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn new(arch: ClassifierArch, seed: u64) -> Result<Self> {
        if arch.classes < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        if arch.blocks.iter().chain(arch.head.iter()).any(|&c| c == 0) {
            return Err(Error::Config("conv layers need at least one channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = 6f64.sqrt();
        let mut convs = Vec::new();
        let mut cin = 1;
        for &c in arch.blocks.iter().chain(arch.head.iter()) {
            convs.push(Conv2d::new(cin, c, 3, he, &mut rng));
            cin = c;
        }
        let dense = Conv2d::<T>::new(cin, arch.classes, 1, 1.0, &mut rng);
        let dense_w = dense.weight.reshape(&[arch.classes, cin])?;
        Ok(ClassifierModel {
            dense_b: Tensor::zeros(&[arch.classes]),
            arch,
            convs,
            dense_w,
            recorded: None,
        })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn has_conv(&self) -> bool {
        !self.convs.is_empty()
    }

    fn check_input(&self, batch: &ImageBatch<T>) -> Result<()> {
        let min_side = 1usize << self.arch.blocks.len();
        if batch.height() < min_side || batch.width() < min_side {
            return Err(Error::shape(
                format!("spatial size at least {min_side}×{min_side}"),
                format!("{}×{}", batch.height(), batch.width()),
            ));
        }
        Ok(())
    }

    fn forward_image(&self, image: &[T], h0: usize, w0: usize, keep: bool) -> ImageTrace<T> {
        let mut x = image.to_vec();
        let (mut h, mut w) = (h0, w0);
        let mut convs = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let mut out = conv.forward(&x, h, w);
            layers::relu_inplace(&mut out);
            let pooled = i < self.arch.blocks.len();
            let (next, idx, nh, nw) = if pooled {
                let (p, idx) = layers::maxpool2(&out, conv.cout(), h, w);
                (p, Some(idx), h / 2, w / 2)
            } else {
                (out.clone(), None, h, w)
            };
            if keep {
                convs.push(ConvTrace {
                    input: std::mem::take(&mut x),
                    h,
                    w,
                    output: out,
                    pool_idx: idx,
                });
            }
            x = next;
            h = nh;
            w = nw;
        }
        let channels = self.dense_w.shape()[1];
        let plane = (h * w) as f64;
        let gap: Vec<T> = (0..channels)
            .map(|c| T::of(x[c * h * w..(c + 1) * h * w].iter().map(|v| v.f64()).sum::<f64>() / plane))
            .collect();
        let k = self.arch.classes;
        let logits = (0..k)
            .map(|j| {
                let row = &self.dense_w.data()[j * channels..(j + 1) * channels];
                self.dense_b.data()[j] + row.iter().zip(&gap).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect();
        ImageTrace {
            convs,
            pooled: x,
            ph: h,
            pw: w,
            logits,
        }
    }

    fn run(&self, batch: &ImageBatch<T>, keep: bool) -> Result<(Tensor<T>, Vec<ImageTrace<T>>)> {
        self.check_input(batch)?;
        let (h, w) = (batch.height(), batch.width());
        let mut traces = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(batch.len() * self.arch.classes);
        for i in 0..batch.len() {
            let t = self.forward_image(batch.image(i), h, w, keep);
            logits.extend_from_slice(&t.logits);
            if keep {
                traces.push(t);
            }
        }
        Ok((Tensor::from_vec(&[batch.len(), self.arch.classes], logits)?, traces))
    }

    /// `B×K` logits. Pure; does not record anything.
    pub fn forward(&self, batch: &ImageBatch<T>) -> Result<Tensor<T>> {
        Ok(self.run(batch, false)?.0)
    }

    /// Forward pass that records activations for a subsequent [`backward`](Self::backward).
    pub fn forward_recorded(&mut self, batch: &ImageBatch<T>) -> Result<Tensor<T>> {
        let (logits, traces) = self.run(batch, true)?;
        self.recorded = Some(traces);
        Ok(logits)
    }

    /// Argmax class per image; ties go to the lower class index.
    pub fn predict(&self, batch: &ImageBatch<T>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(argmax_rows(&logits))
    }

    /// Gradients of a loss given `dL/dlogits`, using the recorded forward pass (consumed).
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Grads<T>> {
        let traces = self.recorded.take().ok_or(Error::NoRecordedForward)?;
        grad_logits.expect_shape(&[traces.len(), self.arch.classes], "logit gradient")?;
        let mut grads = self.zero_grads();
        let k = self.arch.classes;
        for (i, trace) in traces.iter().enumerate() {
            let dl = &grad_logits.data()[i * k..(i + 1) * k];
            self.backward_image(trace, dl, Some(&mut grads), false);
        }
        grads.check_finite()?;
        Ok(grads)
    }

    fn backward_image(
        &self,
        trace: &ImageTrace<T>,
        dlogits: &[T],
        mut grads: Option<&mut Grads<T>>,
        want_feature_grad: bool,
    ) -> Option<Vec<T>> {
        let channels = self.dense_w.shape()[1];
        let (h, w) = (trace.ph, trace.pw);
        let plane = T::of((h * w) as f64);
        let n_conv = self.convs.len();
        let mut dgap = vec![T::zero(); channels];
        if let Some(g) = grads.as_deref_mut() {
            let gap: Vec<T> = (0..channels)
                .map(|c| {
                    T::of(
                        trace.pooled[c * h * w..(c + 1) * h * w]
                            .iter()
                            .map(|v| v.f64())
                            .sum::<f64>()
                            / (h * w) as f64,
                    )
                })
                .collect();
            let dw = g.entries[2 * n_conv].1.data_mut();
            for (j, &d) in dlogits.iter().enumerate() {
                for c in 0..channels {
                    dw[j * channels + c] += d * gap[c];
                }
            }
            let db = g.entries[2 * n_conv + 1].1.data_mut();
            for (j, &d) in dlogits.iter().enumerate() {
                db[j] += d;
            }
        }
        for (j, &d) in dlogits.iter().enumerate() {
            for c in 0..channels {
                dgap[c] += d * self.dense_w.data()[j * channels + c];
            }
        }
        let mut dx: Vec<T> = dgap
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / plane, h * w))
            .collect();
        let mut feature_grad = None;
        for (i, (conv, ct)) in self.convs.iter().zip(&trace.convs).enumerate().rev() {
            let mut da = match &ct.pool_idx {
                Some(idx) => layers::maxpool2_backward(&dx, idx, ct.output.len()),
                None => dx,
            };
            if want_feature_grad && i + 1 == n_conv {
                feature_grad = Some(da.clone());
                if grads.is_none() {
                    return feature_grad;
                }
            }
            layers::relu_backward_inplace(&ct.output, &mut da);
            let (dw, db) = match grads.as_deref_mut() {
                Some(g) => {
                    let (a, b) = g.entries.split_at_mut(2 * i + 1);
                    (a[2 * i].1.data_mut(), b[0].1.data_mut())
                }
                None => unreachable!("param grads are requested whenever feature grads are not"),
            };
            match conv.backward(&ct.input, ct.h, ct.w, &da, dw, db, i > 0) {
                Some(din) => dx = din,
                None => break,
            }
        }
        feature_grad
    }

    /// Activations of the last conv layer and the gradient of each image's predicted-class
    /// logit with respect to them.
    pub fn final_conv_attribution(&self, batch: &ImageBatch<T>) -> Result<Vec<ConvAttribution<T>>> {
        if !self.has_conv() {
            return Err(Error::Unsupported(
                "classifier has no conv layer for class activation maps".into(),
            ));
        }
        self.check_input(batch)?;
        let (h0, w0) = (batch.height(), batch.width());
        let k = self.arch.classes;
        (0..batch.len())
            .map(|i| {
                let trace = self.forward_image(batch.image(i), h0, w0, true);
                let predicted = argmax(&trace.logits);
                let mut onehot = vec![T::zero(); k];
                onehot[predicted] = T::one();
                let grads = self
                    .backward_image(&trace, &onehot, None, true)
                    .expect("feature gradient requested");
                let last = trace.convs.last().expect("has conv");
                Ok(ConvAttribution {
                    features: last.output.clone(),
                    grads,
                    channels: self.convs.last().expect("has conv").cout(),
                    h: last.h,
                    w: last.w,
                    predicted,
                })
            })
            .collect()
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits.data().chunks(k).map(argmax).collect()
}

impl<T: Scalar> Parameterized<T> for ClassifierModel<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        out.push(("dense.weight".into(), &self.dense_w));
        out.push(("dense.bias".into(), &self.dense_b));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.weight"), &mut c.weight));
            out.push((format!("conv{i}.bias"), &mut c.bias));
        }
        out.push(("dense.weight".into(), &mut self.dense_w));
        out.push(("dense.bias".into(), &mut self.dense_b));
        out
    }
}
