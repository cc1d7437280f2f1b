//! Per-image layer kernels. Activations are laid out `C×H×W`, row-major.

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Same-padded, stride-1 square convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Uniform init with bound `gain / sqrt(fan_in)`; zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = gain / fan_in.sqrt();
        let weight = (0..cout * cin * k * k)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Conv2d {
            weight: Tensor::from_vec(&[cout, cin, k, k], weight).expect("consistent shape"),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn pad(&self, input: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
        let p = self.kernel() / 2;
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let mut out = vec![T::zero(); self.cin() * hp * wp];
        for c in 0..self.cin() {
            for y in 0..h {
                let src = &input[(c * h + y) * w..(c * h + y + 1) * w];
                let dst = (c * hp + y + p) * wp + p;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        (out, hp, wp)
    }

    pub fn forward(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        debug_assert_eq!(input.len(), self.cin() * h * w);
        let k = self.kernel();
        let (padded, hp, wp) = self.pad(input, h, w);
        let weight = self.weight.data();
        let mut out = vec![T::zero(); self.cout() * h * w];
        for co in 0..self.cout() {
            let plane = &mut out[co * h * w..(co + 1) * h * w];
            plane.fill(self.bias.data()[co]);
            for ci in 0..self.cin() {
                let src = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((co * self.cin() + ci) * k + ky) * k + kx];
                        for y in 0..h {
                            let row = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                            let dst = &mut plane[y * w..(y + 1) * w];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `dw`/`db`; returns the input gradient if requested.
    pub fn backward(
        &self,
        input: &[T],
        h: usize,
        w: usize,
        dout: &[T],
        dw: &mut [T],
        db: &mut [T],
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let k = self.kernel();
        let p = k / 2;
        let (padded, hp, wp) = self.pad(input, h, w);
        let weight = self.weight.data();
        let mut dpad = if want_input_grad {
            vec![T::zero(); self.cin() * hp * wp]
        } else {
            Vec::new()
        };
        for co in 0..self.cout() {
            let g = &dout[co * h * w..(co + 1) * h * w];
            db[co] += g.iter().copied().sum::<T>();
            for ci in 0..self.cin() {
                let src = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((co * self.cin() + ci) * k + ky) * k + kx;
                        let mut acc = T::zero();
                        for y in 0..h {
                            let row = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                            let grow = &g[y * w..(y + 1) * w];
                            for (&s, &d) in row.iter().zip(grow) {
                                acc += s * d;
                            }
                        }
                        dw[widx] += acc;
                        if want_input_grad {
                            let wv = weight[widx];
                            let dst_plane = &mut dpad[ci * hp * wp..(ci + 1) * hp * wp];
                            for y in 0..h {
                                let grow = &g[y * w..(y + 1) * w];
                                let dst = &mut dst_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut din = vec![T::zero(); self.cin() * h * w];
        for c in 0..self.cin() {
            for y in 0..h {
                let src = (c * hp + y + p) * wp + p;
                din[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&dpad[src..src + w]);
            }
        }
        Some(din)
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose forward ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 stride-2 max pooling (floor on odd sizes). Returns output and argmax flat indices.
pub fn maxpool2<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best = (ch * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                    // first maximum wins on ties
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Scalar>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (&g, &i) in dout.iter().zip(argmax) {
        din[i as usize] += g;
    }
    din
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                out[(ch * ho + y) * wo + x] = input[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut din = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                din[(ch * h + y / 2) * w + x / 2] += dout[(ch * ho + y) * wo + x];
            }
        }
    }
    din
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Bilinear resampling of one plane with half-pixel centres and edge clamping.
pub fn bilinear_resize<T: Scalar>(src: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(ho * wo);
    let sy = h as f64 / ho as f64;
    let sx = w as f64 / wo as f64;
    let coord = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, c - lo as f64)
    };
    for y in 0..ho {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..wo {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = src[y0 * w + x0].f64() * (1.0 - fx) + src[y0 * w + x1].f64() * fx;
            let bot = src[y1 * w + x0].f64() * (1.0 - fx) + src[y1 * w + x1].f64() * fx;
            out.push(T::of(top * (1.0 - fy) + bot * fy));
        }
    }
    out
}
