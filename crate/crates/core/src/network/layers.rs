//! Convolution, max-pooling and fully connected layers with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_at_b, Real, Tensor};

/// One convolution stage: conv, optional ReLU, optional 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
    pub pool: bool,
}

impl ConvSpec {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let pad2 = self.pad.checked_mul(2)?;
        let (hp, wp) = (h.checked_add(pad2)?, w.checked_add(pad2)?);
        if self.stride == 0 || hp < self.kernel || wp < self.kernel {
            return None;
        }
        let (mut ho, mut wo) = ((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1);
        if self.pool {
            ho /= 2;
            wo /= 2;
        }
        (ho > 0 && wo > 0).then_some((ho, wo))
    }

    pub fn total_stride(&self) -> usize {
        self.stride * if self.pool { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub in_channels: usize,
    /// `out_channels x (in_channels * kernel * kernel)`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Debug)]
pub struct ConvCache<T> {
    in_shape: (usize, usize, usize),
    conv_hw: (usize, usize),
    cols: Vec<T>,
    /// Activation after ReLU (before pooling).
    activ: Vec<T>,
    pool_argmax: Vec<u32>,
}

impl<T: Real> ConvCache<T> {
    /// Folds the ReLU on/off pattern and pooling choices into `acc`.
    pub(crate) fn fold_pattern(&self, relu: bool, acc: &mut u64) {
        if relu {
            for a in &self.activ {
                fold(acc, (*a > T::zero()) as u64);
            }
        }
        for i in &self.pool_argmax {
            fold(acc, *i as u64);
        }
    }
}

/// FNV-style mixing used for activation-pattern fingerprints.
pub(crate) fn fold(acc: &mut u64, v: u64) {
    *acc = (*acc ^ v).wrapping_mul(0x0100_0000_01b3);
}

impl<T: Real> ConvLayer<T> {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.spec.kernel * self.spec.kernel
    }

    fn im2col(&self, input: &Tensor<T>, ho: usize, wo: usize) -> Vec<T> {
        let (c_in, h, w) = input.chw();
        let (k, s, p) = (self.spec.kernel, self.spec.stride, self.spec.pad as isize);
        let n = ho * wo;
        let mut cols = vec![T::zero(); self.patch_len() * n];
        for c in 0..c_in {
            let plane = &input.data[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], in_shape: (usize, usize, usize), ho: usize, wo: usize) -> Tensor<T> {
        let (c_in, h, w) = in_shape;
        let (k, s, p) = (self.spec.kernel, self.spec.stride, self.spec.pad as isize);
        let n = ho * wo;
        let mut out = Tensor::zeros(&[c_in, h, w]);
        for c in 0..c_in {
            let plane = &mut out.data[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Forward pass. The cache is `None` when `keep` is false.
    pub fn forward(&self, input: &Tensor<T>, keep: bool) -> (Tensor<T>, Option<ConvCache<T>>) {
        let (c_in, h, w) = input.chw();
        assert_eq!(c_in, self.in_channels, "conv input channels");
        let (k, s, p) = (self.spec.kernel, self.spec.stride, self.spec.pad);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let n = ho * wo;
        let o = self.spec.out_channels;
        let cols = self.im2col(input, ho, wo);

        let mut out = vec![T::zero(); o * n];
        for (ch, b) in self.bias.iter().enumerate() {
            out[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        matmul(o, self.patch_len(), n, &self.weight, &cols, false, T::one(), &mut out);
        if self.spec.relu {
            out.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
        }

        let (result, argmax) = if self.spec.pool {
            let (hp, wp) = (ho / 2, wo / 2);
            let mut pooled = vec![T::zero(); o * hp * wp];
            let mut arg = vec![0u32; o * hp * wp];
            for ch in 0..o {
                let plane = &out[ch * n..(ch + 1) * n];
                for py in 0..hp {
                    for px in 0..wp {
                        let mut best = 2 * py * wo + 2 * px;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = (2 * py + dy) * wo + 2 * px + dx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                        let dst = (ch * hp + py) * wp + px;
                        pooled[dst] = plane[best];
                        arg[dst] = best as u32;
                    }
                }
            }
            (Tensor::from_vec(&[o, hp, wp], pooled), arg)
        } else {
            (Tensor::from_vec(&[o, ho, wo], out.clone()), Vec::new())
        };

        let cache = keep.then(|| ConvCache {
            in_shape: (c_in, h, w),
            conv_hw: (ho, wo),
            cols,
            activ: if self.spec.pool || self.spec.relu { out } else { Vec::new() },
            pool_argmax: argmax,
        });
        (result, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient when `want_input`.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let (ho, wo) = cache.conv_hw;
        let n = ho * wo;
        let o = self.spec.out_channels;
        let mut g = if self.spec.pool {
            let (hp, wp) = (ho / 2, wo / 2);
            let mut g = vec![T::zero(); o * n];
            for ch in 0..o {
                for i in 0..hp * wp {
                    let src = ch * hp * wp + i;
                    g[ch * n + cache.pool_argmax[src] as usize] += grad_out.data[src];
                }
            }
            g
        } else {
            grad_out.data.clone()
        };
        if self.spec.relu {
            for (gv, a) in g.iter_mut().zip(&cache.activ) {
                if *a <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        for ch in 0..o {
            grad_b[ch] += g[ch * n..(ch + 1) * n].iter().copied().sum::<T>();
        }
        // dW (o x patch) += g (o x n) * cols^T
        let patch = self.patch_len();
        T::gemm(o, n, patch, T::one(), &g, n as isize, 1, &cache.cols, 1, n as isize, T::one(), grad_w, patch as isize, 1);
        if !want_input {
            return None;
        }
        let mut dcols = vec![T::zero(); patch * n];
        matmul_at_b(patch, o, n, &self.weight, &g, &mut dcols);
        Some(self.col2im(&dcols, cache.in_shape, ho, wo))
    }
}

/// Dense layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, weight: vec![T::zero(); in_dim * out_dim], bias: vec![T::zero(); out_dim] }
    }

    /// Batched forward over `rows` inputs stored row-major.
    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.out_dim];
        for r in 0..rows {
            y[r * self.out_dim..(r + 1) * self.out_dim].copy_from_slice(&self.bias);
        }
        matmul(rows, self.in_dim, self.out_dim, x, &self.weight, true, T::one(), &mut y);
        y
    }

    /// Forward without the bias term.
    pub fn forward_no_bias(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.out_dim];
        matmul(rows, self.in_dim, self.out_dim, x, &self.weight, true, T::zero(), &mut y);
        y
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward(&self, x: &[T], grad_y: &[T], rows: usize, grad_w: &mut [T], grad_b: &mut [T]) -> Vec<T> {
        for r in 0..rows {
            for (gb, gy) in grad_b.iter_mut().zip(&grad_y[r * self.out_dim..(r + 1) * self.out_dim]) {
                *gb += *gy;
            }
        }
        matmul_at_b(self.out_dim, rows, self.in_dim, grad_y, x, grad_w);
        let mut dx = vec![T::zero(); rows * self.in_dim];
        matmul(rows, self.out_dim, self.in_dim, grad_y, &self.weight, false, T::zero(), &mut dx);
        dx
    }
}

pub fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}
