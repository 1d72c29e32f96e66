//! Truncated-SVD compression of fully connected trunk layers.
//!
//! A dense `u x v` layer `y = W x + b` becomes `y = U_t (S_t V_t^T x) + b`,
//! costing `t (u + v)` instead of `u v` multiply-accumulates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{FcLayer, Linear, NetworkParams};

#[derive(Debug, Error, PartialEq)]
pub enum SvdError {
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("invalid rank specification: {0}")]
    InvalidSpec(String),
    #[error("matrix data has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
}

/// Thin SVD `A = U diag(S) V^T` with singular values in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub rows: usize,
    pub cols: usize,
    /// `rows x k`, row-major, `k = min(rows, cols)`.
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `k x cols`, row-major.
    pub vt: Vec<f64>,
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// One-sided Jacobi on the columns of a `m x n` matrix with `m >= n`.
/// Returns `(U m x n, S, V n x n)` unsorted, column-major for `U` and `V`.
fn jacobi_tall(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // Column-major working copies.
    let mut u = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            u[j * m + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (cp, cq) = (&u[p * m..(p + 1) * m], &u[q * m..(q + 1) * m]);
                let alpha: f64 = cp.iter().map(|x| x * x).sum();
                let beta: f64 = cq.iter().map(|x| x * x).sum();
                let gamma: f64 = cp.iter().zip(cq).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| u[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    for (j, &sj) in sigma.iter().enumerate() {
        if sj > 0.0 {
            u[j * m..(j + 1) * m].iter_mut().for_each(|x| *x /= sj);
        }
    }
    (u, sigma, v)
}

fn rotate(cols: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q * len);
    let cp = &mut lo[p * len..(p + 1) * len];
    let cq = &mut hi[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Thin SVD of a row-major `rows x cols` matrix.
pub fn svd(a: &[f64], rows: usize, cols: usize) -> Result<Svd, SvdError> {
    if a.len() != rows * cols {
        return Err(SvdError::Shape { expected: rows * cols, got: a.len() });
    }
    let transpose = rows < cols;
    let (m, n) = if transpose { (cols, rows) } else { (rows, cols) };
    let work: Vec<f64> = if transpose {
        (0..cols).flat_map(|j| (0..rows).map(move |i| a[i * cols + j])).collect()
    } else {
        a.to_vec()
    };
    let (uc, sigma, vc) = jacobi_tall(&work, m, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let k = n;
    let s: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    // Left vectors of the worked matrix live in `uc` (m x n), right in `vc` (n x n).
    let left = |i: usize, r: usize| uc[order[r] * m + i];
    let right = |i: usize, r: usize| vc[order[r] * n + i];
    let (u, vt) = if transpose {
        // A^T = Uw S Vw^T  =>  A = Vw S Uw^T.
        let u = (0..rows).flat_map(|i| (0..k).map(move |r| right(i, r))).collect();
        let vt = (0..k).flat_map(|r| (0..cols).map(move |j| left(j, r))).collect();
        (u, vt)
    } else {
        let u = (0..rows).flat_map(|i| (0..k).map(move |r| left(i, r))).collect();
        let vt = (0..k).flat_map(|r| (0..cols).map(move |j| right(j, r))).collect();
        (u, vt)
    };
    Ok(Svd { rows, cols, u, s, vt })
}

/// Two-factor replacement of a dense `u x v` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub rank: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    /// `t x v`: `S_t V_t^T`.
    pub first: Vec<f64>,
    /// `u x t`: `U_t`.
    pub second: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CompressedLayer {
    /// `second * first`, the rank-t approximation of the original weight.
    pub fn reconstruct(&self) -> Vec<f64> {
        let (u, v, t) = (self.out_dim, self.in_dim, self.rank);
        let mut w = vec![0.0; u * v];
        for i in 0..u {
            for r in 0..t {
                let a = self.second[i * t + r];
                for j in 0..v {
                    w[i * v + j] += a * self.first[r * v + j];
                }
            }
        }
        w
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (u, v, t) = (self.out_dim, self.in_dim, self.rank);
        let mid: Vec<f64> = (0..t).map(|r| (0..v).map(|j| self.first[r * v + j] * x[j]).sum()).collect();
        (0..u).map(|i| (0..t).map(|r| self.second[i * t + r] * mid[r]).sum::<f64>() + self.bias[i]).collect()
    }
}

/// Compresses `w` (`u x v`, row-major) to rank `t`.
pub fn compress_fc(w: &[f64], u: usize, v: usize, bias: &[f64], t: usize) -> Result<CompressedLayer, SvdError> {
    let d = svd(w, u, v)?;
    compress_from_svd(&d, bias, t)
}

fn compress_from_svd(d: &Svd, bias: &[f64], t: usize) -> Result<CompressedLayer, SvdError> {
    let (u, v) = (d.rows, d.cols);
    let k = d.s.len();
    if t == 0 || t > k {
        return Err(SvdError::RankOutOfRange { rank: t, max: k });
    }
    let first = (0..t).flat_map(|r| (0..v).map(move |j| d.s[r] * d.vt[r * v + j])).collect();
    let second = (0..u).flat_map(|i| (0..t).map(move |r| d.u[i * k + r])).collect();
    Ok(CompressedLayer { rank: t, in_dim: v, out_dim: u, first, second, bias: bias.to_vec() })
}

/// Relative Frobenius error `||A - B||_F / ||A||_F`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Multiply-accumulates of a dense `u x v` layer.
pub fn fc_flops(u: usize, v: usize) -> u64 {
    (u as u64) * (v as u64)
}

/// Multiply-accumulates of the rank-`t` factorization.
pub fn compressed_flops(u: usize, v: usize, t: usize) -> u64 {
    (t as u64) * (u as u64 + v as u64)
}

/// How the retained rank is chosen per layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RankSpec {
    /// Fixed rank, capped at the layer's full rank.
    Absolute(usize),
    /// Fraction of the full rank `min(u, v)`, rounded up.
    RankFraction(f64),
    /// Smallest rank whose squared singular values retain this energy fraction.
    Energy(f64),
}

impl RankSpec {
    pub fn validate(&self) -> Result<(), SvdError> {
        match *self {
            RankSpec::Absolute(0) => Err(SvdError::InvalidSpec("absolute rank must be positive".into())),
            RankSpec::RankFraction(f) | RankSpec::Energy(f) if !(f > 0.0 && f <= 1.0) => {
                Err(SvdError::InvalidSpec(format!("fraction {f} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Rank for a spectrum sorted in descending order.
    pub fn resolve(&self, s: &[f64]) -> usize {
        let k = s.len();
        match *self {
            RankSpec::Absolute(t) => t.min(k),
            RankSpec::RankFraction(f) => ((f * k as f64 - 1e-9).ceil() as usize).clamp(1, k),
            RankSpec::Energy(f) => {
                let total: f64 = s.iter().map(|x| x * x).sum();
                let mut acc = 0.0;
                for (i, x) in s.iter().enumerate() {
                    acc += x * x;
                    if acc >= f * total * (1.0 - 1e-12) {
                        return i + 1;
                    }
                }
                k.max(1)
            }
        }
    }
}

/// What happened to one trunk layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub rank: usize,
    pub dense_flops: u64,
    pub compressed_flops: u64,
    pub relative_error: f64,
}

/// Replaces every dense trunk layer by its truncated factorization.
pub fn compress_network(
    params: &NetworkParams<f32>,
    spec: RankSpec,
) -> Result<(NetworkParams<f32>, Vec<LayerReport>), SvdError> {
    spec.validate()?;
    let mut out = params.clone();
    let mut reports = Vec::new();
    for (i, layer) in out.trunk.iter_mut().enumerate() {
        let FcLayer::Dense(d) = layer else { continue };
        let w: Vec<f64> = d.weight.iter().map(|&x| x as f64).collect();
        let bias: Vec<f64> = d.bias.iter().map(|&x| x as f64).collect();
        let dec = svd(&w, d.out_dim, d.in_dim)?;
        let t = spec.resolve(&dec.s);
        let c = compress_from_svd(&dec, &bias, t)?;
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        reports.push(LayerReport {
            layer: i,
            out_dim: d.out_dim,
            in_dim: d.in_dim,
            rank: t,
            dense_flops: fc_flops(d.out_dim, d.in_dim),
            compressed_flops: compressed_flops(d.out_dim, d.in_dim, t),
            relative_error: relative_error(&w, &c.reconstruct()),
        });
        *layer = FcLayer::Factored {
            first: Linear { in_dim: d.in_dim, out_dim: t, weight: to32(&c.first), bias: vec![0.0; t] },
            second: Linear { in_dim: t, out_dim: d.out_dim, weight: to32(&c.second), bias: to32(&c.bias) },
        };
    }
    Ok((out, reports))
}
