//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset   | size | content                                  |
//! |----------|------|------------------------------------------|
//! | 0        | 8    | magic `LGDTCKPT`                         |
//! | 8        | 4    | format version (`u32`, currently 1)      |
//! | 12       | 4    | manifest length `M` in bytes (`u32`)     |
//! | 16       | M    | UTF-8 JSON manifest                      |
//! | 16 + M   | 4 N  | `N` `f32` values, layer by layer         |
//!
//! The manifest records the architecture, the class count, the target
//! normalization and one entry per layer. Payload tensors follow the layer
//! order; within a layer the weight precedes the bias. A factored trunk layer
//! stores its first factor weight, then its second factor weight and bias.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::{ConvLayer, Linear};
use super::model::{ArchSpec, FcLayer, NetworkParams};

pub const MAGIC: &[u8; 8] = b"LGDTCKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("manifest inconsistent with architecture: {0}")]
    Shape(String),
    #[error("payload holds {got} bytes, manifest requires {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("payload contains a non-finite value")]
    NonFinite,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerEntry {
    Conv { in_channels: usize, out_channels: usize, kernel: usize },
    Fc { in_dim: usize, out_dim: usize },
    FcFactored { in_dim: usize, rank: usize, out_dim: usize },
    ClsHead { in_dim: usize, out_dim: usize },
    RegHead { in_dim: usize, out_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    arch: ArchSpec,
    num_classes: usize,
    target_mean: [f64; 4],
    target_std: [f64; 4],
    layers: Vec<LayerEntry>,
}

pub fn encode_checkpoint(params: &NetworkParams<f32>) -> Vec<u8> {
    let mut layers = Vec::new();
    for c in &params.conv {
        layers.push(LayerEntry::Conv {
            in_channels: c.in_channels,
            out_channels: c.spec.out_channels,
            kernel: c.spec.kernel,
        });
    }
    let mut payload: Vec<&[f32]> = params.conv.iter().flat_map(|c| [&c.weight[..], &c.bias[..]]).collect();
    for l in &params.trunk {
        match l {
            FcLayer::Dense(d) => {
                layers.push(LayerEntry::Fc { in_dim: d.in_dim, out_dim: d.out_dim });
                payload.extend([&d.weight[..], &d.bias[..]]);
            }
            FcLayer::Factored { first, second } => {
                layers.push(LayerEntry::FcFactored { in_dim: first.in_dim, rank: first.out_dim, out_dim: second.out_dim });
                payload.extend([&first.weight[..], &second.weight[..], &second.bias[..]]);
            }
        }
    }
    let (c, r) = (&params.cls_head, &params.reg_head);
    layers.push(LayerEntry::ClsHead { in_dim: c.in_dim, out_dim: c.out_dim });
    layers.push(LayerEntry::RegHead { in_dim: r.in_dim, out_dim: r.out_dim });
    payload.extend([&c.weight[..], &c.bias[..], &r.weight[..], &r.bias[..]]);

    let manifest = Manifest {
        arch: params.arch.clone(),
        num_classes: params.num_classes,
        target_mean: params.target_mean,
        target_std: params.target_std,
        layers,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let n: usize = payload.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload.into_iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn mul(a: usize, b: usize) -> Result<usize, CheckpointError> {
    a.checked_mul(b).ok_or_else(|| CheckpointError::Shape("tensor size overflows".into()))
}

/// Checks the manifest against its architecture; returns payload tensor sizes.
fn tensor_sizes(m: &Manifest) -> Result<Vec<usize>, CheckpointError> {
    let shape = |msg: String| Err(CheckpointError::Shape(msg));
    m.arch.validate().map_err(|e| CheckpointError::Shape(e.to_string()))?;
    if m.num_classes == 0 {
        return shape("num_classes must be positive".into());
    }
    if m.target_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || m.target_mean.iter().any(|v| !v.is_finite()) {
        return shape("target normalization must be finite with positive std".into());
    }
    let nc = m.arch.conv.len();
    let nf = m.arch.fc_hidden.len();
    if m.layers.len() != nc + nf + 2 {
        return shape(format!("expected {} layers, found {}", nc + nf + 2, m.layers.len()));
    }
    let mut sizes = Vec::new();
    let mut in_c = 3;
    for (spec, entry) in m.arch.conv.iter().zip(&m.layers) {
        match *entry {
            LayerEntry::Conv { in_channels, out_channels, kernel }
                if in_channels == in_c && out_channels == spec.out_channels && kernel == spec.kernel =>
            {
                sizes.push(mul(mul(out_channels, in_channels)?, mul(kernel, kernel)?)?);
                sizes.push(out_channels);
                in_c = out_channels;
            }
            ref other => return shape(format!("conv entry {other:?} does not match the architecture")),
        }
    }
    let cells: usize = m.arch.pooling.grids().iter().map(|(h, w)| h * w).sum();
    let mut dim = mul(in_c, cells)?;
    for (&hidden, entry) in m.arch.fc_hidden.iter().zip(&m.layers[nc..]) {
        match *entry {
            LayerEntry::Fc { in_dim, out_dim } if in_dim == dim && out_dim == hidden => {
                sizes.push(mul(out_dim, in_dim)?);
                sizes.push(out_dim);
            }
            LayerEntry::FcFactored { in_dim, rank, out_dim } if in_dim == dim && out_dim == hidden && rank > 0 => {
                sizes.push(mul(rank, in_dim)?);
                sizes.push(mul(out_dim, rank)?);
                sizes.push(out_dim);
            }
            ref other => return shape(format!("trunk entry {other:?} does not match the architecture")),
        }
        dim = hidden;
    }
    let classes = m.num_classes;
    match (&m.layers[nc + nf], &m.layers[nc + nf + 1]) {
        (LayerEntry::ClsHead { in_dim: a, out_dim: ca }, LayerEntry::RegHead { in_dim: b, out_dim: rb })
            if *a == dim && *b == dim && Some(*ca) == classes.checked_add(1) && Some(*rb) == classes.checked_mul(4) =>
        {
            sizes.extend([mul(*ca, dim)?, *ca, mul(*rb, dim)?, *rb]);
        }
        _ => return shape("head entries must be cls_head (C + 1) then reg_head (4 C)".into()),
    }
    Ok(sizes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams<f32>, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC { CheckpointError::BadMagic } else { CheckpointError::Truncated });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mlen = u32_at(bytes, 12) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() < mlen {
        return Err(CheckpointError::Truncated);
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..mlen]).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let sizes = tensor_sizes(&manifest)?;
    let payload = &body[mlen..];
    let expected = sizes
        .iter()
        .try_fold(0usize, |a, &s| a.checked_add(s))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CheckpointError::Shape("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(CheckpointError::PayloadLength { expected, got: payload.len() });
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    if payload.chunks_exact(4).any(|c| !f32::from_le_bytes(c.try_into().expect("4 bytes")).is_finite()) {
        return Err(CheckpointError::NonFinite);
    }
    let mut sizes = sizes.into_iter();
    let mut take = || -> Vec<f32> { values.by_ref().take(sizes.next().expect("size per tensor")).collect() };

    let arch = manifest.arch.clone();
    let mut conv = Vec::new();
    for (spec, entry) in arch.conv.iter().zip(&manifest.layers) {
        let LayerEntry::Conv { in_channels, .. } = *entry else { unreachable!("validated") };
        let weight = take();
        let bias = take();
        conv.push(ConvLayer { spec: *spec, in_channels, weight, bias });
    }
    let mut trunk = Vec::new();
    for entry in &manifest.layers[conv.len()..conv.len() + arch.fc_hidden.len()] {
        trunk.push(match *entry {
            LayerEntry::Fc { in_dim, out_dim } => FcLayer::Dense(Linear { in_dim, out_dim, weight: take(), bias: take() }),
            LayerEntry::FcFactored { in_dim, rank, out_dim } => FcLayer::Factored {
                first: Linear { in_dim, out_dim: rank, weight: take(), bias: vec![0.0; rank] },
                second: Linear { in_dim: rank, out_dim, weight: take(), bias: take() },
            },
            _ => unreachable!("validated"),
        });
    }
    let dim = trunk.last().map_or(arch.pooled_len(), |l| l.out_dim());
    let nc = manifest.num_classes;
    let cls_head = Linear { in_dim: dim, out_dim: nc + 1, weight: take(), bias: take() };
    let reg_head = Linear { in_dim: dim, out_dim: 4 * nc, weight: take(), bias: take() };
    Ok(NetworkParams {
        arch,
        num_classes: nc,
        conv,
        trunk,
        cls_head,
        reg_head,
        target_mean: manifest.target_mean,
        target_std: manifest.target_std,
    })
}

pub fn save_checkpoint(params: &NetworkParams<f32>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params))
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams<f32>, CheckpointError> {
    let bytes =
        std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> NetworkParams<f32> {
        let mut p = NetworkParams::init(&ArchSpec::default(), 3, 4).unwrap();
        p.target_mean = [0.1, -0.2, 0.05, 0.0];
        p.target_std = [0.2, 0.2, 0.3, 0.25];
        p
    }

    #[test]
    fn round_trip() {
        let p = params();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
    }

    #[test]
    fn factored_round_trip() {
        let mut p = params();
        let d = match &p.trunk[1] {
            FcLayer::Dense(d) => d.clone(),
            _ => unreachable!(),
        };
        p.trunk[1] = FcLayer::Factored {
            first: Linear { in_dim: d.in_dim, out_dim: 8, weight: vec![0.5; 8 * d.in_dim], bias: vec![0.0; 8] },
            second: Linear { in_dim: 8, out_dim: d.out_dim, weight: vec![-0.25; 8 * d.out_dim], bias: d.bias },
        };
        assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_checkpoint(&params());
        assert!(matches!(decode_checkpoint(&bytes[..10]), Err(CheckpointError::Truncated)));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(CheckpointError::PayloadLength { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::NonFinite)));
    }
}
