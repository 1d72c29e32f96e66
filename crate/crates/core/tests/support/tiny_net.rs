//! A tiny network and batch for finite-difference gradient checks.

#![allow(dead_code)]

use logodet::network::{ArchSpec, ConvSpec, GradCheckBatch, NetworkParams, PipelineMode, Pooling, RoiExample, Tensor};
use logodet::rng::stream_rng;
use logodet::{BoundingBox, LogoClassId};
use rand::Rng;

pub fn tiny_arch(linear: bool, mode: PipelineMode) -> ArchSpec {
    let conv = |out_channels| ConvSpec { out_channels, kernel: 3, stride: 1, pad: 1, relu: !linear, pool: !linear };
    ArchSpec {
        conv: vec![conv(4), conv(6)],
        pooling: Pooling::Grid { rows: 2, cols: 2 },
        fc_hidden: vec![16],
        fc_relu: !linear,
        mode,
        warp_size: 12,
    }
}

pub fn batch(seed: u64) -> GradCheckBatch {
    let mut rng = stream_rng(seed, 0);
    let image = Tensor::from_vec(&[3, 16, 16], (0..768).map(|_| rng.random_range(-2.0..2.0)).collect());
    let b = |x0, y0, x1, y1| BoundingBox::new(x0, y0, x1, y1).unwrap();
    let mut t = || Some([0, 1, 2, 3].map(|_| rng.random_range(-1.5..1.5)));
    let rois = vec![
        RoiExample { bbox: b(1.0, 2.0, 13.0, 14.0), label: LogoClassId(1), target: t() },
        RoiExample { bbox: b(4.0, 0.0, 16.0, 9.0), label: LogoClassId(2), target: t() },
        RoiExample { bbox: b(0.0, 0.0, 8.0, 8.0), label: LogoClassId::BACKGROUND, target: None },
        RoiExample { bbox: b(6.0, 5.0, 15.0, 16.0), label: LogoClassId::BACKGROUND, target: None },
    ];
    GradCheckBatch { image, rois, lambda: 1.0 }
}

pub fn params(linear: bool, mode: PipelineMode, seed: u64) -> NetworkParams<f64> {
    let mut p = NetworkParams::<f64>::init(&tiny_arch(linear, mode), 2, seed).unwrap();
    // Heads start tiny; scale them so every path carries gradient.
    let mut rng = stream_rng(seed, 99);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    p
}

