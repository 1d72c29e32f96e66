//! Detector parameters: conv backbone, fully connected trunk and the two heads.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{relu_in_place, ConvCache, ConvLayer, ConvSpec, Linear};
use super::pool::Pooling;
use super::tensor::{Real, Tensor};
use super::NetworkError;
use crate::rng::stream_rng;

/// Upper bounds on architecture sizes; keep shape arithmetic overflow-free.
const MAX_WIDTH: usize = 65536;
const MAX_EXTENT: usize = 64;
const MAX_WARP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Warp every region to a fixed crop and run the whole network on it.
    PerRegion,
    /// Run the backbone once per image and pool regions from the shared map.
    SharedMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub conv: Vec<ConvSpec>,
    pub pooling: Pooling,
    pub fc_hidden: Vec<usize>,
    /// ReLU after each trunk layer.
    pub fc_relu: bool,
    pub mode: PipelineMode,
    /// Side of the square crop used in per-region mode.
    pub warp_size: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        let conv = |out_channels, pool| ConvSpec { out_channels, kernel: 3, stride: 1, pad: 1, relu: true, pool };
        ArchSpec {
            conv: vec![conv(16, true), conv(32, true), conv(64, true), conv(64, false)],
            pooling: Pooling::default(),
            fc_hidden: vec![256, 256],
            fc_relu: true,
            mode: PipelineMode::SharedMap,
            warp_size: 32,
        }
    }
}

impl ArchSpec {
    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(ConvSpec::total_stride).product()
    }

    pub fn feature_channels(&self) -> usize {
        self.conv.last().map_or(3, |c| c.out_channels)
    }

    pub fn pooled_len(&self) -> usize {
        self.feature_channels() * self.pooling.cells()
    }

    /// Spatial size of the feature map for an `h x w` input.
    pub fn feature_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.conv.iter().try_fold((h, w), |(h, w), c| c.output_hw(h, w))
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidArch(m));
        if self.conv.is_empty() {
            return bad("at least one conv layer is required".into());
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("conv layer {i} has a zero dimension"));
            }
            if c.out_channels > MAX_WIDTH || c.kernel > MAX_EXTENT || c.stride > MAX_EXTENT || c.pad > MAX_EXTENT {
                return bad(format!("conv layer {i} exceeds the supported size"));
            }
        }
        if !self.pooling.is_valid() {
            return bad("pooling grids must be non-empty".into());
        }
        if self.pooling.grids().iter().any(|&(h, w)| h > MAX_EXTENT || w > MAX_EXTENT) {
            return bad("pooling grids exceed the supported size".into());
        }
        if self.fc_hidden.iter().any(|&h| h == 0 || h > MAX_WIDTH) {
            return bad("fc layers need between 1 and 65536 units".into());
        }
        if self.warp_size > MAX_WARP {
            return bad(format!("warp size {} exceeds {MAX_WARP}", self.warp_size));
        }
        if self.warp_size == 0 || self.feature_hw(self.warp_size, self.warp_size).is_none() {
            return bad(format!("warp size {} is too small for the backbone", self.warp_size));
        }
        Ok(())
    }
}

/// Trunk layer: dense, or two stacked factors from a truncated SVD.
#[derive(Debug, Clone, PartialEq)]
pub enum FcLayer<T> {
    Dense(Linear<T>),
    /// `second (u x t)` applied after `first (t x v)`; only `second` carries a bias.
    Factored { first: Linear<T>, second: Linear<T> },
}

impl<T: Real> FcLayer<T> {
    pub fn in_dim(&self) -> usize {
        match self {
            FcLayer::Dense(l) => l.in_dim,
            FcLayer::Factored { first, .. } => first.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            FcLayer::Dense(l) => l.out_dim,
            FcLayer::Factored { second, .. } => second.out_dim,
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        match self {
            FcLayer::Dense(l) => l.forward(x, rows),
            FcLayer::Factored { first, second } => second.forward(&first.forward_no_bias(x, rows), rows),
        }
    }

    fn tensor_count(&self) -> usize {
        match self {
            FcLayer::Dense(_) => 2,
            FcLayer::Factored { .. } => 4,
        }
    }
}

/// Everything the detector learns, plus the regression-target normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: ArchSpec,
    /// Number of logo classes C; the classifier emits C + 1 scores.
    pub num_classes: usize,
    pub conv: Vec<ConvLayer<T>>,
    pub trunk: Vec<FcLayer<T>>,
    pub cls_head: Linear<T>,
    pub reg_head: Linear<T>,
    pub target_mean: [f64; 4],
    pub target_std: [f64; 4],
}

/// Per-tensor gradients aligned with [`NetworkParams::tensors`].
pub type Grads<T> = Vec<Vec<T>>;

fn gaussian<T: Real>(n: usize, std: f64, seed: u64, stream: u64) -> Vec<T> {
    let mut rng = stream_rng(seed, stream);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
}

impl<T: Real> NetworkParams<T> {
    /// He-scaled Gaussian conv/trunk weights, small Gaussian heads, zero biases.
    pub fn init(arch: &ArchSpec, num_classes: usize, seed: u64) -> Result<Self, NetworkError> {
        arch.validate()?;
        if num_classes == 0 {
            return Err(NetworkError::InvalidArch("need at least one logo class".into()));
        }
        let mut stream = 0u64;
        let mut next = || {
            stream += 1;
            stream
        };
        let mut in_c = 3;
        let mut conv = Vec::new();
        for spec in &arch.conv {
            let fan_in = in_c * spec.kernel * spec.kernel;
            conv.push(ConvLayer {
                spec: *spec,
                in_channels: in_c,
                weight: gaussian(spec.out_channels * fan_in, (2.0 / fan_in as f64).sqrt(), seed, next()),
                bias: vec![T::zero(); spec.out_channels],
            });
            in_c = spec.out_channels;
        }
        let mut dim = arch.pooled_len();
        let mut trunk = Vec::new();
        for &h in &arch.fc_hidden {
            trunk.push(FcLayer::Dense(Linear {
                in_dim: dim,
                out_dim: h,
                weight: gaussian(h * dim, (2.0 / dim as f64).sqrt(), seed, next()),
                bias: vec![T::zero(); h],
            }));
            dim = h;
        }
        let cls_head = Linear {
            in_dim: dim,
            out_dim: num_classes + 1,
            weight: gaussian((num_classes + 1) * dim, 0.01, seed, next()),
            bias: vec![T::zero(); num_classes + 1],
        };
        let reg_head = Linear {
            in_dim: dim,
            out_dim: 4 * num_classes,
            weight: gaussian(4 * num_classes * dim, 0.001, seed, next()),
            bias: vec![T::zero(); 4 * num_classes],
        };
        Ok(NetworkParams {
            arch: arch.clone(),
            num_classes,
            conv,
            trunk,
            cls_head,
            reg_head,
            target_mean: [0.0; 4],
            target_std: [1.0; 4],
        })
    }

    pub fn stride(&self) -> usize {
        self.arch.total_stride()
    }

    pub fn head_in_dim(&self) -> usize {
        self.trunk.last().map_or(self.arch.pooled_len(), |l| l.out_dim())
    }

    /// Named parameter tensors in a fixed order (checkpoint and gradient order).
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (i, l) in self.trunk.iter().enumerate() {
            match l {
                FcLayer::Dense(d) => {
                    out.push((format!("fc{i}.weight"), &d.weight));
                    out.push((format!("fc{i}.bias"), &d.bias));
                }
                FcLayer::Factored { first, second } => {
                    out.push((format!("fc{i}.first.weight"), &first.weight));
                    out.push((format!("fc{i}.first.bias"), &first.bias));
                    out.push((format!("fc{i}.second.weight"), &second.weight));
                    out.push((format!("fc{i}.second.bias"), &second.bias));
                }
            }
        }
        out.push(("cls.weight".into(), &self.cls_head.weight));
        out.push(("cls.bias".into(), &self.cls_head.bias));
        out.push(("reg.weight".into(), &self.reg_head.weight));
        out.push(("reg.bias".into(), &self.reg_head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for l in &mut self.trunk {
            match l {
                FcLayer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                FcLayer::Factored { first, second } => {
                    out.push(&mut first.weight);
                    out.push(&mut first.bias);
                    out.push(&mut second.weight);
                    out.push(&mut second.bias);
                }
            }
        }
        out.push(&mut self.cls_head.weight);
        out.push(&mut self.cls_head.bias);
        out.push(&mut self.reg_head.weight);
        out.push(&mut self.reg_head.bias);
        out
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.tensors().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Index of the first gradient slot of trunk layer `i`.
    pub(crate) fn trunk_slot(&self, i: usize) -> usize {
        2 * self.conv.len() + self.trunk[..i].iter().map(FcLayer::tensor_count).sum::<usize>()
    }

    pub(crate) fn head_slot(&self) -> usize {
        self.trunk_slot(self.trunk.len())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let conv_vec = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        let lin = |l: &Linear<T>| Linear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: conv_vec(&l.weight),
            bias: conv_vec(&l.bias),
        };
        NetworkParams {
            arch: self.arch.clone(),
            num_classes: self.num_classes,
            conv: self
                .conv
                .iter()
                .map(|c| ConvLayer {
                    spec: c.spec,
                    in_channels: c.in_channels,
                    weight: conv_vec(&c.weight),
                    bias: conv_vec(&c.bias),
                })
                .collect(),
            trunk: self
                .trunk
                .iter()
                .map(|l| match l {
                    FcLayer::Dense(d) => FcLayer::Dense(lin(d)),
                    FcLayer::Factored { first, second } => FcLayer::Factored { first: lin(first), second: lin(second) },
                })
                .collect(),
            cls_head: lin(&self.cls_head),
            reg_head: lin(&self.reg_head),
            target_mean: self.target_mean,
            target_std: self.target_std,
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<(usize, usize), NetworkError> {
        self.arch.feature_hw(h, w).ok_or(NetworkError::ImageTooSmall {
            height: h,
            width: w,
            minimum: self.stride(),
        })
    }

    /// Backbone forward; caches are kept for backpropagation when `keep`.
    pub fn backbone(&self, image: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<ConvCache<T>>), NetworkError> {
        let (_, h, w) = image.chw();
        self.check_input(h, w)?;
        let mut caches = Vec::new();
        let mut x = None::<Tensor<T>>;
        for layer in &self.conv {
            let (y, cache) = layer.forward(x.as_ref().unwrap_or(image), keep);
            if let Some(c) = cache {
                caches.push(c);
            }
            x = Some(y);
        }
        Ok((x.expect("at least one conv layer"), caches))
    }

    pub(crate) fn backbone_backward(&self, caches: &[ConvCache<T>], grad: Tensor<T>, grads: &mut Grads<T>) {
        let mut g = grad;
        for (i, layer) in self.conv.iter().enumerate().rev() {
            let (gw, rest) = grads[2 * i..].split_at_mut(1);
            let want_input = i > 0;
            match layer.backward(&caches[i], &g, &mut gw[0], &mut rest[0], want_input) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    /// Trunk activations: `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub fn trunk_forward(&self, x: Vec<T>, rows: usize) -> Vec<Vec<T>> {
        let mut acts = vec![x];
        for l in &self.trunk {
            let mut y = l.forward(acts.last().expect("input"), rows);
            if self.arch.fc_relu {
                relu_in_place(&mut y);
            }
            acts.push(y);
        }
        acts
    }

    /// Backpropagates head-input gradients through the trunk; returns the
    /// gradient of the pooled features.
    pub(crate) fn trunk_backward(&self, acts: &[Vec<T>], grad: Vec<T>, rows: usize, grads: &mut Grads<T>) -> Vec<T> {
        let mut g = grad;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            if self.arch.fc_relu {
                for (gv, a) in g.iter_mut().zip(&acts[i + 1]) {
                    if *a <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            let slot = self.trunk_slot(i);
            g = match layer {
                FcLayer::Dense(d) => {
                    let (gw, rest) = grads[slot..].split_at_mut(1);
                    d.backward(&acts[i], &g, rows, &mut gw[0], &mut rest[0])
                }
                FcLayer::Factored { first, second } => {
                    let mid = first.forward_no_bias(&acts[i], rows);
                    let (a, b) = grads[slot..].split_at_mut(2);
                    let (sw, sb) = b.split_at_mut(1);
                    let gmid = second.backward(&mid, &g, rows, &mut sw[0], &mut sb[0]);
                    let (fw, fb) = a.split_at_mut(1);
                    let mut dummy = vec![T::zero(); fb[0].len()];
                    let dx = first.backward(&acts[i], &gmid, rows, &mut fw[0], &mut dummy);
                    dx
                }
            };
        }
        g
    }

    /// Classifier logits and regression offsets for `rows` head inputs.
    pub fn heads(&self, h: &[T], rows: usize) -> (Vec<T>, Vec<T>) {
        (self.cls_head.forward(h, rows), self.reg_head.forward(h, rows))
    }
}

/// Numerically stable softmax, evaluated in `f64`.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities (C + 1) and per-class offsets (4 C) for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub class_probs: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Runs the trunk and both heads on one pooled feature vector.
pub fn head_forward<T: Real>(params: &NetworkParams<T>, features: &[T]) -> Result<HeadOutput, NetworkError> {
    let expected = params.trunk.first().map_or(params.head_in_dim(), |l| l.in_dim());
    if features.len() != expected {
        return Err(NetworkError::FeatureLength { expected, got: features.len() });
    }
    let acts = params.trunk_forward(features.to_vec(), 1);
    let (logits, offsets) = params.heads(acts.last().expect("input"), 1);
    Ok(HeadOutput { class_probs: softmax(&logits), offsets: offsets.iter().map(|v| v.f64()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic() {
        let arch = ArchSpec::default();
        assert_eq!(arch.total_stride(), 8);
        assert_eq!(arch.feature_hw(64, 64), Some((8, 8)));
        assert_eq!(arch.feature_hw(4, 64), None);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_map() {
        let p = NetworkParams::<f32>::init(&ArchSpec::default(), 3, 1).unwrap();
        let img = Tensor::zeros(&[3, 64, 64]);
        let (fm, _) = p.backbone(&img, false).unwrap();
        assert_eq!(fm.shape, vec![64, 8, 8]);
        assert!(fm.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_layer_is_linear() {
        let mut arch = ArchSpec::default();
        arch.conv.truncate(1);
        arch.conv[0].relu = false;
        arch.conv[0].pool = false;
        let mut p = NetworkParams::<f64>::init(&arch, 2, 3).unwrap();
        let img = Tensor::from_vec(&[3, 8, 8], (0..192).map(|i| ((i * 37) % 11) as f64 - 5.0).collect());
        let (a, _) = p.backbone(&img, false).unwrap();
        p.conv[0].weight.iter_mut().for_each(|w| *w *= 2.0);
        let (b, _) = p.backbone(&img, false).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_image() {
        let p = NetworkParams::<f32>::init(&ArchSpec::default(), 3, 1).unwrap();
        let err = p.backbone(&Tensor::zeros(&[3, 6, 40]), false).unwrap_err();
        assert!(matches!(err, NetworkError::ImageTooSmall { .. }));
    }

    #[test]
    fn softmax_cases() {
        let uniform = softmax(&[0.3f32; 5]);
        for p in &uniform {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let mut logits = vec![0.0f64; 6];
        logits[2] = 20.0;
        assert!(softmax(&logits)[2] > 0.999);
        let s: f64 = softmax(&[1e3f64, -1e3, 5.0]).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_trunk_gives_uniform_probs() {
        let mut p = NetworkParams::<f32>::init(&ArchSpec::default(), 4, 9).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let feats = vec![1.5f32; p.arch.pooled_len()];
        let out = head_forward(&p, &feats).unwrap();
        assert_eq!(out.class_probs.len(), 5);
        for v in &out.class_probs {
            assert!((v - 0.2).abs() < 1e-12);
        }
        assert_eq!(out.offsets, vec![0.0; 16]);
        assert!(head_forward(&p, &feats[1..]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = NetworkParams::<f32>::init(&ArchSpec::default(), 3, 5).unwrap();
        let b = NetworkParams::<f32>::init(&ArchSpec::default(), 3, 5).unwrap();
        let c = NetworkParams::<f32>::init(&ArchSpec::default(), 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.tensors().len(), a.zero_grads().len());
    }
}
