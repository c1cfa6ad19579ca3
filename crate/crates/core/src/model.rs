//! Three-layer per-pixel segmenter with hand-written backpropagation:
//! 3x3 conv, ReLU, 3x3 conv, ReLU (the features `g`), 1x1 conv, softmax.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::grid::{SoftLabeling, TensorGrid};
use crate::scalar::Scalar;
use crate::tgio::{TgPayload, TgTensor};

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_FEATURES: usize = 8;
pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub in_channels: usize,
    pub hidden: usize,
    pub features: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(in_channels: usize, hidden: usize, features: usize, classes: usize) -> Result<Self> {
        if in_channels == 0 || hidden == 0 || features == 0 || classes < 2 {
            return Err(domain_err!(
                "invalid model dimensions in={in_channels} hidden={hidden} features={features} classes={classes}"
            ));
        }
        Ok(Self { in_channels, hidden, features, classes })
    }
}

/// Weights are stored `[out][in][ky][kx]` for the 3x3 layers and
/// `[out][in]` for the head.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterParams<T> {
    pub dims: ModelDims,
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

pub const LAYER_NAMES: [&str; 6] = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"];

impl<T: Scalar> SegmenterParams<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { in_channels, hidden, features, classes } = dims;
        Self {
            dims,
            conv1_w: vec![T::zero(); hidden * in_channels * 9],
            conv1_b: vec![T::zero(); hidden],
            conv2_w: vec![T::zero(); features * hidden * 9],
            conv2_b: vec![T::zero(); features],
            head_w: vec![T::zero(); classes * features],
            head_b: vec![T::zero(); classes],
        }
    }

    /// He initialization scaled by fan-in, zero biases, with the head
    /// further scaled by [`HEAD_INIT_SCALE`].
    pub fn init(seed: u64, dims: ModelDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let mut fill = |w: &mut Vec<T>, fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            w.iter_mut().for_each(|v| *v = T::lit(normal.sample(&mut rng)));
        };
        fill(&mut p.conv1_w, dims.in_channels * 9);
        fill(&mut p.conv2_w, dims.hidden * 9);
        fill(&mut p.head_w, dims.features);
        // A small classifier keeps the initial softmax away from saturation.
        p.head_w.iter_mut().for_each(|v| *v *= T::lit(HEAD_INIT_SCALE));
        p
    }

    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let ModelDims { in_channels, hidden, features, classes } = self.dims;
        [
            vec![hidden, in_channels, 3, 3],
            vec![hidden],
            vec![features, hidden, 3, 3],
            vec![features],
            vec![classes, features],
            vec![classes],
        ]
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.head_w, &self.head_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Adds `scale * other` in place.
    pub fn add_scaled(&mut self, scale: T, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += scale * s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> SegmenterParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        SegmenterParams {
            dims: self.dims,
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
            head_w: c(&self.head_w),
            head_b: c(&self.head_b),
        }
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Row offsets of the reflected 3x3 neighborhood, precomputed per axis.
fn neighbor_index(n: usize) -> Vec<[usize; 3]> {
    (0..n as isize).map(|i| [reflect(i - 1, n), i as usize, reflect(i + 1, n)]).collect()
}

fn conv3x3<T: Scalar>(input: &[T], h: usize, w: usize, cin: usize, weights: &[T], bias: &[T]) -> Vec<T> {
    let cout = bias.len();
    let (ny, nx) = (neighbor_index(h), neighbor_index(w));
    let mut out = vec![T::zero(); h * w * cout];
    let mut patch = vec![T::zero(); cin * 9];
    for y in 0..h {
        for x in 0..w {
            for ky in 0..3 {
                for kx in 0..3 {
                    let src = &input[(ny[y][ky] * w + nx[x][kx]) * cin..][..cin];
                    for (i, &v) in src.iter().enumerate() {
                        patch[i * 9 + ky * 3 + kx] = v;
                    }
                }
            }
            let dst = &mut out[(y * w + x) * cout..][..cout];
            for (o, d) in dst.iter_mut().enumerate() {
                let wrow = &weights[o * cin * 9..][..cin * 9];
                *d = bias[o] + wrow.iter().zip(&patch).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and, if requested, the input
/// gradient of a reflected 3x3 convolution.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Scalar>(
    input: &[T],
    h: usize,
    w: usize,
    cin: usize,
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let cout = grad_b.len();
    let (ny, nx) = (neighbor_index(h), neighbor_index(w));
    for y in 0..h {
        for x in 0..w {
            let go = &grad_out[(y * w + x) * cout..][..cout];
            for (o, &g) in go.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                grad_b[o] += g;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let base = (ny[y][ky] * w + nx[x][kx]) * cin;
                        for i in 0..cin {
                            let wi = o * cin * 9 + i * 9 + ky * 3 + kx;
                            grad_w[wi] += g * input[base + i];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                gi[base + i] += g * weights[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub height: usize,
    pub width: usize,
    input: Vec<T>,
    hidden: Vec<T>,
    features: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Penultimate activations, `(h, w, features)`.
    pub features: TensorGrid<T>,
    pub probs: SoftLabeling<T>,
    pub cache: ForwardCache<T>,
}

pub fn forward<T: Scalar>(params: &SegmenterParams<T>, image: &TensorGrid<T>) -> Result<ForwardOutput<T>> {
    let d = params.dims;
    if image.channels() != d.in_channels {
        return Err(domain_err!("image has {} channels, model expects {}", image.channels(), d.in_channels));
    }
    let (h, w) = (image.height(), image.width());
    let relu = |v: &mut Vec<T>| v.iter_mut().for_each(|x| *x = x.max(T::zero()));
    let mut hidden = conv3x3(image.data(), h, w, d.in_channels, &params.conv1_w, &params.conv1_b);
    relu(&mut hidden);
    let mut features = conv3x3(&hidden, h, w, d.hidden, &params.conv2_w, &params.conv2_b);
    relu(&mut features);
    let mut logits = Vec::with_capacity(h * w * d.classes);
    for f in features.chunks_exact(d.features) {
        for c in 0..d.classes {
            let row = &params.head_w[c * d.features..][..d.features];
            logits.push(params.head_b[c] + row.iter().zip(f).map(|(&a, &b)| a * b).sum::<T>());
        }
    }
    let probs = SoftLabeling::softmax(h, w, d.classes, &logits)?;
    Ok(ForwardOutput {
        features: TensorGrid::new(h, w, d.features, features.clone())?,
        probs,
        cache: ForwardCache { height: h, width: w, input: image.data().to_vec(), hidden, features },
    })
}

/// Parameter gradients of `<grad_p, p> + <grad_g, g>` at the cached pass.
/// `grad_g` may be omitted when nothing depends on the features directly.
pub fn backward<T: Scalar>(
    params: &SegmenterParams<T>,
    out: &ForwardOutput<T>,
    grad_p: &TensorGrid<T>,
    grad_g: Option<&TensorGrid<T>>,
) -> Result<SegmenterParams<T>> {
    let d = params.dims;
    let cache = &out.cache;
    let (h, w) = (cache.height, cache.width);
    if !grad_p.same_hw(h, w) || grad_p.channels() != d.classes {
        return Err(domain_err!("probability gradient has the wrong shape"));
    }
    if let Some(g) = grad_g {
        if !g.same_hw(h, w) || g.channels() != d.features {
            return Err(domain_err!("feature gradient has the wrong shape"));
        }
    }
    let mut grads = SegmenterParams::zeros(d);
    let n = h * w;
    let mut grad_feat = vec![T::zero(); n * d.features];
    let mut grad_logit = vec![T::zero(); d.classes];
    for k in 0..n {
        let p = out.probs.pixel(k);
        let gp = grad_p.pixel(k);
        let dot: T = p.iter().zip(gp).map(|(&a, &b)| a * b).sum();
        for c in 0..d.classes {
            grad_logit[c] = p[c] * (gp[c] - dot);
        }
        let f = &cache.features[k * d.features..][..d.features];
        let gf = &mut grad_feat[k * d.features..][..d.features];
        for (c, &gl) in grad_logit.iter().enumerate() {
            grads.head_b[c] += gl;
            let row = &params.head_w[c * d.features..][..d.features];
            let grow = &mut grads.head_w[c * d.features..][..d.features];
            for j in 0..d.features {
                grow[j] += gl * f[j];
                gf[j] += gl * row[j];
            }
        }
        if let Some(g) = grad_g {
            gf.iter_mut().zip(g.pixel(k)).for_each(|(a, &b)| *a += b);
        }
        // ReLU gate of the feature layer.
        for (a, &v) in gf.iter_mut().zip(f) {
            if v <= T::zero() {
                *a = T::zero();
            }
        }
    }
    let mut grad_hidden = vec![T::zero(); n * d.hidden];
    conv3x3_backward(
        &cache.hidden,
        h,
        w,
        d.hidden,
        &params.conv2_w,
        &grad_feat,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut grad_hidden),
    );
    for (a, &v) in grad_hidden.iter_mut().zip(&cache.hidden) {
        if v <= T::zero() {
            *a = T::zero();
        }
    }
    conv3x3_backward(
        &cache.input,
        h,
        w,
        d.in_channels,
        &params.conv1_w,
        &grad_hidden,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        None,
    );
    Ok(grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, weight_decay: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: SegmenterParams<T>,
    pub v: SegmenterParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dims: ModelDims) -> Self {
        Self { step: 0, m: SegmenterParams::zeros(dims), v: SegmenterParams::zeros(dims) }
    }
}

/// Adam with bias correction and decoupled weight decay applied first.
pub fn adam_step<T: Scalar>(
    params: &mut SegmenterParams<T>,
    grads: &SegmenterParams<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.dims != grads.dims || params.dims != state.m.dims {
        return Err(domain_err!("parameter, gradient and optimizer shapes differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let decay = T::one() - T::lit(cfg.lr * cfg.weight_decay);
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));
    let eps = T::lit(cfg.eps);
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Checkpoint index stored next to the per-layer tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub in_channels: usize,
    pub h1: usize,
    pub features: usize,
    pub classes: usize,
    pub seed: u64,
    pub layers: BTreeMap<String, String>,
}

pub const CHECKPOINT_INDEX: &str = "model.json";

pub fn save_checkpoint<T: Scalar>(dir: impl AsRef<Path>, params: &SegmenterParams<T>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut layers = BTreeMap::new();
    for ((name, shape), data) in LAYER_NAMES.iter().zip(params.shapes()).zip(params.tensors()) {
        let file = format!("{name}.tg");
        let dims = shape.iter().map(|&s| s as u64).collect();
        TgTensor::f64(dims, data.iter().map(|v| v.as_f64()).collect()).write(dir.join(&file))?;
        layers.insert(name.to_string(), file);
    }
    let d = params.dims;
    let index = CheckpointIndex {
        in_channels: d.in_channels,
        h1: d.hidden,
        features: d.features,
        classes: d.classes,
        seed,
        layers,
    };
    fs::write(dir.join(CHECKPOINT_INDEX), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<(SegmenterParams<T>, CheckpointIndex)> {
    let dir = dir.as_ref();
    let index: CheckpointIndex = serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_INDEX))?)?;
    let dims = ModelDims::new(index.in_channels, index.h1, index.features, index.classes)?;
    let mut params = SegmenterParams::<T>::zeros(dims);
    let shapes = params.shapes();
    for ((name, shape), dst) in LAYER_NAMES.iter().zip(shapes).zip(params.tensors_mut()) {
        let file = index
            .layers
            .get(*name)
            .ok_or_else(|| Error::Format(format!("checkpoint index lacks layer {name}")))?;
        let t = TgTensor::read(dir.join(file))?;
        let expected: Vec<u64> = shape.iter().map(|&s| s as u64).collect();
        if t.dims != expected {
            return Err(Error::Format(format!("layer {name} has dims {:?}, expected {:?}", t.dims, expected)));
        }
        match t.payload {
            TgPayload::F64(v) => *dst = v.into_iter().map(T::lit).collect(),
            TgPayload::U8(_) => return Err(Error::Format(format!("layer {name} is not float"))),
        }
    }
    if !params.is_finite() {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok((params, index))
}
