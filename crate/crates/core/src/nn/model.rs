//! Residual MLP with a K-means skip connection, forward and reverse mode.
//!
//! ```text
//! h0  = relu(W_s x + b_s)
//! h_i = h_{i-1} + W_2 dropout(relu(W_1 h_{i-1} + b_1)) + b_2     (i = 1..blocks)
//! δ   = W_h h_blocks + b_h
//! ```
//!
//! The head output `δ` is added to the K-means estimate fed in through the
//! features, so a zero head reproduces K-means exactly.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{Features, Frame};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, tag};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_BLOCKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Refines K direction vectors (3K outputs).
    Angle,
    /// Refines K cluster sizes (K outputs).
    Size,
}

impl ModelKind {
    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Angle => "angle",
            ModelKind::Size => "size",
        }
    }

    pub fn from_slug(s: &str) -> Option<ModelKind> {
        match s {
            "angle" => Some(ModelKind::Angle),
            "size" => Some(ModelKind::Size),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub kind: ModelKind,
    pub k: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub frame: Frame,
}

impl Arch {
    pub fn new(kind: ModelKind, k: usize) -> Self {
        Self {
            kind,
            k,
            hidden: DEFAULT_HIDDEN,
            blocks: DEFAULT_BLOCKS,
            dropout: 0.1,
            frame: Frame::Canonical,
        }
    }

    pub fn input_dim(&self) -> usize {
        4 * self.k
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            ModelKind::Angle => 3 * self.k,
            ModelKind::Size => self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.hidden == 0 {
            return Err(Error::InvalidInput("K and hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W` stored as (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn he_normal(input: usize, output: usize, gain: f64, rng: &mut rng::Rng) -> Self {
        let std = gain * (2.0 / input as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || {
                std * rng.sample::<f64, _>(StandardNormal)
            }),
            bias: Array1::zeros(output),
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// All trainable tensors. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub stem: Linear,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl Params {
    pub fn zeros(arch: &Arch) -> Self {
        let h = arch.hidden;
        Self {
            stem: Linear::zeros(arch.input_dim(), h),
            blocks: (0..arch.blocks)
                .map(|_| Block {
                    fc1: Linear::zeros(h, h),
                    fc2: Linear::zeros(h, h),
                })
                .collect(),
            head: Linear::zeros(h, arch.output_dim()),
        }
    }

    /// Fan-in scaled normal init; the head starts at zero so the untrained
    /// model reproduces its K-means input.
    pub fn init(arch: &Arch, seed: u64) -> Self {
        let mut rng = rng::stream(&[tag::TRAIN, seed, 0x696e_6974]);
        let h = arch.hidden;
        let block_gain = 1.0 / (arch.blocks.max(1) as f64).sqrt();
        Self {
            stem: Linear::he_normal(arch.input_dim(), h, 1.0, &mut rng),
            blocks: (0..arch.blocks)
                .map(|_| Block {
                    fc1: Linear::he_normal(h, h, 1.0, &mut rng),
                    fc2: Linear::he_normal(h, h, block_gain, &mut rng),
                })
                .collect(),
            head: Linear::zeros(h, arch.output_dim()),
        }
    }

    /// Tensor names in serialization order.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["stem.weight".to_string(), "stem.bias".to_string()];
        for i in 0..self.blocks.len() {
            for part in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
                out.push(format!("blocks.{i}.{part}"));
            }
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    /// Flat row-major views in [`Params::names`] order, with shapes.
    pub fn tensors(&self) -> Vec<(&[f64], Vec<usize>)> {
        let mut lins: Vec<&Linear> = vec![&self.stem];
        for b in &self.blocks {
            lins.push(&b.fc1);
            lins.push(&b.fc2);
        }
        lins.push(&self.head);
        let mut out = Vec::with_capacity(2 * lins.len());
        for l in lins {
            out.push((l.weight.as_slice().expect("standard layout"), l.weight.shape().to_vec()));
            out.push((l.bias.as_slice().expect("standard layout"), l.bias.shape().to_vec()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut lins: Vec<&mut Linear> = vec![&mut self.stem];
        for b in self.blocks.iter_mut() {
            lins.push(&mut b.fc1);
            lins.push(&mut b.fc2);
        }
        lins.push(&mut self.head);
        for l in lins {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src = other.tensors();
        for (dst, (s, _)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Provenance recorded with trained weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub arch: Arch,
    pub params: Params,
    pub meta: TrainingMeta,
}

impl ModelWeights {
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: Params::init(&arch, seed),
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = Params::zeros(&self.arch);
        let ok = expected.blocks.len() == self.params.blocks.len()
            && expected
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .all(|((_, a), (_, b))| *a == b);
        if !ok {
            return Err(Error::InvalidInput("parameter shapes do not match architecture".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Cache {
    input: Array2<f64>,
    stem_pre: Array2<f64>,
    /// `hidden[0]` is the stem output, `hidden[i + 1]` the output of block `i`.
    hidden: Vec<Array2<f64>>,
    fc1_pre: Vec<Array2<f64>>,
    dropped: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

/// Batched forward pass returning the raw head output `δ` (batch, out).
pub(crate) fn forward_batch(
    params: &Params,
    input: Array2<f64>,
    dropout: Option<(f64, &mut rng::Rng)>,
) -> (Array2<f64>, Cache) {
    let stem_pre = params.stem.forward(&input.view());
    let mut hidden = vec![relu(&stem_pre)];
    let mut fc1_pre = Vec::with_capacity(params.blocks.len());
    let mut dropped = Vec::with_capacity(params.blocks.len());
    let mut masks = Vec::with_capacity(params.blocks.len());
    let mut dropout = dropout.filter(|(p, _)| *p > 0.0);
    for block in &params.blocks {
        let h = hidden.last().unwrap();
        let a = block.fc1.forward(&h.view());
        let mut z = relu(&a);
        let mask = dropout.as_mut().map(|(p, rng)| {
            let keep = 1.0 - *p;
            let m = Array2::from_shape_simple_fn(z.raw_dim(), || {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            z *= &m;
            m
        });
        let y = block.fc2.forward(&z.view());
        let next = h + &y;
        fc1_pre.push(a);
        dropped.push(z);
        masks.push(mask);
        hidden.push(next);
    }
    let out = params.head.forward(&hidden.last().unwrap().view());
    (
        out,
        Cache {
            input,
            stem_pre,
            hidden,
            fc1_pre,
            dropped,
            masks,
        },
    )
}

/// Reverse pass for `dL/dδ`; returns parameter gradients.
pub(crate) fn backward_batch(params: &Params, cache: &Cache, d_out: &Array2<f64>, arch: &Arch) -> Params {
    let mut grad = Params::zeros(arch);
    let last = cache.hidden.last().unwrap();
    let mut dh = params.head.backward(&last.view(), d_out, &mut grad.head);
    for (i, block) in params.blocks.iter().enumerate().rev() {
        let gblock = &mut grad.blocks[i];
        let mut dz = block.fc2.backward(&cache.dropped[i].view(), &dh, &mut gblock.fc2);
        if let Some(m) = &cache.masks[i] {
            dz *= m;
        }
        ndarray::Zip::from(&mut dz)
            .and(&cache.fc1_pre[i])
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        let dx = block.fc1.backward(&cache.hidden[i].view(), &dz, &mut gblock.fc1);
        dh += &dx;
    }
    ndarray::Zip::from(&mut dh)
        .and(&cache.stem_pre)
        .for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
    params.stem.backward(&cache.input.view(), &dh, &mut grad.stem);
    grad
}

fn check_features(arch: &Arch, kind: ModelKind, f: &Features) -> Result<()> {
    if arch.kind != kind {
        return Err(Error::InvalidInput(format!(
            "expected a {} model, got {}",
            kind.slug(),
            arch.kind.slug()
        )));
    }
    if f.k() != arch.k || f.vector.0.len() != arch.input_dim() {
        return Err(Error::InvalidInput(format!(
            "model has K = {}, features have K = {}",
            arch.k,
            f.k()
        )));
    }
    if f.frame != arch.frame {
        return Err(Error::InvalidInput(format!(
            "model expects {} frame features, got {}",
            arch.frame.slug(),
            f.frame.slug()
        )));
    }
    Ok(())
}

fn single_delta(w: &ModelWeights, f: &Features, train_mode: bool, rng: Option<&mut rng::Rng>) -> Vec<f64> {
    let x = Array2::from_shape_vec((1, f.vector.0.len()), f.vector.0.clone()).expect("shape");
    let dropout = match (train_mode, rng) {
        (true, Some(r)) => Some((w.arch.dropout, r)),
        _ => None,
    };
    let (out, _) = forward_batch(&w.params, x, dropout);
    out.row(0).to_vec()
}

/// AngleNN output in canonical cluster order.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleOutput {
    /// Refined unit directions in receiver coordinates.
    pub directions: Vec<Vec3>,
    /// Set where the corrected vector vanished and the K-means direction was kept.
    pub fallback: Vec<bool>,
}

/// Add the head output to the K-means directions and renormalize.
/// Dropout is applied only when `train_mode` is set and an RNG is given.
pub fn forward_angle(
    weights: &ModelWeights,
    features: &Features,
    train_mode: bool,
    rng: Option<&mut rng::Rng>,
) -> Result<AngleOutput> {
    check_features(&weights.arch, ModelKind::Angle, features)?;
    let delta = single_delta(weights, features, train_mode, rng);
    let back = features.rotation.transpose();
    let mut directions = Vec::with_capacity(features.k());
    let mut fallback = Vec::with_capacity(features.k());
    for (j, base) in features.frame_dirs().into_iter().enumerate() {
        let v = base + Vec3::new(delta[3 * j], delta[3 * j + 1], delta[3 * j + 2]);
        match v.try_normalize(1e-12) {
            Some(u) => {
                directions.push(back.mul_vec(u));
                fallback.push(false);
            }
            None => {
                directions.push(features.base_dirs[j]);
                fallback.push(true);
            }
        }
    }
    Ok(AngleOutput {
        directions,
        fallback,
    })
}

/// Refined sizes in canonical cluster order, in molecules.
pub fn forward_size(
    weights: &ModelWeights,
    features: &Features,
    train_mode: bool,
    rng: Option<&mut rng::Rng>,
) -> Result<Vec<f64>> {
    check_features(&weights.arch, ModelKind::Size, features)?;
    let delta = single_delta(weights, features, train_mode, rng);
    let n = features.n_emitted;
    // Counts are corrected directly so a zero delta returns them bit for bit.
    // The upper clamp never cuts below the K-means count itself.
    Ok(features
        .base_counts
        .iter()
        .zip(delta)
        .map(|(c, d)| (c + d * n).clamp(0.0, n.max(*c)))
        .collect())
}

/// Supervised example: features plus matched ground truth, canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: Features,
    /// True transmitter directions (receiver coordinates).
    pub target_dirs: Vec<Vec3>,
    /// True absorbed counts.
    pub target_sizes: Vec<f64>,
}

impl TrainingSample {
    pub fn k(&self) -> usize {
        self.features.k()
    }
}

/// Network input, residual base and regression target for a batch.
pub(crate) struct Batch {
    pub input: Array2<f64>,
    pub base: Array2<f64>,
    pub target: Array2<f64>,
}

pub(crate) fn assemble(arch: &Arch, samples: &[&TrainingSample]) -> Result<Batch> {
    let (b, inp, out) = (samples.len(), arch.input_dim(), arch.output_dim());
    let mut input = Array2::zeros((b, inp));
    let mut base = Array2::zeros((b, out));
    let mut target = Array2::zeros((b, out));
    for (i, s) in samples.iter().enumerate() {
        check_features(arch, arch.kind, &s.features)?;
        if s.target_dirs.len() != arch.k || s.target_sizes.len() != arch.k {
            return Err(Error::InvalidInput("target length does not match K".into()));
        }
        input.row_mut(i).assign(&ndarray::ArrayView1::from(&s.features.vector.0));
        match arch.kind {
            ModelKind::Angle => {
                for (j, (u, t)) in s.features.frame_dirs().iter().zip(&s.target_dirs).enumerate() {
                    let t = s.features.rotation.mul_vec(*t);
                    for a in 0..3 {
                        base[[i, 3 * j + a]] = u[a];
                        target[[i, 3 * j + a]] = t[a];
                    }
                }
            }
            ModelKind::Size => {
                for j in 0..arch.k {
                    base[[i, j]] = s.features.base_sizes[j];
                    target[[i, j]] = s.target_sizes[j] / s.features.n_emitted;
                }
            }
        }
    }
    Ok(Batch {
        input,
        base,
        target,
    })
}

pub(crate) fn batch_loss_and_gradient(
    weights: &ModelWeights,
    batch: Batch,
    dropout: Option<&mut rng::Rng>,
) -> Result<(f64, Params)> {
    let dropout = dropout.map(|r| (weights.arch.dropout, r));
    let (delta, cache) = forward_batch(&weights.params, batch.input, dropout);
    let resid = delta + &batch.base - &batch.target;
    let count = resid.len() as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / count;
    if !loss.is_finite() {
        return Err(Error::Divergence);
    }
    let d_out = resid * (2.0 / count);
    Ok((loss, backward_batch(&weights.params, &cache, &d_out, &weights.arch)))
}

/// Mean squared error of the residual prediction over a batch and its
/// gradient with respect to every parameter.
///
/// Angle: pre-normalization corrected vectors against unit target
/// directions. Size: corrected normalized sizes (before clamping) against
/// normalized true sizes. Dropout is active only when `dropout` is given.
pub fn loss_and_gradient(
    weights: &ModelWeights,
    batch: &[TrainingSample],
    dropout: Option<&mut rng::Rng>,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let refs: Vec<&TrainingSample> = batch.iter().collect();
    batch_loss_and_gradient(weights, assemble(&weights.arch, &refs)?, dropout)
}

/// Loss without gradients, dropout off.
pub fn evaluate_loss(weights: &ModelWeights, samples: &[&TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let batch = assemble(&weights.arch, samples)?;
    let (delta, _) = forward_batch(&weights.params, batch.input, None);
    let resid = delta + &batch.base - &batch.target;
    Ok(resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64)
}
