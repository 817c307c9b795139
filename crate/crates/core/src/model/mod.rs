//! Context encoder, masked-token predictor, EMA target encoder, and the
//! attentive probing head.
//!
//! The encoder and predictor are pre-norm transformer stacks with GELU MLPs
//! and learned per-tube positional embeddings. Tube embeddings flatten each
//! tube's stacked patches (T·P·P·C values) and project them to the latent
//! width; the projection is sized for `max_frames` so a run with shorter
//! clips uses a leading slice of it and checkpoints transfer across stages.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::tubes::{TubeGrid, TubePartition};
use crate::video::clip::VideoClip;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Latent width D.
    pub latent_dim: usize,
    /// Encoder transformer blocks.
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// The predictor defaults narrower than the encoder.
    pub predictor_depth: usize,
    pub predictor_heads: usize,
    /// Positional table size (largest tube count the model accepts).
    pub max_tokens: usize,
    /// Largest frame count the patch projection accepts.
    pub max_frames: usize,
    pub patch_size: u32,
    pub channels: u32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            predictor_depth: 2,
            predictor_heads: 4,
            max_tokens: 64,
            max_frames: 16,
            patch_size: 8,
            channels: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.depth == 0
            || self.heads == 0
            || self.predictor_depth == 0
            || self.predictor_heads == 0
            || self.max_tokens == 0
            || self.max_frames == 0
            || self.patch_size == 0
            || self.channels == 0
        {
            return Err(Error::config("encoder config fields must be positive"));
        }
        if self.latent_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "latent_dim {} not divisible by heads {}",
                self.latent_dim, self.heads
            )));
        }
        if self.latent_dim % self.predictor_heads != 0 {
            return Err(Error::Config(format!(
                "latent_dim {} not divisible by predictor_heads {}",
                self.latent_dim, self.predictor_heads
            )));
        }
        if self.mlp_hidden() == 0 {
            return Err(Error::config("mlp_ratio too small"));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.latent_dim as f64).round() as usize
    }

    /// Input length of the patch projection at full temporal extent.
    pub fn max_input_len(&self) -> usize {
        self.max_frames * (self.patch_size * self.patch_size * self.channels) as usize
    }

    /// Input length for a clip with `frames` frames.
    pub fn input_len(&self, frames: usize) -> usize {
        frames * (self.patch_size * self.patch_size * self.channels) as usize
    }
}

/// Named tensors of one network. Iteration order is the name order, so
/// initialization, updates, and serialization are all deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<S: Scalar = f64> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        ParameterSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) {
        self.map.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn shape_congruent(&self, other: &ParameterSet<S>) -> bool {
        self.map.len() == other.map.len()
            && self.map.iter().all(|(k, v)| {
                other
                    .map
                    .get(k)
                    .is_some_and(|o| o.shape() == v.shape())
            })
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.map
    }

    pub fn from_map(map: BTreeMap<String, Tensor<S>>) -> Self {
        ParameterSet { map }
    }
}

impl<S: Scalar> Default for ParameterSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

struct Initializer<S: Scalar> {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> Initializer<S> {
    fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
            _marker: std::marker::PhantomData,
        }
    }

    fn normal(&mut self, shape: Vec<usize>) -> Tensor<S> {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| S::of(self.normal.sample(&mut self.rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("shape matches data")
    }
}

fn insert_block<S: Scalar>(
    params: &mut ParameterSet<S>,
    init: &mut Initializer<S>,
    prefix: &str,
    d: usize,
    hidden: usize,
) {
    for side in ["ln1", "ln2"] {
        params.insert(&format!("{prefix}.{side}.g"), Tensor::full(vec![d], S::one()));
        params.insert(&format!("{prefix}.{side}.b"), Tensor::zeros(vec![d]));
    }
    for w in ["wq", "wk", "wv", "wo"] {
        params.insert(&format!("{prefix}.attn.{w}"), init.normal(vec![d, d]));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        params.insert(&format!("{prefix}.attn.{b}"), Tensor::zeros(vec![d]));
    }
    params.insert(&format!("{prefix}.mlp.w1"), init.normal(vec![d, hidden]));
    params.insert(&format!("{prefix}.mlp.b1"), Tensor::zeros(vec![hidden]));
    params.insert(&format!("{prefix}.mlp.w2"), init.normal(vec![hidden, d]));
    params.insert(&format!("{prefix}.mlp.b2"), Tensor::zeros(vec![d]));
}

/// Fresh student parameters (encoder + predictor + shared mask query).
pub fn init_params<S: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<ParameterSet<S>> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let hidden = cfg.mlp_hidden();
    let mut init = Initializer::new(seed);
    let mut params = ParameterSet::new();
    params.insert("embed.proj.w", init.normal(vec![cfg.max_input_len(), d]));
    params.insert("embed.proj.b", Tensor::zeros(vec![d]));
    params.insert("embed.pos", init.normal(vec![cfg.max_tokens, d]));
    params.insert("pred.query", init.normal(vec![d]));
    for i in 0..cfg.depth {
        insert_block(&mut params, &mut init, &format!("enc.{i}"), d, hidden);
    }
    params.insert("enc.norm.g", Tensor::full(vec![d], S::one()));
    params.insert("enc.norm.b", Tensor::zeros(vec![d]));
    for i in 0..cfg.predictor_depth {
        insert_block(&mut params, &mut init, &format!("pred.{i}"), d, hidden);
    }
    params.insert("pred.norm.g", Tensor::full(vec![d], S::one()));
    params.insert("pred.norm.b", Tensor::zeros(vec![d]));
    Ok(params)
}

/// Parameters bound to a tape, either trainable or frozen.
pub struct BoundParams<S: Scalar = f64> {
    vars: BTreeMap<String, Var<S>>,
}

impl<S: Scalar> BoundParams<S> {
    pub fn get(&self, name: &str) -> Result<&Var<S>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing bound parameter {name}")))
    }

    /// Gradient per parameter; parameters the loss never touched get zeros.
    pub fn grads(&self) -> BTreeMap<String, Tensor<S>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let g = var
                    .grad()
                    .unwrap_or_else(|| Tensor::zeros(var.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<S>)> {
        self.vars.iter()
    }
}

pub fn bind_params<S: Scalar>(
    tape: &Tape<S>,
    params: &ParameterSet<S>,
    trainable: bool,
) -> BoundParams<S> {
    let vars = params
        .iter()
        .map(|(name, tensor)| {
            let var = if trainable {
                tape.param(tensor.clone())
            } else {
                tape.constant(tensor.clone())
            };
            (name.clone(), var)
        })
        .collect();
    BoundParams { vars }
}

/// Per-tube flattened pixel rows for the given tube indices, scaled to
/// [0,1]. Row layout: frame-major, then patch rows, then channels — only
/// pixels of the listed tubes are ever read.
pub fn tube_pixel_rows<S: Scalar>(
    clip: &VideoClip,
    grid: &TubeGrid,
    indices: &[usize],
) -> Result<Tensor<S>> {
    let p = grid.patch;
    let len = clip.frames() as usize * (p * p * clip.channels()) as usize;
    let mut data = Vec::with_capacity(indices.len() * len);
    for &tube in indices {
        let (r, c) = grid.position(tube)?;
        for t in 0..clip.frames() {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..clip.channels() {
                        let v = clip.pixel(t, r * p + dy, c * p + dx, ch);
                        data.push(S::of(v as f64 / 255.0));
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![indices.len(), len], data)
}

fn multihead_attention<S: Scalar>(
    q: &Var<S>,
    k: &Var<S>,
    v: &Var<S>,
    heads: usize,
) -> Result<Var<S>> {
    let d = q.shape()[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut merged: Option<Var<S>> = None;
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, dh)?;
        let kh = k.slice_cols(h * dh, dh)?;
        let vh = v.slice_cols(h * dh, dh)?;
        let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        let weights = scores.softmax(1, 1.0)?;
        let out = weights.matmul(&vh)?;
        merged = Some(match merged {
            None => out,
            Some(acc) => acc.concat_cols(&out)?,
        });
    }
    Ok(merged.expect("heads >= 1"))
}

/// One pre-norm block: x + SelfAttn(LN(x)), then x + MLP(LN(x)).
fn block_forward<S: Scalar>(
    p: &BoundParams<S>,
    prefix: &str,
    x: Var<S>,
    heads: usize,
) -> Result<Var<S>> {
    let ln1 = x.layer_norm(
        p.get(&format!("{prefix}.ln1.g"))?,
        p.get(&format!("{prefix}.ln1.b"))?,
        LAYER_NORM_EPS,
    )?;
    let q = ln1
        .matmul(p.get(&format!("{prefix}.attn.wq"))?)?
        .add_row(p.get(&format!("{prefix}.attn.bq"))?)?;
    let k = ln1
        .matmul(p.get(&format!("{prefix}.attn.wk"))?)?
        .add_row(p.get(&format!("{prefix}.attn.bk"))?)?;
    let v = ln1
        .matmul(p.get(&format!("{prefix}.attn.wv"))?)?
        .add_row(p.get(&format!("{prefix}.attn.bv"))?)?;
    let attn = multihead_attention(&q, &k, &v, heads)?
        .matmul(p.get(&format!("{prefix}.attn.wo"))?)?
        .add_row(p.get(&format!("{prefix}.attn.bo"))?)?;
    let x = x.add(&attn)?;

    let ln2 = x.layer_norm(
        p.get(&format!("{prefix}.ln2.g"))?,
        p.get(&format!("{prefix}.ln2.b"))?,
        LAYER_NORM_EPS,
    )?;
    let mlp = ln2
        .matmul(p.get(&format!("{prefix}.mlp.w1"))?)?
        .add_row(p.get(&format!("{prefix}.mlp.b1"))?)?
        .gelu()
        .matmul(p.get(&format!("{prefix}.mlp.w2"))?)?
        .add_row(p.get(&format!("{prefix}.mlp.b2"))?)?;
    x.add(&mlp)
}

/// Projects the tubes at `indices` to tokens and adds their positional
/// embeddings.
pub fn tube_embed<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &EncoderConfig,
    clip: &VideoClip,
    grid: &TubeGrid,
    indices: &[usize],
) -> Result<Var<S>> {
    if grid.num_tubes() > cfg.max_tokens {
        return Err(Error::Config(format!(
            "clip has {} tubes, model accepts {}",
            grid.num_tubes(),
            cfg.max_tokens
        )));
    }
    if clip.frames() as usize > cfg.max_frames {
        return Err(Error::Config(format!(
            "clip has {} frames, model accepts {}",
            clip.frames(),
            cfg.max_frames
        )));
    }
    if grid.patch != cfg.patch_size || clip.channels() != cfg.channels {
        return Err(Error::config("clip geometry does not match model config"));
    }
    let pixels = tube_pixel_rows::<S>(clip, grid, indices)?;
    let tape = p.get("embed.proj.w")?.tape().clone();
    let x = tape.constant(pixels);
    let proj = p
        .get("embed.proj.w")?
        .slice_rows(0, cfg.input_len(clip.frames() as usize))?;
    let projected = x.matmul(&proj)?.add_row(p.get("embed.proj.b")?)?;
    let pos = p.get("embed.pos")?.gather_rows(indices)?;
    projected.add(&pos)
}

fn encoder_forward<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &EncoderConfig,
    tokens: Var<S>,
) -> Result<Var<S>> {
    let mut x = tokens;
    for i in 0..cfg.depth {
        x = block_forward(p, &format!("enc.{i}"), x, cfg.heads)?;
    }
    x.layer_norm(p.get("enc.norm.g")?, p.get("enc.norm.b")?, LAYER_NORM_EPS)
}

/// Encoder over an arbitrary tube index set.
pub fn encode_tokens<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &EncoderConfig,
    clip: &VideoClip,
    grid: &TubeGrid,
    indices: &[usize],
) -> Result<Var<S>> {
    let tokens = tube_embed(p, cfg, clip, grid, indices)?;
    encoder_forward(p, cfg, tokens)
}

/// Student context encoding: self-attention over visible tubes only.
/// Masked-tube pixels are never read.
pub fn encode_visible<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &EncoderConfig,
    clip: &VideoClip,
    grid: &TubeGrid,
    partition: &TubePartition,
) -> Result<Var<S>> {
    if partition.visible.is_empty() {
        return Err(Error::contract("no visible tubes to encode"));
    }
    encode_tokens(p, cfg, clip, grid, &partition.visible)
}

/// Teacher encoding of the full clip, detached from any training tape.
/// Runs on a throwaway tape built from constants, so the result carries no
/// gradient linkage by construction.
pub fn encode_full_ema<S: Scalar>(
    teacher: &ParameterSet<S>,
    cfg: &EncoderConfig,
    clip: &VideoClip,
    grid: &TubeGrid,
) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let bound = bind_params(&tape, teacher, false);
    let all: Vec<usize> = (0..grid.num_tubes()).collect();
    let out = encode_tokens(&bound, cfg, clip, grid, &all)?;
    Ok(out.value())
}

/// Initial masked tokens m_i = q + e_i for the masked index list.
pub fn mask_tokens<S: Scalar>(
    p: &BoundParams<S>,
    masked: &[usize],
) -> Result<Var<S>> {
    let e = p.get("embed.pos")?.gather_rows(masked)?;
    e.add_row(p.get("pred.query")?)
}

/// Predictor over [Z_v; M_m]; returns (pass-through visible outputs,
/// predicted masked latents).
pub fn predict_masked<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &EncoderConfig,
    z_visible: &Var<S>,
    partition: &TubePartition,
) -> Result<(Var<S>, Var<S>)> {
    let v = partition.visible.len();
    let m = partition.masked.len();
    if z_visible.shape() != vec![v, cfg.latent_dim] {
        return Err(Error::Contract(format!(
            "visible latents {:?} do not match partition with {v} visible tubes",
            z_visible.shape()
        )));
    }
    let masked_tokens = mask_tokens(p, &partition.masked)?;
    let mut x = z_visible.concat_rows(&masked_tokens)?;
    for i in 0..cfg.predictor_depth {
        x = block_forward(p, &format!("pred.{i}"), x, cfg.predictor_heads)?;
    }
    let x = x.layer_norm(p.get("pred.norm.g")?, p.get("pred.norm.b")?, LAYER_NORM_EPS)?;
    let z_tilde_v = x.slice_rows(0, v)?;
    let z_hat_m = x.slice_rows(v, m)?;
    Ok((z_tilde_v, z_hat_m))
}

/// Statistics of one EMA update, for the drift-bound audit.
#[derive(Clone, Copy, Debug)]
pub struct EmaDrift {
    /// max over parameters of |new teacher − old teacher|
    pub max_step: f64,
    /// max over parameters of |student − old teacher|
    pub max_gap: f64,
}

/// θ̄ ← α·θ̄ + (1−α)·θ, elementwise, outside any tape.
pub fn ema_update<S: Scalar>(
    student: &ParameterSet<S>,
    teacher: &mut ParameterSet<S>,
    alpha: f64,
) -> Result<EmaDrift> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract("ema alpha must lie in [0,1]"));
    }
    if !student.shape_congruent(teacher) {
        return Err(Error::contract(
            "student and teacher parameter sets are not shape-congruent",
        ));
    }
    let a = S::of(alpha);
    let b = S::of(1.0 - alpha);
    let mut drift = EmaDrift {
        max_step: 0.0,
        max_gap: 0.0,
    };
    for (name, s) in student.iter() {
        let t = teacher.get_mut(name)?;
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            let old = *tv;
            drift.max_gap = drift.max_gap.max((sv - old).abs().to64());
            *tv = a * old + b * sv;
            drift.max_step = drift.max_step.max((*tv - old).abs().to64());
        }
    }
    Ok(drift)
}

/// Attentive probing head: a learnable query cross-attends to frozen tokens
/// through a small block stack, then a linear classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            blocks: 4,
            heads: 16,
            mlp_ratio: 4.0,
        }
    }
}

pub fn init_probe_params<S: Scalar>(
    latent_dim: usize,
    num_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ParameterSet<S>> {
    if latent_dim % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "latent_dim {latent_dim} not divisible by {} probe heads",
            cfg.heads
        )));
    }
    if num_classes < 2 {
        return Err(Error::config("probe needs at least two classes"));
    }
    let hidden = (cfg.mlp_ratio * latent_dim as f64).round() as usize;
    let mut init = Initializer::new(seed);
    let mut params = ParameterSet::new();
    params.insert("probe.query", init.normal(vec![1, latent_dim]));
    for i in 0..cfg.blocks {
        insert_block(&mut params, &mut init, &format!("probe.{i}"), latent_dim, hidden);
    }
    params.insert("probe.norm.g", Tensor::full(vec![latent_dim], S::one()));
    params.insert("probe.norm.b", Tensor::zeros(vec![latent_dim]));
    params.insert("probe.cls.w", init.normal(vec![latent_dim, num_classes]));
    params.insert("probe.cls.b", Tensor::zeros(vec![num_classes]));
    Ok(params)
}

/// Class logits [1×num_classes] for one clip's frozen token features.
pub fn probe_logits<S: Scalar>(
    p: &BoundParams<S>,
    cfg: &ProbeConfig,
    features: &Var<S>,
) -> Result<Var<S>> {
    let mut q = p.get("probe.query")?.clone();
    for i in 0..cfg.blocks {
        let prefix = format!("probe.{i}");
        let qn = q.layer_norm(
            p.get(&format!("{prefix}.ln1.g"))?,
            p.get(&format!("{prefix}.ln1.b"))?,
            LAYER_NORM_EPS,
        )?;
        let qq = qn
            .matmul(p.get(&format!("{prefix}.attn.wq"))?)?
            .add_row(p.get(&format!("{prefix}.attn.bq"))?)?;
        let kk = features
            .matmul(p.get(&format!("{prefix}.attn.wk"))?)?
            .add_row(p.get(&format!("{prefix}.attn.bk"))?)?;
        let vv = features
            .matmul(p.get(&format!("{prefix}.attn.wv"))?)?
            .add_row(p.get(&format!("{prefix}.attn.bv"))?)?;
        let attn = multihead_attention(&qq, &kk, &vv, cfg.heads)?
            .matmul(p.get(&format!("{prefix}.attn.wo"))?)?
            .add_row(p.get(&format!("{prefix}.attn.bo"))?)?;
        q = q.add(&attn)?;
        let ln2 = q.layer_norm(
            p.get(&format!("{prefix}.ln2.g"))?,
            p.get(&format!("{prefix}.ln2.b"))?,
            LAYER_NORM_EPS,
        )?;
        let mlp = ln2
            .matmul(p.get(&format!("{prefix}.mlp.w1"))?)?
            .add_row(p.get(&format!("{prefix}.mlp.b1"))?)?
            .gelu()
            .matmul(p.get(&format!("{prefix}.mlp.w2"))?)?
            .add_row(p.get(&format!("{prefix}.mlp.b2"))?)?;
        q = q.add(&mlp)?;
    }
    let pooled = q.layer_norm(p.get("probe.norm.g")?, p.get("probe.norm.b")?, LAYER_NORM_EPS)?;
    pooled
        .matmul(p.get("probe.cls.w")?)?
        .add_row(p.get("probe.cls.b")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            latent_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            predictor_depth: 1,
            predictor_heads: 2,
            max_tokens: 9,
            max_frames: 2,
            patch_size: 2,
            channels: 1,
        }
    }

    fn tiny_clip(seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clip = VideoClip::zeros(2, 6, 6, 1, 1.0);
        for p in clip.pixels_mut() {
            *p = rng.random();
        }
        clip
    }

    fn tiny_partition(clip: &VideoClip, grid: &TubeGrid, seed: u64) -> TubePartition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::tubes::sample_partition(clip, grid, &mut rng, 3, 2.0).unwrap()
    }

    #[test]
    fn zero_clip_embeds_to_positional_rows() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 1).unwrap();
        let clip = VideoClip::zeros(2, 6, 6, 1, 1.0);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let tape = Tape::new();
        let bound = bind_params(&tape, &params, false);
        let emb = tube_embed(&bound, &cfg, &clip, &grid, &[0, 4, 8]).unwrap();
        let pos = params.get("embed.pos").unwrap().gather_rows(&[0, 4, 8]).unwrap();
        assert_eq!(emb.value(), pos);
    }

    #[test]
    fn doubling_pixels_doubles_projected_component() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 2).unwrap();
        let mut clip = tiny_clip(3);
        for p in clip.pixels_mut() {
            *p %= 128; // keep 2x exact in u8
        }
        let mut doubled = clip.clone();
        for p in doubled.pixels_mut() {
            *p *= 2;
        }
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let indices: Vec<usize> = (0..grid.num_tubes()).collect();
        let tape = Tape::new();
        let bound = bind_params(&tape, &params, false);
        let pos = params
            .get("embed.pos")
            .unwrap()
            .gather_rows(&indices)
            .unwrap();
        let e1 = tube_embed(&bound, &cfg, &clip, &grid, &indices).unwrap().value();
        let e2 = tube_embed(&bound, &cfg, &doubled, &grid, &indices)
            .unwrap()
            .value();
        for i in 0..e1.numel() {
            let p1 = e1.data()[i] - pos.data()[i];
            let p2 = e2.data()[i] - pos.data()[i];
            assert!((p2 - 2.0 * p1).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_tube_order_permutes_embedding_rows() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 4).unwrap();
        let clip = tiny_clip(5);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let tape = Tape::new();
        let bound = bind_params(&tape, &params, false);
        let order: Vec<usize> = (0..9).collect();
        let perm = vec![5, 0, 7, 2, 8, 1, 3, 6, 4];
        let base = tube_embed(&bound, &cfg, &clip, &grid, &order).unwrap().value();
        let permuted = tube_embed(&bound, &cfg, &clip, &grid, &perm).unwrap().value();
        for (out_row, &src) in perm.iter().enumerate() {
            assert_eq!(permuted.row(out_row), base.row(src));
        }
    }

    #[test]
    fn masking_blindness_is_bitwise() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 6).unwrap();
        let clip = tiny_clip(7);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let partition = tiny_partition(&clip, &grid, 8);

        let encode = |c: &VideoClip| {
            let tape = Tape::new();
            let bound = bind_params(&tape, &params, false);
            encode_visible(&bound, &cfg, c, &grid, &partition)
                .unwrap()
                .value()
        };
        let base = encode(&clip);

        let mut perturbed = clip.clone();
        for &tube in &partition.masked {
            let (r, c) = grid.position(tube).unwrap();
            for t in 0..perturbed.frames() {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = perturbed.pixel(t, r * 2 + dy, c * 2 + dx, 0);
                        perturbed.set_pixel(t, r * 2 + dy, c * 2 + dx, 0, v.wrapping_add(91));
                    }
                }
            }
        }
        let after = encode(&perturbed);
        assert_eq!(base.data().len(), after.data().len());
        for (a, b) in base.data().iter().zip(after.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn single_visible_token_encodes() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 9).unwrap();
        let clip = tiny_clip(10);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let tape = Tape::new();
        let bound = bind_params(&tape, &params, false);
        let out = encode_tokens(&bound, &cfg, &clip, &grid, &[4]).unwrap();
        assert_eq!(out.shape(), vec![1, 8]);
    }

    #[test]
    fn predictor_shapes_and_distinct_mask_tokens() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 11).unwrap();
        let clip = tiny_clip(12);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let partition = tiny_partition(&clip, &grid, 13);

        let tape = Tape::new();
        let bound = bind_params(&tape, &params, true);
        let m = mask_tokens(&bound, &partition.masked).unwrap().value();
        // different e_i make different initial tokens
        for i in 1..m.rows() {
            assert_ne!(m.row(0), m.row(i));
        }

        let z_v = encode_visible(&bound, &cfg, &clip, &grid, &partition).unwrap();
        let (z_tilde, z_hat) = predict_masked(&bound, &cfg, &z_v, &partition).unwrap();
        assert_eq!(z_tilde.shape(), vec![partition.visible.len(), 8]);
        assert_eq!(z_hat.shape(), vec![partition.masked.len(), 8]);
    }

    #[test]
    fn gradients_reach_query_and_encoder_params() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 14).unwrap();
        let clip = tiny_clip(15);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let partition = tiny_partition(&clip, &grid, 16);

        let tape = Tape::new();
        let bound = bind_params(&tape, &params, true);
        let z_v = encode_visible(&bound, &cfg, &clip, &grid, &partition).unwrap();
        let (_, z_hat) = predict_masked(&bound, &cfg, &z_v, &partition).unwrap();
        let loss = z_hat.mul(&z_hat).unwrap().sum_all();
        tape.backward(&loss).unwrap();

        let q_grad = bound.get("pred.query").unwrap().grad().unwrap();
        assert!(q_grad.data().iter().any(|&v| v != 0.0));
        let enc_grad = bound.get("enc.0.attn.wq").unwrap().grad().unwrap();
        assert!(enc_grad.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn teacher_full_encode_matches_student_full_encode_bitwise() {
        let cfg = tiny_cfg();
        let params = init_params::<f64>(&cfg, 17).unwrap();
        let clip = tiny_clip(18);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let teacher = params.clone();

        let z_teacher = encode_full_ema(&teacher, &cfg, &clip, &grid).unwrap();
        let tape = Tape::new();
        let bound = bind_params(&tape, &params, true);
        let all: Vec<usize> = (0..grid.num_tubes()).collect();
        let z_student = encode_tokens(&bound, &cfg, &clip, &grid, &all)
            .unwrap()
            .value();
        assert_eq!(z_teacher.shape(), &[9, 8]);
        for (a, b) in z_teacher.data().iter().zip(z_student.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ema_update_examples() {
        let cfg = tiny_cfg();
        let student = init_params::<f64>(&cfg, 19).unwrap();
        let mut teacher = init_params::<f64>(&cfg, 20).unwrap();

        let frozen = teacher.clone();
        ema_update(&student, &mut teacher, 1.0).unwrap();
        assert_eq!(teacher, frozen);

        ema_update(&student, &mut teacher, 0.0).unwrap();
        assert_eq!(teacher, student);

        // single-element hand case
        let mut s = ParameterSet::<f64>::new();
        s.insert("w", Tensor::scalar(1.0));
        let mut t = ParameterSet::<f64>::new();
        t.insert("w", Tensor::scalar(0.0));
        ema_update(&s, &mut t, 0.99925).unwrap();
        assert!((t.get("w").unwrap().item() - 0.00075).abs() <= 1e-15);
    }

    #[test]
    fn probe_isolation_and_single_token_attention() {
        let pc = ProbeConfig {
            blocks: 2,
            heads: 4,
            mlp_ratio: 2.0,
        };
        let probe = init_probe_params::<f64>(8, 3, &pc, 21).unwrap();
        let feats = Tensor::matrix(1, 8, (0..8).map(|i| 0.1 * i as f64).collect()).unwrap();

        let tape = Tape::new();
        let bound = bind_params(&tape, &probe, true);
        let f = tape.constant(feats.clone());
        let logits = probe_logits(&bound, &pc, &f).unwrap();
        assert_eq!(logits.shape(), vec![1, 3]);
        let loss = logits.mul(&logits).unwrap().sum_all();
        tape.backward(&loss).unwrap();
        assert!(f.grad().is_none(), "frozen features must get no gradient");

        // with a single token, softmax over one key is 1, so wq is irrelevant
        let mut probe_b = probe.clone();
        for i in 0..pc.blocks {
            let w = probe_b.get_mut(&format!("probe.{i}.attn.wq")).unwrap();
            for v in w.data_mut() {
                *v += 3.21;
            }
        }
        let tape_b = Tape::new();
        let bound_b = bind_params(&tape_b, &probe_b, false);
        let f_b = tape_b.constant(feats);
        let logits_b = probe_logits(&bound_b, &pc, &f_b).unwrap();
        assert!(logits.value().max_abs_diff(&logits_b.value()) < 1e-12);
    }

    #[test]
    fn probe_rejects_indivisible_heads() {
        let pc = ProbeConfig::default(); // 16 heads
        assert!(init_probe_params::<f64>(12, 2, &pc, 0).is_err());
    }
}
