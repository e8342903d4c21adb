//! Patch-size-1 vision transformer over a [`FeatureGrid`].
//!
//! Every spatial cell of the grid is one token (projected from its C-vector),
//! a learned CLS token is prepended and a positional table specific to the
//! grid width is added. Pre-norm encoder blocks follow; the head reads the
//! final CLS embedding and emits one sigmoid probability per label.

use crate::assembly::{FeatureGrid, SUPPORTED_WIDTHS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{constant, join, uniform, Parameters, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub embed_dim: usize,
    pub n_labels: usize,
    /// Feature channels C of the incoming grid.
    pub in_channels: usize,
    /// Per-view feature map side G.
    pub grid_size: usize,
    pub supported_widths: Vec<usize>,
}

impl ViTConfig {
    pub fn desk() -> Self {
        ViTConfig {
            patch_size: 1,
            depth: 2,
            heads: 2,
            mlp_dim: 64,
            embed_dim: 32,
            n_labels: 8,
            in_channels: 32,
            grid_size: 4,
            supported_widths: SUPPORTED_WIDTHS.to_vec(),
        }
    }

    pub fn paper() -> Self {
        ViTConfig {
            patch_size: 1,
            depth: 6,
            heads: 16,
            mlp_dim: 2048,
            embed_dim: 1024,
            n_labels: 41,
            in_channels: 1024,
            grid_size: 10,
            supported_widths: SUPPORTED_WIDTHS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size != 1 {
            return Err(Error::config(format!("vit: patch_size must be 1, got {}", self.patch_size)));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "vit: embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.n_labels == 0 || self.in_channels == 0 || self.grid_size == 0 || self.mlp_dim == 0 {
            return Err(Error::config("vit: n_labels, in_channels, grid_size and mlp_dim must be >= 1"));
        }
        if self.supported_widths.is_empty()
            || self.supported_widths.iter().any(|w| !SUPPORTED_WIDTHS.contains(w))
        {
            return Err(Error::config(format!(
                "vit: supported_widths {:?} must be a nonempty subset of {SUPPORTED_WIDTHS:?}",
                self.supported_widths
            )));
        }
        Ok(())
    }

    /// Spatial tokens `(W·G)²` for grid width `w`.
    pub fn token_count(&self, w: usize) -> usize {
        (w * self.grid_size).pow(2)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct ViTParams {
    pub config: ViTConfig,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub cls: Tensor,
    /// One table per entry of `config.supported_widths`, `(T+1)×E`.
    pub pos: Vec<Tensor>,
    pub blocks: Vec<Block>,
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Per-layer, per-head attention matrices, each `(T+1)×(T+1)` row-major.
#[derive(Debug, Clone, Default)]
pub struct AttentionRecord {
    pub tokens: usize,
    pub layers: Vec<Vec<Vec<f64>>>,
}

const LN_EPS: f64 = 1e-6;

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn init_vit(config: &ViTConfig, seed: u64) -> Result<ViTParams> {
    config.validate()?;
    let mut r = rng::stream(seed, "init.vit", 0);
    let (e, m, c, l) = (config.embed_dim, config.mlp_dim, config.in_channels, config.n_labels);
    let proj_w = uniform(&mut r, &[c, e], xavier(c, e), true);
    let cls = uniform(&mut r, &[1, e], 0.02, true);
    let pos = config
        .supported_widths
        .iter()
        .map(|&w| uniform(&mut r, &[config.token_count(w) + 1, e], 0.02, true))
        .collect();
    let mut blocks = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        blocks.push(Block {
            ln1_gamma: constant(&[e], 1.0, true),
            ln1_beta: constant(&[e], 0.0, true),
            wq: uniform(&mut r, &[e, e], xavier(e, e), true),
            bq: constant(&[e], 0.0, true),
            wk: uniform(&mut r, &[e, e], xavier(e, e), true),
            bk: constant(&[e], 0.0, true),
            wv: uniform(&mut r, &[e, e], xavier(e, e), true),
            bv: constant(&[e], 0.0, true),
            wo: uniform(&mut r, &[e, e], xavier(e, e), true),
            bo: constant(&[e], 0.0, true),
            ln2_gamma: constant(&[e], 1.0, true),
            ln2_beta: constant(&[e], 0.0, true),
            w1: uniform(&mut r, &[e, m], xavier(e, m), true),
            b1: constant(&[m], 0.0, true),
            w2: uniform(&mut r, &[m, e], xavier(m, e), true),
            b2: constant(&[e], 0.0, true),
        });
    }
    Ok(ViTParams {
        config: config.clone(),
        proj_w,
        proj_b: constant(&[e], 0.0, true),
        cls,
        pos,
        blocks,
        norm_gamma: constant(&[e], 1.0, true),
        norm_beta: constant(&[e], 0.0, true),
        head_w: uniform(&mut r, &[e, l], xavier(e, l), true),
        head_b: constant(&[l], 0.0, true),
    })
}

impl ViTParams {
    /// `(T+1)×E` tokens: CLS followed by the row-major grid cells.
    pub fn tokenize(&self, grid: &FeatureGrid) -> Result<Tensor> {
        let cfg = &self.config;
        let slot = cfg
            .supported_widths
            .iter()
            .position(|&w| w == grid.width)
            .ok_or_else(|| {
                Error::config(format!(
                    "vit: grid width {} not in supported widths {:?}",
                    grid.width, cfg.supported_widths
                ))
            })?;
        if grid.channels != cfg.in_channels || grid.grid != cfg.grid_size {
            return Err(Error::dim(format!(
                "vit: grid has C={} G={}, config expects C={} G={}",
                grid.channels, grid.grid, cfg.in_channels, cfg.grid_size
            )));
        }
        let t = cfg.token_count(grid.width);
        let cells = grid.data.reshape(&[t, cfg.in_channels])?;
        let projected = cells.matmul(&self.proj_w)?.add_row_bias(&self.proj_b)?;
        Tensor::concat_rows(&[self.cls.clone(), projected])?.add(&self.pos[slot])
    }

    /// Runs the encoder blocks, optionally capturing every attention matrix.
    pub fn encode(&self, tokens: &Tensor, record_attention: bool) -> Result<(Tensor, Option<AttentionRecord>)> {
        let e = self.config.embed_dim;
        let n = match tokens.shape() {
            &[n, w] if w == e => n,
            s => return Err(Error::dim(format!("vit: tokens {s:?}, expected N×{e}"))),
        };
        let heads = self.config.heads;
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut record = record_attention.then(|| AttentionRecord { tokens: n, layers: Vec::new() });
        let mut x = tokens.clone();
        for b in &self.blocks {
            let h = x.layer_norm(&b.ln1_gamma, &b.ln1_beta, LN_EPS)?;
            let q = h.matmul(&b.wq)?.add_row_bias(&b.bq)?;
            let k = h.matmul(&b.wk)?.add_row_bias(&b.bk)?;
            let v = h.matmul(&b.wv)?.add_row_bias(&b.bv)?;
            let mut outs = Vec::with_capacity(heads);
            let mut maps = Vec::with_capacity(heads);
            for hi in 0..heads {
                let qh = q.slice_cols(hi * d, d)?;
                let kh = k.slice_cols(hi * d, d)?;
                let vh = v.slice_cols(hi * d, d)?;
                let attn = qh.matmul(&kh.transpose()?)?.scale(scale).softmax();
                if record.is_some() {
                    maps.push(attn.to_vec());
                }
                outs.push(attn.matmul(&vh)?);
            }
            if let Some(r) = record.as_mut() {
                r.layers.push(maps);
            }
            let merged = if heads == 1 { outs.pop().unwrap() } else { Tensor::concat_cols(&outs)? };
            x = x.add(&merged.matmul(&b.wo)?.add_row_bias(&b.bo)?)?;
            let h2 = x.layer_norm(&b.ln2_gamma, &b.ln2_beta, LN_EPS)?;
            let mlp = h2
                .matmul(&b.w1)?
                .add_row_bias(&b.b1)?
                .gelu()
                .matmul(&b.w2)?
                .add_row_bias(&b.b2)?;
            x = x.add(&mlp)?;
        }
        Ok((x, record))
    }

    /// Label probabilities `[L]` from the CLS position.
    pub fn classify(&self, encoded: &Tensor) -> Result<Tensor> {
        let cls = encoded.slice_rows(0, 1)?;
        let logits = cls
            .layer_norm(&self.norm_gamma, &self.norm_beta, LN_EPS)?
            .matmul(&self.head_w)?
            .add_row_bias(&self.head_b)?;
        logits.sigmoid().reshape(&[self.config.n_labels])
    }

    pub fn forward(&self, grid: &FeatureGrid, record_attention: bool) -> Result<(Tensor, Option<AttentionRecord>)> {
        let tokens = self.tokenize(grid)?;
        let (encoded, record) = self.encode(&tokens, record_attention)?;
        Ok((self.classify(&encoded)?, record))
    }
}

impl Parameters for ViTParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "proj.w"), &self.proj_w);
        f(join(prefix, "proj.b"), &self.proj_b);
        f(join(prefix, "cls"), &self.cls);
        for (w, t) in self.config.supported_widths.iter().zip(&self.pos) {
            f(join(prefix, &format!("pos.w{w}")), t);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            for (name, t) in block_fields(b) {
                f(join(&p, name), t);
            }
        }
        f(join(prefix, "norm.gamma"), &self.norm_gamma);
        f(join(prefix, "norm.beta"), &self.norm_beta);
        f(join(prefix, "head.w"), &self.head_w);
        f(join(prefix, "head.b"), &self.head_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "proj.w"), &mut self.proj_w);
        f(join(prefix, "proj.b"), &mut self.proj_b);
        f(join(prefix, "cls"), &mut self.cls);
        for (w, t) in self.config.supported_widths.iter().zip(&mut self.pos) {
            f(join(prefix, &format!("pos.w{w}")), t);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            for (name, t) in block_fields_mut(b) {
                f(join(&p, name), t);
            }
        }
        f(join(prefix, "norm.gamma"), &mut self.norm_gamma);
        f(join(prefix, "norm.beta"), &mut self.norm_beta);
        f(join(prefix, "head.w"), &mut self.head_w);
        f(join(prefix, "head.b"), &mut self.head_b);
    }
}

fn block_fields(b: &Block) -> [(&'static str, &Tensor); 16] {
    [
        ("ln1.gamma", &b.ln1_gamma),
        ("ln1.beta", &b.ln1_beta),
        ("attn.wq", &b.wq),
        ("attn.bq", &b.bq),
        ("attn.wk", &b.wk),
        ("attn.bk", &b.bk),
        ("attn.wv", &b.wv),
        ("attn.bv", &b.bv),
        ("attn.wo", &b.wo),
        ("attn.bo", &b.bo),
        ("ln2.gamma", &b.ln2_gamma),
        ("ln2.beta", &b.ln2_beta),
        ("mlp.w1", &b.w1),
        ("mlp.b1", &b.b1),
        ("mlp.w2", &b.w2),
        ("mlp.b2", &b.b2),
    ]
}

fn block_fields_mut(b: &mut Block) -> [(&'static str, &mut Tensor); 16] {
    [
        ("ln1.gamma", &mut b.ln1_gamma),
        ("ln1.beta", &mut b.ln1_beta),
        ("attn.wq", &mut b.wq),
        ("attn.bq", &mut b.bq),
        ("attn.wk", &mut b.wk),
        ("attn.bk", &mut b.bk),
        ("attn.wv", &mut b.wv),
        ("attn.bv", &mut b.bv),
        ("attn.wo", &mut b.wo),
        ("attn.bo", &mut b.bo),
        ("ln2.gamma", &mut b.ln2_gamma),
        ("ln2.beta", &mut b.ln2_beta),
        ("mlp.w1", &mut b.w1),
        ("mlp.b1", &mut b.b1),
        ("mlp.w2", &mut b.w2),
        ("mlp.b2", &mut b.b2),
    ]
}

/// Rollout heatmap over the `(W·G)×(W·G)` spatial tokens, min-max scaled.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub heatmap: Tensor,
    /// Set when the CLS token carries no attention mass to any spatial token.
    pub degenerate: bool,
}

/// Head-averaged, identity-augmented attention multiplied across layers;
/// the CLS row over the spatial tokens becomes the heatmap.
pub fn attention_rollout(record: &AttentionRecord) -> Result<Rollout> {
    if record.layers.is_empty() {
        return Err(Error::contract("attention rollout needs at least one layer"));
    }
    let n = record.tokens;
    let t = n.checked_sub(1).filter(|&t| t > 0).ok_or_else(|| Error::contract("rollout: no spatial tokens"))?;
    let side = (t as f64).sqrt().round() as usize;
    if side * side != t {
        return Err(Error::dim(format!("rollout: {t} spatial tokens are not a square grid")));
    }
    let mut joint: Option<Vec<f64>> = None;
    for heads in &record.layers {
        if heads.is_empty() || heads.iter().any(|h| h.len() != n * n) {
            return Err(Error::dim(format!("rollout: attention maps must be {n}×{n}")));
        }
        let mut a = vec![0.0; n * n];
        for h in heads {
            a.iter_mut().zip(h).for_each(|(x, v)| *x += v);
        }
        let inv = 1.0 / heads.len() as f64;
        for (i, row) in a.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|x| *x *= inv);
            row[i] += 1.0;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        joint = Some(match joint {
            None => a,
            Some(prev) => {
                let mut out = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        let aik = a[i * n + k];
                        if aik == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            out[i * n + j] += aik * prev[k * n + j];
                        }
                    }
                }
                out
            }
        });
    }
    let joint = joint.expect("at least one layer");
    let cls_row = &joint[1..n];
    let (lo, hi) = cls_row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mass: f64 = cls_row.iter().sum();
    let (values, degenerate) = if hi - lo > 1e-15 {
        (cls_row.iter().map(|v| (v - lo) / (hi - lo)).collect(), false)
    } else if mass > 1e-15 {
        (vec![1.0; t], false)
    } else {
        (vec![0.0; t], true)
    };
    Ok(Rollout { heatmap: Tensor::new(&[side, side], values)?, degenerate })
}
