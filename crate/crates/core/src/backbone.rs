//! Convolutional feature extractor shared by every view of a study.
//!
//! Each stage is `conv(k×k, same padding) → group norm → ReLU → pool(f)`,
//! followed by a 1×1 projection to the output channel count. A `B×3×S×S`
//! batch becomes `B×C×G×G` with `S = G · Π f`.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{constant, join, uniform, Conv2dSpec, Parameters, Pool, Tensor};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub downsample: Vec<usize>,
    pub kernel_size: usize,
    pub norm_groups: usize,
    pub pool: Pool,
    pub out_channels: usize,
    pub out_grid: usize,
}

impl BackboneConfig {
    /// 64×64 views, 32 channels on a 4×4 grid.
    pub fn desk() -> Self {
        BackboneConfig {
            input_size: 64,
            stage_channels: vec![16, 32],
            downsample: vec![4, 4],
            kernel_size: 3,
            norm_groups: 4,
            pool: Pool::Max,
            out_channels: 32,
            out_grid: 4,
        }
    }

    /// 320×320 views to a 10×10×1024 feature map.
    pub fn paper() -> Self {
        BackboneConfig {
            input_size: 320,
            stage_channels: vec![64, 128, 256, 512, 1024],
            downsample: vec![2, 2, 2, 2, 2],
            kernel_size: 3,
            norm_groups: 32,
            pool: Pool::Max,
            out_channels: 1024,
            out_grid: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.downsample.len() {
            return Err(Error::config(format!(
                "backbone: {} stage channel counts but {} downsample factors",
                self.stage_channels.len(),
                self.downsample.len()
            )));
        }
        if self.out_channels == 0 || self.out_grid == 0 {
            return Err(Error::config("backbone: out_channels and out_grid must be >= 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("backbone: kernel_size must be odd"));
        }
        let factor: usize = self.downsample.iter().product();
        if factor == 0 || factor * self.out_grid != self.input_size {
            return Err(Error::config(format!(
                "backbone: downsample product {factor} × out_grid {} != input_size {}",
                self.out_grid, self.input_size
            )));
        }
        if let Some(c) = self
            .stage_channels
            .iter()
            .find(|&&c| c == 0 || self.norm_groups == 0 || c % self.norm_groups != 0)
        {
            return Err(Error::config(format!(
                "backbone: norm_groups {} does not divide stage channels {c}",
                self.norm_groups
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub stages: Vec<Stage>,
    pub proj_kernel: Tensor,
    pub proj_bias: Tensor,
    frozen: bool,
}

/// Fan-in scaled uniform initialization, reproducible bitwise from `seed`.
pub fn init_backbone(config: &BackboneConfig, seed: u64) -> Result<BackboneParams> {
    config.validate()?;
    let mut rng = rng::stream(seed, "init.backbone", 0);
    let k = config.kernel_size;
    let mut cin = IMAGE_CHANNELS;
    let mut stages = Vec::with_capacity(config.stage_channels.len());
    for &cout in &config.stage_channels {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        stages.push(Stage {
            kernel: uniform(&mut rng, &[cout, cin, k, k], bound, true),
            bias: constant(&[cout], 0.0, true),
            gamma: constant(&[cout], 1.0, true),
            beta: constant(&[cout], 0.0, true),
        });
        cin = cout;
    }
    let bound = (3.0 / cin as f64).sqrt();
    Ok(BackboneParams {
        config: config.clone(),
        stages,
        proj_kernel: uniform(&mut rng, &[config.out_channels, cin, 1, 1], bound, true),
        proj_bias: constant(&[config.out_channels], 0.0, true),
        frozen: false,
    })
}

impl BackboneParams {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen parameters never record gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        if self.frozen != frozen {
            self.frozen = frozen;
            self.set_trainable(!frozen);
        }
    }

    /// `B×3×S×S → B×C×G×G`.
    pub fn extract_features(&self, batch: &Tensor) -> Result<Tensor> {
        let s = self.config.input_size;
        if batch.rank() != 4 || batch.shape()[1..] != [IMAGE_CHANNELS, s, s] {
            return Err(Error::dim(format!(
                "backbone expects B×{IMAGE_CHANNELS}×{s}×{s}, got {:?}",
                batch.shape()
            )));
        }
        let pad = self.config.kernel_size / 2;
        let mut x = batch.clone();
        for (stage, &f) in self.stages.iter().zip(&self.config.downsample) {
            x = x
                .conv2d(&stage.kernel, Conv2dSpec { stride: 1, padding: pad })?
                .add_channel_bias(&stage.bias)?
                .group_norm(self.config.norm_groups, &stage.gamma, &stage.beta, 1e-5)?
                .relu();
            if f > 1 {
                x = x.pool2d(f, self.config.pool)?;
            }
        }
        x.conv2d(&self.proj_kernel, Conv2dSpec::default())?
            .add_channel_bias(&self.proj_bias)
    }
}

impl Parameters for BackboneParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            f(join(&p, "kernel"), &s.kernel);
            f(join(&p, "bias"), &s.bias);
            f(join(&p, "gamma"), &s.gamma);
            f(join(&p, "beta"), &s.beta);
        }
        f(join(prefix, "proj.kernel"), &self.proj_kernel);
        f(join(prefix, "proj.bias"), &self.proj_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            f(join(&p, "kernel"), &mut s.kernel);
            f(join(&p, "bias"), &mut s.bias);
            f(join(&p, "gamma"), &mut s.gamma);
            f(join(&p, "beta"), &mut s.beta);
        }
        f(join(prefix, "proj.kernel"), &mut self.proj_kernel);
        f(join(prefix, "proj.bias"), &mut self.proj_bias);
    }
}
