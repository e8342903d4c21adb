//! Neural-network kernels: convolution, pooling, normalization, softmax and
//! the probability-space losses.

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the losses.
pub const LOSS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, padding: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Max,
    Avg,
}

fn dims4(op: &str, t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::dim(format!("{op}: expected rank 4, got shape {s:?}"))),
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image `[cin, h, w]` into a `k × n` patch matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let n = self.n();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &img[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters patch gradients back.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let n = self.n();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut img[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&self, kernel: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
        let [b, cin, h, w] = dims4("conv2d input", self)?;
        let [cout, kcin, kh, kw] = dims4("conv2d kernel", kernel)?;
        if cin != kcin {
            return Err(Error::dim(format!(
                "conv2d: input {:?} has {cin} channels, kernel {:?} expects {kcin}",
                self.shape(),
                kernel.shape()
            )));
        }
        if spec.stride == 0 {
            return Err(Error::contract("conv2d: stride must be positive"));
        }
        let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
        if ph < kh || pw < kw {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            ho: (ph - kh) / spec.stride + 1,
            wo: (pw - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        };
        let (k, n) = (geom.k(), geom.n());
        let img_len = cin * h * w;
        let mut out = vec![0.0; b * cout * n];
        {
            let x = self.data();
            let kmat = MatRef::new(kernel.data(), cout, k);
            Exec::kernel().for_chunks(&mut out, cout * n, |bi, dst| {
                let mut cols = vec![0.0; k * n];
                geom.im2col(&x[bi * img_len..(bi + 1) * img_len], &mut cols);
                gemm(kmat, MatRef::new(&cols, k, n), dst, 0.0);
            });
        }
        let shape = vec![b, cout, geom.ho, geom.wo];
        let (input, kern) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            shape,
            out,
            "conv2d",
            vec![self.clone(), kernel.clone()],
            move |g| {
                let x = input.data();
                let gk = kern.requires_grad().then(|| {
                    let partials = Exec::kernel().map(b, |bi| {
                        let mut cols = vec![0.0; k * n];
                        geom.im2col(&x[bi * img_len..(bi + 1) * img_len], &mut cols);
                        let mut part = vec![0.0; cout * k];
                        let gb = MatRef::new(&g[bi * cout * n..(bi + 1) * cout * n], cout, n);
                        gemm(gb, MatRef::new(&cols, k, n).t(), &mut part, 0.0);
                        part
                    });
                    let mut total = vec![0.0; cout * k];
                    for p in partials {
                        total.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                    }
                    total
                });
                let gx = input.requires_grad().then(|| {
                    let mut gx = vec![0.0; b * img_len];
                    let kmat = MatRef::new(kern.data(), cout, k);
                    Exec::kernel().for_chunks(&mut gx, img_len, |bi, dst| {
                        let mut dcols = vec![0.0; k * n];
                        let gb = MatRef::new(&g[bi * cout * n..(bi + 1) * cout * n], cout, n);
                        gemm(kmat.t(), gb, &mut dcols, 0.0);
                        geom.col2im(&dcols, dst);
                    });
                    gx
                });
                vec![gx, gk]
            },
        ))
    }

    /// Adds one bias value per channel of a `[B, C, H, W]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let [_, c, h, w] = dims4("add_channel_bias", self)?;
        if bias.shape() != [c] {
            return Err(Error::dim(format!(
                "add_channel_bias: bias {:?} for input {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let hw = h * w;
        let mut data = self.to_vec();
        for (i, plane) in data.chunks_mut(hw).enumerate() {
            let bv = bias.data()[i % c];
            plane.iter_mut().for_each(|x| *x += bv);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add_channel_bias",
            vec![self.clone(), bias.clone()],
            move |g| {
                let mut gb = vec![0.0; c];
                for (i, plane) in g.chunks(hw).enumerate() {
                    gb[i % c] += plane.iter().sum::<f64>();
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        ))
    }

    /// Non-overlapping `k×k` pooling with stride `k`.
    pub fn pool2d(&self, k: usize, kind: Pool) -> Result<Tensor> {
        let [b, c, h, w] = dims4("pool2d", self)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::dim(format!(
                "pool2d: window {k} does not tile {h}×{w}"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let planes = b * c;
        let x = self.data();
        let mut out = vec![0.0; planes * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = p * ho * wo + oy * wo + ox;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    let mut sum = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = (oy * k + dy) * w + ox * k + dx;
                            let v = src[i];
                            sum += v;
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    out[o] = match kind {
                        Pool::Max => best,
                        Pool::Avg => sum / (k * k) as f64,
                    };
                    arg[o] = p * h * w + best_i;
                }
            }
        }
        let tag = match kind {
            Pool::Max => "max_pool2d",
            Pool::Avg => "avg_pool2d",
        };
        let total = self.numel();
        Ok(Tensor::from_op(vec![b, c, ho, wo], out, tag, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            match kind {
                Pool::Max => {
                    for (&src, &gv) in arg.iter().zip(g) {
                        gi[src] += gv;
                    }
                }
                Pool::Avg => {
                    let inv = 1.0 / (k * k) as f64;
                    for p in 0..planes {
                        for y in 0..h {
                            for xx in 0..w {
                                gi[p * h * w + y * w + xx] =
                                    g[p * ho * wo + (y / k) * wo + xx / k] * inv;
                            }
                        }
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Mean over the spatial extents: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let [b, c, h, w] = dims4("global_avg_pool", self)?;
        let hw = h * w;
        let out = self.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        Ok(Tensor::from_op(vec![b, c], out, "global_avg_pool", vec![self.clone()], move |g| {
            let inv = 1.0 / hw as f64;
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(hw)).collect())]
        }))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&self) -> Tensor {
        let t = *self.shape().last().expect("rank >= 1");
        let mut y = self.to_vec();
        for row in y.chunks_mut(t) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = y.clone();
        Tensor::from_op(self.shape().to_vec(), y, "softmax", vec![self.clone()], move |g| {
            let mut gi = vec![0.0; g.len()];
            for ((gr, yr), dst) in g.chunks(t).zip(out.chunks(t)).zip(gi.chunks_mut(t)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(gi)]
        })
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().expect("rank >= 1");
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dim(format!(
                "layer_norm: affine {:?}/{:?} for rows of width {d}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let stats = Standardized::compute(self.data(), d, eps);
        let mut y = stats.xhat.clone();
        for row in y.chunks_mut(d) {
            for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
                *v = *v * g + b;
            }
        }
        let gam = gamma.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                let mut dxhat = vec![0.0; g.len()];
                for (r, grow) in g.chunks(d).enumerate() {
                    for j in 0..d {
                        let gv = grow[j];
                        gg[j] += gv * stats.xhat[r * d + j];
                        gb[j] += gv;
                        dxhat[r * d + j] = gv * gam.data()[j];
                    }
                }
                vec![Some(stats.backward(&dxhat)), Some(gg), Some(gb)]
            },
        ))
    }

    /// Group normalization of `[B, C, H, W]` with per-channel affine.
    pub fn group_norm(&self, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let [_, c, h, w] = dims4("group_norm", self)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::dim(format!(
                "group_norm: {groups} groups do not divide {c} channels"
            )));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::dim(format!(
                "group_norm: affine {:?}/{:?} for {c} channels",
                gamma.shape(),
                beta.shape()
            )));
        }
        let hw = h * w;
        let group_len = (c / groups) * hw;
        let stats = Standardized::compute(self.data(), group_len, eps);
        let mut y = stats.xhat.clone();
        for (i, plane) in y.chunks_mut(hw).enumerate() {
            let ch = i % c;
            let (gv, bv) = (gamma.data()[ch], beta.data()[ch]);
            plane.iter_mut().for_each(|v| *v = *v * gv + bv);
        }
        let gam = gamma.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "group_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut dxhat = vec![0.0; g.len()];
                for (i, plane) in g.chunks(hw).enumerate() {
                    let ch = i % c;
                    let gm = gam.data()[ch];
                    for (j, &gv) in plane.iter().enumerate() {
                        let idx = i * hw + j;
                        gg[ch] += gv * stats.xhat[idx];
                        gb[ch] += gv;
                        dxhat[idx] = gv * gm;
                    }
                }
                vec![Some(stats.backward(&dxhat)), Some(gg), Some(gb)]
            },
        ))
    }

    /// Mean binary cross-entropy between probabilities and `{0,1}` targets.
    pub fn bce(&self, targets: &Tensor) -> Result<Tensor> {
        self.elementwise_loss("bce", targets, bce_element, bce_derivative)
    }

    /// Mean focal loss `-alpha (1 - p_t)^gamma ln p_t`.
    pub fn focal(&self, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
        self.elementwise_loss(
            "focal",
            targets,
            move |p, y| focal_element(p, y, alpha, gamma),
            move |p, y| focal_derivative(p, y, alpha, gamma),
        )
    }

    fn elementwise_loss(
        &self,
        op: &'static str,
        targets: &Tensor,
        value: impl Fn(f64, f64) -> f64,
        derivative: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Tensor> {
        if self.shape() != targets.shape() {
            return Err(Error::dim(format!(
                "{op}: probabilities {:?} vs targets {:?}",
                self.shape(),
                targets.shape()
            )));
        }
        let n = self.numel() as f64;
        let total = self
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| value(p, y))
            .sum::<f64>()
            / n;
        let (p, y) = (self.clone(), targets.clone());
        Ok(Tensor::from_op(vec![1], vec![total], op, vec![self.clone()], move |g| {
            let scale = g[0] / n;
            let gi = p
                .data()
                .iter()
                .zip(y.data())
                .map(|(&p, &y)| {
                    if (LOSS_CLAMP..=1.0 - LOSS_CLAMP).contains(&p) {
                        scale * derivative(p, y)
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Some(gi)]
        }))
    }
}

/// Per-element binary cross-entropy with clamped probability.
pub fn bce_element(p: f64, y: f64) -> f64 {
    let pc = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// Per-element focal loss with clamped probability.
pub fn focal_element(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let pc = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    let pt = if y >= 0.5 { pc } else { 1.0 - pc };
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

fn bce_derivative(p: f64, y: f64) -> f64 {
    -y / p + (1.0 - y) / (1.0 - p)
}

fn focal_derivative(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let (pt, sign) = if y >= 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    let modulating = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pt.ln() };
    // d/dpt of -alpha q^gamma ln pt, chained through dpt/dp = sign
    sign * -alpha * (q.powf(gamma) / pt - modulating)
}

/// Zero-mean unit-variance groups of contiguous elements, kept for backward.
struct Standardized {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    len: usize,
}

impl Standardized {
    fn compute(x: &[f64], len: usize, eps: f64) -> Self {
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / len);
        for (src, dst) in x.chunks(len).zip(xhat.chunks_mut(len)) {
            let mean = src.iter().sum::<f64>() / len as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv_std.push(is);
        }
        Standardized { xhat, inv_std, len }
    }

    fn backward(&self, dxhat: &[f64]) -> Vec<f64> {
        let len = self.len as f64;
        let mut dx = vec![0.0; dxhat.len()];
        for (gi, ((dh, xh), out)) in dxhat
            .chunks(self.len)
            .zip(self.xhat.chunks(self.len))
            .zip(dx.chunks_mut(self.len))
            .enumerate()
        {
            let mean_dh = dh.iter().sum::<f64>() / len;
            let mean_dhx = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / len;
            for ((o, d), x) in out.iter_mut().zip(dh).zip(xh) {
                *o = self.inv_std[gi] * (d - mean_dh - x * mean_dhx);
            }
        }
        dx
    }
}
