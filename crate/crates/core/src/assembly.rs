//! Square concatenation of per-view feature maps.
//!
//! A study with `n` views is padded to `W²` images (`W = max(2, ⌈√n⌉)`) by
//! augmenting originals in image space, every image goes through the
//! backbone, and the `W²` maps of shape `C×G×G` are tiled row-major into a
//! `(W·G)×(W·G)×C` grid.

use std::fmt;

use rand::Rng;

use crate::data::image::RgbImage;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const MAX_VIEWS: usize = 16;
pub const SUPPORTED_WIDTHS: [usize; 3] = [2, 3, 4];

pub fn choose_grid_width(n_views: usize) -> Result<usize> {
    if n_views == 0 {
        return Err(Error::contract("a study needs at least one view"));
    }
    if n_views > MAX_VIEWS {
        return Err(Error::Capacity(format!(
            "StudyFormer accepts at most {MAX_VIEWS} views, got {n_views}"
        )));
    }
    let mut w = 2;
    while w * w < n_views {
        w += 1;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    FlipHorizontal,
    FlipVertical,
    /// Clockwise, one of 90, 180, 270 degrees.
    Rotate(u16),
    Brightness(f64),
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::FlipHorizontal => write!(f, "hflip"),
            Transform::FlipVertical => write!(f, "vflip"),
            Transform::Rotate(d) => write!(f, "rot{d}"),
            Transform::Brightness(s) => write!(f, "bright{s:.4}"),
        }
    }
}

/// Ordered image-space transforms drawn from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationDescriptor {
    pub transforms: Vec<Transform>,
    pub seed: u64,
}

impl AugmentationDescriptor {
    pub fn from_seed(seed: u64) -> Self {
        let mut r = rng::stream(seed, "augment.descriptor", 0);
        let mut transforms = Vec::new();
        if r.gen_bool(0.5) {
            transforms.push(Transform::FlipHorizontal);
        }
        if r.gen_bool(0.5) {
            transforms.push(Transform::FlipVertical);
        }
        match r.gen_range(0..4u16) {
            0 => {}
            q => transforms.push(Transform::Rotate(q * 90)),
        }
        transforms.push(Transform::Brightness(r.gen_range(0.8..=1.2)));
        AugmentationDescriptor { transforms, seed }
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        self.transforms.iter().fold(img.clone(), |acc, t| apply_transform(&acc, *t))
    }
}

impl fmt::Display for AugmentationDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.transforms.iter().map(|t| t.to_string()).collect();
        write!(f, "{} seed={}", parts.join("+"), self.seed)
    }
}

fn apply_transform(img: &RgbImage, t: Transform) -> RgbImage {
    let (w, h) = (img.width, img.height);
    match t {
        Transform::Brightness(s) => RgbImage {
            data: img.data.iter().map(|v| (v * s).clamp(0.0, 1.0)).collect(),
            ..img.clone()
        },
        Transform::FlipHorizontal => remap(img, w, h, |y, x| (y, w - 1 - x)),
        Transform::FlipVertical => remap(img, w, h, |y, x| (h - 1 - y, x)),
        Transform::Rotate(90) => remap(img, h, w, |y, x| (h - 1 - x, y)),
        Transform::Rotate(180) => remap(img, w, h, |y, x| (h - 1 - y, w - 1 - x)),
        Transform::Rotate(270) => remap(img, h, w, |y, x| (x, w - 1 - y)),
        Transform::Rotate(d) => panic!("unsupported rotation {d}"),
    }
}

/// Builds an `out_w × out_h` image whose pixel `(y, x)` is read from `src(y, x)`.
fn remap(img: &RgbImage, out_w: usize, out_h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> RgbImage {
    let mut out = RgbImage::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx) = src(y, x);
            for c in 0..3 {
                out.set(c, y, x, img.get(c, sy, sx));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum TileSource {
    Original,
    Augmented(AugmentationDescriptor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileProvenance {
    pub source_view: usize,
    pub source: TileSource,
}

impl TileProvenance {
    pub fn original(view: usize) -> Self {
        TileProvenance { source_view: view, source: TileSource::Original }
    }

    pub fn is_original(&self) -> bool {
        self.source == TileSource::Original
    }
}

impl fmt::Display for TileProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            TileSource::Original => write!(f, "original view {}", self.source_view + 1),
            TileSource::Augmented(d) => write!(
                f,
                "augmented from view {} ({d})",
                self.source_view + 1
            ),
        }
    }
}

/// Pads `views` to `target` images: the originals in order, then augmented
/// copies of views cycled from the first.
pub fn synthesize_views(
    views: &[RgbImage],
    target: usize,
    seed: u64,
) -> Result<Vec<(RgbImage, TileProvenance)>> {
    let n = views.len();
    if n == 0 || n > target {
        return Err(Error::contract(format!(
            "synthesize_views: {n} views for {target} tiles"
        )));
    }
    let mut out: Vec<(RgbImage, TileProvenance)> = views
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), TileProvenance::original(i)))
        .collect();
    for k in n..target {
        let src = (k - n) % n;
        let desc = AugmentationDescriptor::from_seed(rng::derive_seed(seed, "augment", k as u64));
        out.push((
            desc.apply(&views[src]),
            TileProvenance { source_view: src, source: TileSource::Augmented(desc) },
        ));
    }
    Ok(out)
}

/// `(W·G)×(W·G)×C` tiling of per-view feature maps.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    pub data: Tensor,
    pub width: usize,
    pub grid: usize,
    pub channels: usize,
    pub provenance: Vec<TileProvenance>,
}

impl FeatureGrid {
    pub fn side(&self) -> usize {
        self.width * self.grid
    }

    pub fn with_provenance(mut self, provenance: Vec<TileProvenance>) -> Result<Self> {
        if provenance.len() != self.width * self.width {
            return Err(Error::dim(format!(
                "{} provenance records for {} tiles",
                provenance.len(),
                self.width * self.width
            )));
        }
        self.provenance = provenance;
        Ok(self)
    }

    /// Feature map at tile `k` (row-major), as `C×G×G`.
    pub fn tile(&self, k: usize) -> Tensor {
        let (g, c, side) = (self.grid, self.channels, self.side());
        let (r0, c0) = ((k / self.width) * g, (k % self.width) * g);
        let src = self.data.data();
        Tensor::from_fn(&[c, g, g], |i| {
            let (ch, y, x) = (i / (g * g), (i / g) % g, i % g);
            src[((r0 + y) * side + c0 + x) * c + ch]
        })
    }
}

/// Row-major placement: map `k` lands at tile `(k / W, k % W)`.
pub fn assemble_square(features: &[Tensor], width: usize) -> Result<FeatureGrid> {
    if features.len() != width * width {
        return Err(Error::dim(format!(
            "assemble_square: {} maps for width {width}",
            features.len()
        )));
    }
    let first = &features[0];
    let [c, g, g2] = match first.shape() {
        &[c, g, g2] => [c, g, g2],
        s => return Err(Error::dim(format!("assemble_square: feature map shape {s:?}"))),
    };
    if g != g2 {
        return Err(Error::dim(format!("assemble_square: non-square map {:?}", first.shape())));
    }
    if let Some(bad) = features.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::dim(format!(
            "assemble_square: inconsistent maps {:?} and {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let side = width * g;
    // position in the grid of element (k, ch, y, x)
    let index = move |k: usize, i: usize| {
        let (ch, y, x) = (i / (g * g), (i / g) % g, i % g);
        let (r0, c0) = ((k / width) * g, (k % width) * g);
        ((r0 + y) * side + c0 + x) * c + ch
    };
    let mut data = vec![0.0; side * side * c];
    for (k, f) in features.iter().enumerate() {
        for (i, &v) in f.data().iter().enumerate() {
            data[index(k, i)] = v;
        }
    }
    let per = c * g * g;
    let count = features.len();
    let tensor = Tensor::from_op(vec![side, side, c], data, "assemble_square", features.to_vec(), move |gr| {
        (0..count)
            .map(|k| Some((0..per).map(|i| gr[index(k, i)]).collect()))
            .collect()
    });
    Ok(FeatureGrid {
        data: tensor,
        width,
        grid: g,
        channels: c,
        provenance: (0..count).map(TileProvenance::original).collect(),
    })
}
