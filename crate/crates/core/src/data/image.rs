//! RGB images in `[0, 1]`, PNM file I/O, bilinear resizing and ImageNet
//! normalization.

use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Channel-planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `3 × height × width`, row-major per plane.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn from_rgb8(width: usize, height: usize, interleaved: &[u8]) -> Self {
        let mut img = RgbImage::new(width, height);
        for (i, px) in interleaved.chunks_exact(3).enumerate() {
            for c in 0..3 {
                img.data[c * width * height + i] = px[c] as f64 / 255.0;
            }
        }
        img
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push(to_u8(self.data[c * n + i]));
            }
        }
        out
    }

    /// Decodes a binary PPM (P6) or PGM (P5); gray is replicated to RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let input_err = |msg: String| Error::Input { path: path.to_path_buf(), msg };
        let bytes = std::fs::read(path).map_err(|e| input_err(e.to_string()))?;
        let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| input_err(e.to_string()))?;
        let rgb = decoded.to_rgb8();
        Ok(RgbImage::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        write_pnm(path, self.width, self.height, &self.to_rgb8(), ExtendedColorType::Rgb8)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let axis = |dst: usize, scale: f64, len: usize| {
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - i0 as f64)
        };
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = axis(x, sx, self.width);
                for c in 0..3 {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    /// Per-channel `(x - mean) / std` as a `3 × H × W` tensor.
    pub fn normalize(&self) -> Tensor {
        let plane = self.width * self.height;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane;
                (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
            })
            .collect();
        Tensor::new(&[3, self.height, self.width], data).expect("consistent image shape")
    }
}

/// Resizes to `size × size` and normalizes with the ImageNet statistics.
pub fn preprocess_image(raw: &RgbImage, size: usize) -> Result<Tensor> {
    if size < 8 {
        return Err(Error::contract(format!("preprocess: target size {size} < 8")));
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::contract("preprocess: empty image"));
    }
    Ok(raw.resize(size, size).normalize())
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_pnm(path, width, height, pixels, ExtendedColorType::L8)
}

fn write_pnm(path: &Path, width: usize, height: usize, pixels: &[u8], color: ExtendedColorType) -> Result<()> {
    let subtype = match color {
        ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
        _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
    };
    let mut buf = Vec::with_capacity(pixels.len() + 32);
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(pixels, width as u32, height as u32, color)
        .map_err(|e| Error::Input { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}
