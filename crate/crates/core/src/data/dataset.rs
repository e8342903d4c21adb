//! In-memory studies ready for the model: views resized once and kept as
//! 8-bit pixels, expanded to normalized tile batches on demand.

use super::image::RgbImage;
use super::manifest::Manifest;
use crate::assembly::{choose_grid_width, synthesize_views, TileProvenance};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StudySample {
    pub id: String,
    /// Interleaved RGB bytes, `size × size`.
    pub views: Vec<Vec<u8>>,
    pub view_targets: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub image_size: usize,
    pub studies: Vec<StudySample>,
}

/// The `W²` normalized tiles of one study.
#[derive(Debug, Clone)]
pub struct TileBatch {
    pub images: Tensor,
    pub width: usize,
    pub provenance: Vec<TileProvenance>,
}

impl Dataset {
    /// Loads and resizes every view of `manifest` to `image_size`.
    pub fn load(manifest: &Manifest, image_size: usize, exec: Exec) -> Result<Dataset> {
        let studies = exec.map(manifest.studies.len(), |i| -> Result<StudySample> {
            let st = &manifest.studies[i];
            let views = (0..st.n_views())
                .map(|k| {
                    let img = RgbImage::load(&manifest.view_path(st, k))?;
                    Ok(img.resize(image_size, image_size).to_rgb8())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StudySample {
                id: st.id.clone(),
                views,
                view_targets: st.view_labels.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
                targets: st.study_labels.iter().map(|&v| v as f64).collect(),
            })
        });
        Ok(Dataset {
            labels: manifest.labels.clone(),
            image_size,
            studies: studies.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn from_images(labels: Vec<String>, image_size: usize, studies: Vec<(String, Vec<RgbImage>, Vec<Vec<u8>>)>) -> Result<Dataset> {
        let studies = studies
            .into_iter()
            .map(|(id, imgs, view_labels)| {
                let targets = super::manifest::aggregate_study_labels(&view_labels)?;
                Ok(StudySample {
                    id,
                    views: imgs.iter().map(|im| im.resize(image_size, image_size).to_rgb8()).collect(),
                    view_targets: view_labels.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
                    targets: targets.into_iter().map(f64::from).collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { labels, image_size, studies })
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn view_image(&self, study: usize, view: usize) -> RgbImage {
        let s = self.image_size;
        RgbImage::from_rgb8(s, s, &self.studies[study].views[view])
    }

    /// All original views of a study as a `n×3×S×S` batch.
    pub fn view_batch(&self, study: usize) -> Tensor {
        let n = self.studies[study].views.len();
        stack_images((0..n).map(|k| self.view_image(study, k)))
    }

    /// Originals plus augmented padding up to `W²` tiles. The augmentation
    /// stream is keyed by study id, so a study always gets the same tiles.
    pub fn tiles(&self, study: usize, seed: u64) -> Result<TileBatch> {
        let st = &self.studies[study];
        let width = choose_grid_width(st.views.len())?;
        let imgs: Vec<RgbImage> = (0..st.views.len()).map(|k| self.view_image(study, k)).collect();
        let aug_seed = rng::derive_seed(seed, "augment", rng::hash_str(&st.id));
        let padded = synthesize_views(&imgs, width * width, aug_seed)?;
        let provenance = padded.iter().map(|(_, p)| p.clone()).collect();
        Ok(TileBatch { images: stack_images(padded.into_iter().map(|(im, _)| im)), width, provenance })
    }

    /// Studies restricted to a label subset (targets re-indexed).
    pub fn select_labels(&self, subset: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = subset.iter().find(|&&j| j >= self.n_labels()) {
            return Err(Error::config(format!(
                "label index {bad} out of range for {} labels",
                self.n_labels()
            )));
        }
        let pick = |v: &Vec<f64>| subset.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Ok(Dataset {
            labels: subset.iter().map(|&j| self.labels[j].clone()).collect(),
            image_size: self.image_size,
            studies: self
                .studies
                .iter()
                .map(|s| StudySample {
                    id: s.id.clone(),
                    views: s.views.clone(),
                    view_targets: s.view_targets.iter().map(pick).collect(),
                    targets: pick(&s.targets),
                })
                .collect(),
        })
    }
}

fn stack_images(imgs: impl Iterator<Item = RgbImage>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    let mut hw = (0, 0);
    for im in imgs {
        hw = (im.height, im.width);
        data.extend_from_slice(im.normalize().data());
        n += 1;
    }
    Tensor::new(&[n, 3, hw.0, hw.1], data).expect("uniform image sizes")
}
