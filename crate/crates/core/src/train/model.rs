//! The three trainable model families sharing one backbone contract.

use std::fmt;
use std::str::FromStr;

use crate::assembly::{assemble_square, TileProvenance};
use crate::backbone::{init_backbone, BackboneConfig, BackboneParams};
use crate::data::{Dataset, StudySample};
use crate::error::{Error, Result};
use crate::eval::mvcnn::{init_mvcnn_head, mvcnn_forward, MvcnnConfig, MvcnnHead};
use crate::eval::single_view_max_baseline;
use crate::kv::{join_list, KeyValues};
use crate::tensor::{no_grad, Parameters, Pool, Tensor};
use crate::vit::{init_vit, AttentionRecord, ViTConfig, ViTParams};

use super::adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Square concatenation + ViT.
    StudyFormer,
    /// Max view pooling + conv head.
    Mvcnn,
    /// The conv head on each view alone; study score is the max over views.
    SingleView,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::StudyFormer => "studyformer",
            ModelKind::Mvcnn => "mvcnn",
            ModelKind::SingleView => "single-view",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "studyformer" => Ok(ModelKind::StudyFormer),
            "mvcnn" => Ok(ModelKind::Mvcnn),
            "single-view" => Ok(ModelKind::SingleView),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture hyperparameters of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub backbone: BackboneConfig,
    pub vit: ViTConfig,
    pub mvcnn_hidden: usize,
}

impl ModelSpec {
    pub fn desk(kind: ModelKind) -> Self {
        ModelSpec { kind, backbone: BackboneConfig::desk(), vit: ViTConfig::desk(), mvcnn_hidden: 32 }
    }

    pub fn paper(kind: ModelKind) -> Self {
        ModelSpec { kind, backbone: BackboneConfig::paper(), vit: ViTConfig::paper(), mvcnn_hidden: 256 }
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        let b = &self.backbone;
        kv.set("model.kind", self.kind);
        kv.set("backbone.input_size", b.input_size);
        kv.set("backbone.stage_channels", join_list(&b.stage_channels));
        kv.set("backbone.downsample", join_list(&b.downsample));
        kv.set("backbone.kernel_size", b.kernel_size);
        kv.set("backbone.norm_groups", b.norm_groups);
        kv.set("backbone.pool", if b.pool == Pool::Max { "max" } else { "avg" });
        kv.set("backbone.out_channels", b.out_channels);
        kv.set("backbone.out_grid", b.out_grid);
        let v = &self.vit;
        kv.set("vit.depth", v.depth);
        kv.set("vit.heads", v.heads);
        kv.set("vit.mlp_dim", v.mlp_dim);
        kv.set("vit.embed_dim", v.embed_dim);
        kv.set("vit.supported_widths", join_list(&v.supported_widths));
        kv.set("mvcnn.hidden", self.mvcnn_hidden);
    }

    /// Overlays any `model.*`, `backbone.*`, `vit.*`, `mvcnn.*` keys onto `self`.
    pub fn overlay_kv(mut self, kv: &mut KeyValues) -> Result<Self> {
        if let Some(k) = kv.get::<ModelKind>("model.kind")? {
            self.kind = k;
        }
        let b = &mut self.backbone;
        b.input_size = kv.get_or("backbone.input_size", b.input_size)?;
        if let Some(v) = kv.get_list("backbone.stage_channels")? {
            b.stage_channels = v;
        }
        if let Some(v) = kv.get_list("backbone.downsample")? {
            b.downsample = v;
        }
        b.kernel_size = kv.get_or("backbone.kernel_size", b.kernel_size)?;
        b.norm_groups = kv.get_or("backbone.norm_groups", b.norm_groups)?;
        if let Some(p) = kv.raw("backbone.pool") {
            b.pool = match p.as_str() {
                "max" => Pool::Max,
                "avg" => Pool::Avg,
                other => return Err(Error::config(format!("invalid value {other:?} for key backbone.pool"))),
            };
        }
        b.out_channels = kv.get_or("backbone.out_channels", b.out_channels)?;
        b.out_grid = kv.get_or("backbone.out_grid", b.out_grid)?;
        let v = &mut self.vit;
        v.depth = kv.get_or("vit.depth", v.depth)?;
        v.heads = kv.get_or("vit.heads", v.heads)?;
        v.mlp_dim = kv.get_or("vit.mlp_dim", v.mlp_dim)?;
        v.embed_dim = kv.get_or("vit.embed_dim", v.embed_dim)?;
        if let Some(w) = kv.get_list("vit.supported_widths")? {
            v.supported_widths = w;
        }
        self.mvcnn_hidden = kv.get_or("mvcnn.hidden", self.mvcnn_hidden)?;
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Vit(ViTParams),
    Conv(MvcnnHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub stage: u8,
    /// Epoch index within its stage, from 0.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Progress {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub history: Vec<EpochLog>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub spec: ModelSpec,
    pub backbone: BackboneParams,
    pub head: Head,
    /// Names of the labels the head emits.
    pub labels: Vec<String>,
    /// Position of each emitted label in the dataset vocabulary.
    pub label_indices: Vec<usize>,
    /// Keys initialization and tile augmentation.
    pub seed: u64,
    pub optimizer: Adam,
    pub progress: Progress,
}

/// Backbone output for one study, before the head.
#[derive(Debug, Clone)]
pub struct StudyFeatures {
    /// `K×C×G×G`: `W²` tiles for StudyFormer, the original views otherwise.
    pub maps: Tensor,
    pub width: usize,
    pub provenance: Vec<TileProvenance>,
}

impl ModelBundle {
    /// Fresh bundle over `vocabulary`, optionally restricted to `label_subset`.
    pub fn init(spec: &ModelSpec, vocabulary: &[String], label_subset: Option<&[usize]>, seed: u64) -> Result<Self> {
        let label_indices: Vec<usize> = match label_subset {
            Some(s) => s.to_vec(),
            None => (0..vocabulary.len()).collect(),
        };
        if label_indices.is_empty() {
            return Err(Error::config("model needs at least one label"));
        }
        if let Some(&bad) = label_indices.iter().find(|&&j| j >= vocabulary.len()) {
            return Err(Error::config(format!(
                "label index {bad} out of range for {} labels",
                vocabulary.len()
            )));
        }
        let labels = label_indices.iter().map(|&j| vocabulary[j].clone()).collect();
        Self::build(spec, labels, label_indices, seed)
    }

    /// Fresh bundle emitting `labels`, found at `label_indices` of the dataset vocabulary.
    pub fn build(spec: &ModelSpec, labels: Vec<String>, label_indices: Vec<usize>, seed: u64) -> Result<Self> {
        if labels.len() != label_indices.len() || labels.is_empty() {
            return Err(Error::config("model needs one index per label and at least one label"));
        }
        let mut spec = spec.clone();
        spec.vit.n_labels = label_indices.len();
        spec.vit.in_channels = spec.backbone.out_channels;
        spec.vit.grid_size = spec.backbone.out_grid;
        let backbone = init_backbone(&spec.backbone, seed)?;
        let head = match spec.kind {
            ModelKind::StudyFormer => Head::Vit(init_vit(&spec.vit, seed)?),
            ModelKind::Mvcnn | ModelKind::SingleView => Head::Conv(init_mvcnn_head(
                &MvcnnConfig {
                    in_channels: spec.backbone.out_channels,
                    hidden: spec.mvcnn_hidden,
                    n_labels: label_indices.len(),
                },
                seed,
            )?),
        };
        Ok(ModelBundle {
            labels,
            label_indices,
            spec,
            backbone,
            head,
            seed,
            optimizer: Adam::default(),
            progress: Progress::default(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn n_labels(&self) -> usize {
        self.label_indices.len()
    }

    /// Starts from another model's backbone weights (e.g. a pretrained per-view CNN).
    pub fn load_backbone(&mut self, other: &BackboneParams) -> Result<()> {
        if other.config != self.spec.backbone {
            return Err(Error::config("backbone configurations differ"));
        }
        let frozen = self.backbone.is_frozen();
        let mut b = other.clone();
        // fresh leaves, so gradients never leak between the two models
        b.set_frozen(false);
        b.set_trainable(true);
        b.set_frozen(frozen);
        self.backbone = b;
        Ok(())
    }

    /// Checks that `ds` carries every label this model emits.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        for (&j, name) in self.label_indices.iter().zip(&self.labels) {
            if ds.labels.get(j) != Some(name) {
                return Err(Error::config(format!(
                    "dataset label {j} is {:?}, model expects {name:?}",
                    ds.labels.get(j)
                )));
            }
        }
        if ds.image_size != self.spec.backbone.input_size {
            return Err(Error::config(format!(
                "dataset image size {} but backbone input_size {}",
                ds.image_size, self.spec.backbone.input_size
            )));
        }
        Ok(())
    }

    pub fn extract(&self, ds: &Dataset, study: usize) -> Result<StudyFeatures> {
        match self.kind() {
            ModelKind::StudyFormer => {
                let tiles = ds.tiles(study, self.seed)?;
                Ok(StudyFeatures {
                    maps: self.backbone.extract_features(&tiles.images)?,
                    width: tiles.width,
                    provenance: tiles.provenance,
                })
            }
            ModelKind::Mvcnn | ModelKind::SingleView => {
                let n = ds.studies[study].views.len();
                Ok(StudyFeatures {
                    maps: self.backbone.extract_features(&ds.view_batch(study))?,
                    width: 0,
                    provenance: (0..n).map(TileProvenance::original).collect(),
                })
            }
        }
    }

    /// Study probabilities `[L]`, or `[n×L]` per-view probabilities for the
    /// single-view model.
    pub fn head_forward(&self, f: &StudyFeatures, record_attention: bool) -> Result<(Tensor, Option<AttentionRecord>)> {
        let split = || (0..f.maps.shape()[0]).map(|k| f.maps.select0(k)).collect::<Result<Vec<_>>>();
        match (&self.head, self.kind()) {
            (Head::Vit(vit), ModelKind::StudyFormer) => {
                let grid = assemble_square(&split()?, f.width)?.with_provenance(f.provenance.clone())?;
                vit.forward(&grid, record_attention)
            }
            (Head::Conv(h), ModelKind::Mvcnn) => Ok((mvcnn_forward(&split()?, h)?, None)),
            (Head::Conv(h), ModelKind::SingleView) => Ok((h.classify_maps(&f.maps)?, None)),
            _ => Err(Error::contract("model kind does not match its head")),
        }
    }

    /// Training targets matching [`Self::head_forward`]'s output.
    pub fn targets(&self, s: &StudySample) -> Tensor {
        let pick = |row: &[f64]| -> Vec<f64> { self.label_indices.iter().map(|&j| row[j]).collect() };
        match self.kind() {
            ModelKind::SingleView => Tensor::new(
                &[s.view_targets.len(), self.n_labels()],
                s.view_targets.iter().flat_map(|r| pick(r)).collect(),
            ),
            _ => Tensor::new(&[self.n_labels()], pick(&s.targets)),
        }
        .expect("label counts checked against the dataset")
    }

    /// Study-level scores `[L]` without recording gradients.
    pub fn study_scores(&self, ds: &Dataset, study: usize) -> Result<Vec<f64>> {
        no_grad(|| {
            let (probs, _) = self.head_forward(&self.extract(ds, study)?, false)?;
            match self.kind() {
                ModelKind::SingleView => {
                    let l = self.n_labels();
                    let rows: Vec<Vec<f64>> = probs.data().chunks(l).map(<[f64]>::to_vec).collect();
                    single_view_max_baseline(&rows)
                }
                _ => Ok(probs.to_vec()),
            }
        })
    }
}

impl Parameters for ModelBundle {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.backbone.visit(&crate::tensor::join(prefix, "backbone"), f);
        let hp = crate::tensor::join(prefix, "head");
        match &self.head {
            Head::Vit(v) => v.visit(&hp, f),
            Head::Conv(h) => h.visit(&hp, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.visit_mut(&crate::tensor::join(prefix, "backbone"), f);
        let hp = crate::tensor::join(prefix, "head");
        match &mut self.head {
            Head::Vit(v) => v.visit_mut(&hp, f),
            Head::Conv(h) => h.visit_mut(&hp, f),
        }
    }
}
