//! Losses, Adam, two-stage training and checkpoints.
//!
//! Stage 1 trains the head with the backbone frozen; because frozen features
//! never change, they are extracted once per study and reused every epoch.
//! Stage 2 fine-tunes everything end to end. The per-view CNN has no
//! pretrained backbone to protect, so it trains its backbone in both stages.

mod adam;
mod checkpoint;
mod model;

pub use adam::{Adam, Moments};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use model::{EpochLog, Head, ModelBundle, ModelKind, ModelSpec, Progress, StudyFeatures};

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kv::{join_list, KeyValues};
use crate::par::Exec;
use crate::rng;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Bce,
    Focal { alpha: f64, gamma: f64 },
}

impl LossKind {
    pub fn apply(self, probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
        match self {
            LossKind::Bce => bce_loss(probs, targets),
            LossKind::Focal { alpha, gamma } => focal_loss(probs, targets, alpha, gamma),
        }
    }
}

/// Mean clamped binary cross-entropy.
pub fn bce_loss(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    probs.bce(targets)
}

/// Mean focal loss `-alpha (1-p_t)^gamma ln p_t`, clamped like BCE.
pub fn focal_loss(probs: &Tensor, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    probs.focal(targets, alpha, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// Studies per optimizer step.
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub loss: LossKind,
    /// Keys the per-epoch shuffles.
    pub seed: u64,
    /// Restricts head and loss to these dataset label indices.
    pub label_subset: Option<Vec<usize>>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 10,
            stage2_epochs: 2,
            batch_size: 16,
            lr_stage1: 1e-3,
            lr_stage2: 2e-4,
            loss: LossKind::Bce,
            seed: 0,
            label_subset: None,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return Err(Error::config("train learning rates must be > 0"));
        }
        if let LossKind::Focal { alpha, gamma } = self.loss {
            if !(alpha > 0.0 && alpha <= 1.0) || !(gamma >= 0.0) {
                return Err(Error::config(format!("focal alpha {alpha} must be in (0,1] and gamma {gamma} >= 0")));
            }
        }
        if matches!(&self.label_subset, Some(s) if s.is_empty()) {
            return Err(Error::config("train.label_subset must not be empty"));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("train.stage1_epochs", self.stage1_epochs);
        kv.set("train.stage2_epochs", self.stage2_epochs);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.lr_stage1", self.lr_stage1);
        kv.set("train.lr_stage2", self.lr_stage2);
        match self.loss {
            LossKind::Bce => kv.set("train.loss", "bce"),
            LossKind::Focal { alpha, gamma } => {
                kv.set("train.loss", "focal");
                kv.set("train.focal_alpha", alpha);
                kv.set("train.focal_gamma", gamma);
            }
        }
        if let Some(s) = &self.label_subset {
            kv.set("train.label_subset", join_list(s));
        }
    }

    pub fn overlay_kv(mut self, kv: &mut KeyValues) -> Result<Self> {
        self.stage1_epochs = kv.get_or("train.stage1_epochs", self.stage1_epochs)?;
        self.stage2_epochs = kv.get_or("train.stage2_epochs", self.stage2_epochs)?;
        self.batch_size = kv.get_or("train.batch_size", self.batch_size)?;
        self.lr_stage1 = kv.get_or("train.lr_stage1", self.lr_stage1)?;
        self.lr_stage2 = kv.get_or("train.lr_stage2", self.lr_stage2)?;
        let alpha = kv.get_or("train.focal_alpha", 1.0)?;
        let gamma = kv.get_or("train.focal_gamma", 2.0)?;
        match kv.raw("train.loss").as_deref() {
            None => {}
            Some("bce") => self.loss = LossKind::Bce,
            Some("focal") => self.loss = LossKind::Focal { alpha, gamma },
            Some(other) => return Err(Error::config(format!("invalid value {other:?} for key train.loss"))),
        }
        if let Some(s) = kv.get_list("train.label_subset")? {
            self.label_subset = Some(s);
        }
        self.validate()?;
        Ok(self)
    }
}

/// Runs whatever part of the two stages `bundle` has not completed yet.
/// Returns the epochs run by this call (also appended to the bundle history).
pub fn train_staged(
    bundle: &mut ModelBundle,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("train_staged: empty training set"));
    }
    bundle.check_dataset(train)?;
    if let Some(v) = val {
        bundle.check_dataset(v)?;
    }
    if let Some(s) = &cfg.label_subset {
        if *s != bundle.label_indices {
            return Err(Error::config(format!(
                "label_subset {s:?} does not match the model's labels {:?}",
                bundle.label_indices
            )));
        }
    }
    let val = val.filter(|v| !v.is_empty());
    let mut logs = Vec::new();

    if bundle.progress.stage1_epochs < cfg.stage1_epochs {
        let freeze = bundle.kind() != ModelKind::SingleView;
        bundle.backbone.set_frozen(freeze);
        let (train_cache, val_cache) = if freeze {
            (Some(cache_features(bundle, train, cfg.exec)?), val.map(|v| cache_features(bundle, v, cfg.exec)).transpose()?)
        } else {
            (None, None)
        };
        for epoch in bundle.progress.stage1_epochs..cfg.stage1_epochs {
            let log = run_epoch(bundle, train, train_cache.as_deref(), val.zip(val_cache.as_deref()), val, cfg, 1, epoch)?;
            bundle.progress.stage1_epochs = epoch + 1;
            bundle.progress.history.push(log.clone());
            logs.push(log);
        }
    }
    if bundle.progress.stage2_epochs < cfg.stage2_epochs {
        bundle.backbone.set_frozen(false);
        for epoch in bundle.progress.stage2_epochs..cfg.stage2_epochs {
            let log = run_epoch(bundle, train, None, None, val, cfg, 2, epoch)?;
            bundle.progress.stage2_epochs = epoch + 1;
            bundle.progress.history.push(log.clone());
            logs.push(log);
        }
    }
    bundle.backbone.set_frozen(false);
    Ok(logs)
}

fn cache_features(bundle: &ModelBundle, ds: &Dataset, exec: Exec) -> Result<Vec<StudyFeatures>> {
    exec.map(ds.len(), |i| no_grad(|| bundle.extract(ds, i))).into_iter().collect()
}

fn study_loss(bundle: &ModelBundle, ds: &Dataset, i: usize, cache: Option<&[StudyFeatures]>, loss: LossKind) -> Result<Tensor> {
    let (probs, _) = match cache {
        Some(c) => bundle.head_forward(&c[i], false)?,
        None => bundle.head_forward(&bundle.extract(ds, i)?, false)?,
    };
    loss.apply(&probs, &bundle.targets(&ds.studies[i]))
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    bundle: &mut ModelBundle,
    train: &Dataset,
    cache: Option<&[StudyFeatures]>,
    val_cached: Option<(&Dataset, &[StudyFeatures])>,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    stage: u8,
    epoch: usize,
) -> Result<EpochLog> {
    let lr = if stage == 1 { cfg.lr_stage1 } else { cfg.lr_stage2 };
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "shuffle", ((stage as u64) << 32) | epoch as u64));
    let mut total = 0.0;
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let mut sum: Option<Tensor> = None;
        for &i in batch {
            let l = study_loss(bundle, train, i, cache, cfg.loss)?;
            sum = Some(match sum {
                None => l,
                Some(s) => s.add(&l)?,
            });
        }
        let loss = sum.expect("nonempty batch").scale(1.0 / batch.len() as f64);
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {value} at stage {stage} epoch {epoch} batch {b}"
            )));
        }
        loss.backward()?;
        let mut opt = std::mem::take(&mut bundle.optimizer);
        opt.step(bundle, "", lr);
        bundle.optimizer = opt;
        total += value * batch.len() as f64;
    }
    let train_loss = total / train.len() as f64;
    let val_loss = match (val_cached, val) {
        (Some((v, c)), _) => Some(mean_loss(bundle, v, Some(c), cfg)?),
        (None, Some(v)) => Some(mean_loss(bundle, v, None, cfg)?),
        (None, None) => None,
    };
    log::info!(
        "stage {stage} epoch {epoch}: train loss {train_loss:.5}{}",
        val_loss.map(|v| format!(", val loss {v:.5}")).unwrap_or_default()
    );
    Ok(EpochLog { stage, epoch, train_loss, val_loss })
}

/// Mean per-study loss without recording gradients.
pub fn mean_loss(bundle: &ModelBundle, ds: &Dataset, cache: Option<&[StudyFeatures]>, cfg: &TrainConfig) -> Result<f64> {
    let losses = cfg
        .exec
        .map(ds.len(), |i| no_grad(|| study_loss(bundle, ds, i, cache, cfg.loss).map(|l| l.item())));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / ds.len() as f64)
}
