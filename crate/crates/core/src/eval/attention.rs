//! Rollout heatmaps for a study: the raw `(W·G)×(W·G)` graymap, an overlay
//! mosaic at input resolution and a per-tile provenance sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::image::{save_pgm, to_u8, RgbImage, IMAGENET_MEAN, IMAGENET_STD};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};
use crate::train::{ModelBundle, ModelKind};
use crate::vit::{attention_rollout, Rollout};
use crate::assembly::TileProvenance;

#[derive(Debug, Clone)]
pub struct AttentionExport {
    pub rollout: Rollout,
    pub width: usize,
    pub grid: usize,
    pub provenance: Vec<TileProvenance>,
    /// Mean heatmap value inside each tile, row-major.
    pub tile_means: Vec<f64>,
    pub heatmap_path: PathBuf,
    pub overlay_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Runs rollout for one study without writing anything.
pub fn study_rollout(bundle: &ModelBundle, ds: &Dataset, study: usize) -> Result<(Rollout, usize, Vec<TileProvenance>)> {
    if bundle.kind() != ModelKind::StudyFormer {
        return Err(Error::contract(format!("attention maps need a studyformer bundle, got {}", bundle.kind())));
    }
    no_grad(|| {
        let f = bundle.extract(ds, study)?;
        let (_, record) = bundle.head_forward(&f, true)?;
        let record = record.ok_or_else(|| Error::contract("model recorded no attention"))?;
        Ok((attention_rollout(&record)?, f.width, f.provenance))
    })
}

pub fn tile_means(heatmap: &Tensor, width: usize, grid: usize) -> Vec<f64> {
    let side = width * grid;
    let h = heatmap.data();
    (0..width * width)
        .map(|k| {
            let (r0, c0) = ((k / width) * grid, (k % width) * grid);
            let mut s = 0.0;
            for r in r0..r0 + grid {
                for c in c0..c0 + grid {
                    s += h[r * side + c];
                }
            }
            s / (grid * grid) as f64
        })
        .collect()
}

/// Writes `<id>_heatmap.pgm`, `<id>_overlay.ppm` and `<id>_tiles.txt` under `out_dir`.
pub fn export_attention_map(bundle: &ModelBundle, ds: &Dataset, study: usize, out_dir: &Path) -> Result<AttentionExport> {
    if bundle.progress.history.is_empty() {
        return Err(Error::contract("attention maps need a trained bundle (no epochs recorded)"));
    }
    bundle.check_dataset(ds)?;
    let (rollout, width, provenance) = study_rollout(bundle, ds, study)?;
    let grid = bundle.spec.backbone.out_grid;
    let side = width * grid;
    std::fs::create_dir_all(out_dir)?;
    let id = &ds.studies[study].id;

    let heat = rollout.heatmap.data();
    let heatmap_path = out_dir.join(format!("{id}_heatmap.pgm"));
    save_pgm(&heatmap_path, side, side, &heat.iter().map(|&v| to_u8(v)).collect::<Vec<_>>())?;

    // overlay: denormalized tiles in a W×W mosaic, heat blended into red
    let s = ds.image_size;
    let tiles = ds.tiles(study, bundle.seed)?;
    let mut heat_img = RgbImage::new(side, side);
    for c in 0..3 {
        heat_img.data[c * side * side..(c + 1) * side * side].copy_from_slice(heat);
    }
    let heat_up = heat_img.resize(width * s, width * s);
    let mut overlay = RgbImage::new(width * s, width * s);
    let px = tiles.images.data();
    for k in 0..width * width {
        let (oy, ox) = ((k / width) * s, (k % width) * s);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let v = px[((k * 3 + c) * s + y) * s + x] * IMAGENET_STD[c] + IMAGENET_MEAN[c];
                    let h = heat_up.get(0, oy + y, ox + x);
                    let tint = if c == 0 { 1.0 } else { 0.0 };
                    overlay.set(c, oy + y, ox + x, 0.55 * v.clamp(0.0, 1.0) + 0.45 * h * tint);
                }
            }
        }
    }
    let overlay_path = out_dir.join(format!("{id}_overlay.ppm"));
    overlay.save_ppm(&overlay_path)?;

    let means = tile_means(&rollout.heatmap, width, grid);
    let mut side_text = format!("study {id}\nwidth {width}\ndegenerate {}\n", rollout.degenerate);
    for (k, (p, m)) in provenance.iter().zip(&means).enumerate() {
        let _ = writeln!(side_text, "tile {k} (row {}, col {}): {p}; mean attention {m:.4}", k / width, k % width);
    }
    let sidecar_path = out_dir.join(format!("{id}_tiles.txt"));
    std::fs::write(&sidecar_path, side_text)?;

    Ok(AttentionExport { rollout, width, grid, provenance, tile_means: means, heatmap_path, overlay_path, sidecar_path })
}
