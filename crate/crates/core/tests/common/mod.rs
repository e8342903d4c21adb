//! Shared fixtures for the integration tests.

#![allow(dead_code)]

pub mod benchmark;

use studyformer::backbone::BackboneConfig;
use studyformer::data::{render_study, Dataset, SyntheticSpec};
use studyformer::tensor::Pool;
use studyformer::train::{ModelKind, ModelSpec};
use studyformer::vit::ViTConfig;

/// `n` synthetic studies rendered at 32 px and resized to 16 px.
pub fn small_dataset(n: usize, seed: u64) -> Dataset {
    let mut spec = SyntheticSpec::benchmark(seed, n);
    spec.image_size = 32;
    let studies = (0..n)
        .map(|i| {
            let st = render_study(&spec, i).unwrap();
            let views = st.views.iter().map(|v| v.resize(16, 16)).collect();
            (st.id, views, st.view_labels)
        })
        .collect();
    Dataset::from_images(spec.label_names(), 16, studies).unwrap()
}

/// A model small enough to train for a few epochs in well under a second.
pub fn small_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        backbone: BackboneConfig {
            input_size: 16,
            stage_channels: vec![8],
            downsample: vec![4],
            kernel_size: 3,
            norm_groups: 2,
            pool: Pool::Max,
            out_channels: 8,
            out_grid: 4,
        },
        vit: ViTConfig { embed_dim: 16, mlp_dim: 32, ..ViTConfig::desk() },
        mvcnn_hidden: 8,
    }
}
