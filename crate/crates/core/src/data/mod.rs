//! Study ingestion, label aggregation, splitting and the synthetic benchmark.

pub mod dataset;
pub mod image;
pub mod manifest;
pub mod split;
pub mod synth;

pub use dataset::{Dataset, StudySample, TileBatch};
pub use image::{preprocess_image, RgbImage};
pub use manifest::{aggregate_study_labels, load_manifest, parse_manifest, Manifest, Study};
pub use split::{split_by_study, Split};
pub use synth::{generate_synthetic_dataset, render_study, LabelRule, Shape, SyntheticSpec};
