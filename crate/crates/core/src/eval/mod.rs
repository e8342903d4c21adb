//! Metrics, the view-pooling baseline head, model comparison reports and
//! attention-map export.

pub mod attention;
pub mod metrics;
pub mod mvcnn;
pub mod report;

pub use attention::{export_attention_map, study_rollout, tile_means, AttentionExport};
pub use metrics::{roc_auc, roc_curve_points, single_view_max_baseline, trapezoid_area};
pub use mvcnn::{init_mvcnn_head, mvcnn_forward, view_pool, MvcnnConfig, MvcnnHead};
pub use report::{evaluate_models, score_model, EvalReport, ModelScores};
