//! Mask AP evaluation and parameter/MAC accounting.

mod ap;
mod cost;

pub use ap::{evaluate_ap, mask_iou, overlap_counts, ApReport, EvalImage, PrCurve, IOU_THRESHOLDS_PCT, RECALL_POINTS};
pub use cost::{count_costs, describe_pipeline, measure, CostReport, LayerSpec, ModelDescription, Stage};
