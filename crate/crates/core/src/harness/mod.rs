//! Experiment configuration, multi-seed orchestration, mask-quality evaluation, and plots.

mod config;
mod experiment;
mod plot;
mod quality;

pub use config::{DatasetSource, ExperimentConfig, ExportFlags, SCHEMA_VERSION};
pub use experiment::{
    evaluate_run, export_masks, mean_std, run_checkpoint, run_experiment, run_mask_quality, run_one, summarize,
    worker_threads, EvalReport, ExperimentOptions, ModeSummary, RunSummary, Summary, MASK_QUALITY_FILE,
    RUN_CONFIG_FILE, SUMMARY_FILE,
};
pub use plot::{grid_image, line_chart_svg, write_charts, write_gallery, Series};
pub use quality::{
    gradcam_mask_quality, iou, policy_mask_quality, random_mask_iou, score_masks, MaskQualityReport,
};
