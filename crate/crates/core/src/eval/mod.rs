//! Metrics: marker-based PCK, PSNR/SSIM, temporal jitter and the pour
//! consequence proxy, plus the ablation harness.

mod ablation;
mod detect;
mod metrics;

pub use ablation::{
    evaluate_model, parse_variants, prepare_eval_set, run_ablation, variant_guidance, AblationRow,
    AblationSetup, AblationTable, EvalEpisode, SetMetrics,
};
pub use detect::{detect_hand, MarkerPalette, COLOR_TOLERANCE, MIN_MARKER_PIXELS};
pub use metrics::{
    evaluate, frame_metrics, jitter_index, pck, pck_threshold, pour_monotonicity, psnr, ssim,
    EvalReport, PckReport, PSNR_CAP,
};
