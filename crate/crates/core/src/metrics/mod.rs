//! Evaluation metrics for response classification and survival analysis.

mod classification;
mod special;
mod survival;

pub use classification::{classification_report, roc_auc, roc_points, ClassificationReport};
pub use special::{chi2_sf, regularized_gamma_p, regularized_gamma_q};
pub use survival::{
    concordance_index, decile_event_times, kaplan_meier, logrank, stratify_by_median,
    time_dependent_auc, KmCurve, LogrankResult, RiskGroup, SurvivalSample, TimeAuc,
};
