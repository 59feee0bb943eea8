//! Downstream evaluation: the shared linear classifier, micro-F1 and paired
//! t-test Win/Tie/Loss tables.

mod logistic;
mod metrics;
mod stats;

pub use logistic::{fit_logistic, train_eval_classifier, LogisticConfig, LogisticFit};
pub use metrics::{confusion, micro_f1, Confusion};
pub use stats::{
    checkpoint_grid, compare_paired, paired_t, paired_ttest_wtl, student_t_cdf, t_critical, Comparison, LearningCurve,
    PairedT, WtlSummary,
};
