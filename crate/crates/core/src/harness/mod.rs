//! Experiment configuration, orchestration and result persistence.

mod config;
mod experiment;
mod output;
mod sweep;

pub use config::{DatasetSource, ExperimentConfig, KernelSettings, Strategy};
pub use experiment::{
    evaluate, replay_curve, run_dataset, run_experiment, run_single, PreparedDataset, ResultsBundle, RunFailure,
    RunRecord,
};
pub use output::{
    curves_csv, emit_curves_csv, mean_std, parse_curves_csv, read_curves_csv, read_query_logs, split_manifest_path,
    summarize, summary_csv, write_atomic, write_outputs, CurveRecord, QueryLog, RunTiming, SummaryRow, CONFIG_FILE,
    CURVES_FILE, CURVES_HEADER, FAILURES_FILE, QUERIES_FILE, SIGNIFICANCE, SPLITS_DIR, SUMMARY_FILE, TIMINGS_FILE,
};
pub use sweep::{default_sweep_points, run_sweep, sweep_csv, sweep_points, SweepPoint, SweepResults, SweepRow};
