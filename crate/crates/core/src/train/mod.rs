//! Training, evaluation, cross-validation, window sweeps and attention export.

mod cv;
mod export;
mod loop_;
mod metrics;
mod report;
mod sweep;

pub use cv::{run_cv, run_cv_units, run_one, CvOptions, CvResult, RunOutput, RunReport};
pub use export::{export_attention, gaussian_smooth, interval_mass, AttentionExport, DEFAULT_SIGMA};
pub use loop_::{evaluate, predict_labels, train, train_observed, Evaluation, TrainHistory, THRESHOLD};
pub use metrics::{mean_std, paired_t_test, uar, Confusion, TTest};
pub use report::{read_run_uars, write_runs_csv, write_summary, write_sweep_csv, write_sweep_plot, RUNS_HEADER};
pub use sweep::{step_for, sweep_windows, SweepCell, SweepReport, DEFAULT_RANGES_S};
