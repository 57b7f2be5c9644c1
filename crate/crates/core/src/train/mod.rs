//! Training schedule, evaluation and run reporting.

mod config;
mod eval;
mod optim;
mod report;
mod trainer;

pub use config::TrainConfig;
pub use eval::{auc, evaluate_auc, evaluate_fairness, learned_ranking, SplitPart, EVAL_K};
pub use optim::AdamW;
pub use report::{
    append_csv, audit, mean_std, read_csv, relative_change_pct, run_and_save, run_prepared, run_sweep, AuditSpace,
    CsvRow, MetricsReport, RunArtifacts, SummaryRow, SweepOutcome, SweepRun, SweepSpec, Timing, FINAL_CKPT,
    REPORT_FILE, RESULTS_CSV, WARMUP_CKPT,
};
pub use trainer::{
    evaluate, train, EpochLosses, EpochRecord, Evaluation, Model, Phase, Prepared, TrainOutcome, Trainer, Wallclock,
};
