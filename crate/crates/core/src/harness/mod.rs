//! Experiment driver: data ingestion, training loops, learning-rate search,
//! batch-size sweeps, scaling benchmarks and CSV logs.

pub mod bench;
pub mod dataset;
pub mod logs;
pub mod train;

pub use bench::{loglog_slope, scaling_bench, BenchStatus, ScalingConfig, ScalingRecord};
pub use dataset::{
    least_squares_optimum, load_csv_dataset, make_synthetic, make_synthetic_with_noise, standardize, Dataset,
    SyntheticKind, TargetStats, Task,
};
pub use logs::{emit_checks, emit_logs, emit_scaling, format_float};
pub use train::{
    batch_sweep, grid_search_lr, train_run, AlphaPolicy, GridSearchResult, RunConfig, RunStatus, SweepPoint,
    TrainOutcome, TrainRecord, DEFAULT_ALPHA_GRID,
};
