//! Experiment configuration, orchestration and output files.

mod config;
mod experiment;
mod trace;

pub use config::{
    parse_config, parse_config_with_overrides, Budget, Clip, DataConfig, DataSource, ExperimentConfig, ModelConfig,
    PrivacyConfig, SweepConfig, TrainConfig, DEFAULT_CLIP_GRID, SCHEMA_VERSION,
};
pub use experiment::{
    compare_configs, compare_methods, metrics_path, prepare, run_experiment, run_seed, sweep, Comparison, ComparisonRow,
    CurvePoint, ExperimentOutput, Prepared, SeedRun, SeedSummary, Stat, Summary,
};
pub use trace::{
    emit_noise_trace_plotdata, fit_slope, read_noise_trace, trace_series, write_noise_trace, NoiseTerm, TraceRow, TraceSeries,
};
