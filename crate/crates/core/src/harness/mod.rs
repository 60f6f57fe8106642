//! End-to-end training loop, evaluation, weight probes, gradient suites,
//! config, metrics and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod metrics;
mod trainer;

pub use checkpoint::{check_resume_config, load_checkpoint, save_checkpoint, SegmentEntry, FORMAT_VERSION};
pub use config::Config;
pub use eval::{
    evaluate_policy, parse_lambdas, run_eval, run_weight_probe, write_weights_csv, EvalReport, ProbeOptions, ProbeRow,
    DEFAULT_LAMBDAS, WEIGHTS_HEADER,
};
pub use gradcheck::{
    run_gradcheck, CheckOutcome, MetaFixture, Scope, SuiteReport, INSTANCES, META_INSTANCES, META_TOLERANCE,
    NETWORK_TOLERANCE,
};
pub use metrics::{
    append_metrics, ensure_metrics_file, format_sig9, quantile, quartiles, read_metrics, MetricsRecord, METRICS_HEADER,
};
pub use trainer::{episode_seed, run_training, EpisodeAccumulator, RunPaths, Trainer};
