//! Training loop, evaluation and property probes.

pub mod fixtures;
mod metrics;
mod probes;
mod sampling;
mod train;

pub use metrics::{IterationRecord, MetricsLog, CSV_HEADER};
pub use probes::{
    brute_force_distances, distances_agree, format_distance_table, format_variance_report, monotonicity_probe,
    outcome_counts, random_trajectory_set, variance_probe, EdgeVariance, MonotonicityViolation, RandomGraphSpec,
    VARIANCE_TOLERANCE,
};
pub use sampling::{choose_action, dynamic_sample, evaluate, rollout_group, run_episode, stream_seed, Sampling};
pub use train::{evaluate_kind, train, train_observed, ExperimentConfig, TaskBatch, TrainOutcome};
