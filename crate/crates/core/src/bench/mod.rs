//! Synthetic fairness benchmark: biased data, metrics, experiment harnesses
//! and report writers.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use data::{make_biased_dataset, BiasSpec, GroupSpec, LabeledPoint};
pub use experiment::{
    correction_metric, loss_term_grid, run_ablation, run_experiment, weight_sweep_grid, window_positions, window_sweep,
    AblationCell, AblationTable, Components, ExperimentConfig, ExperimentReport, MetricsReport, WindowSweep,
};
pub use metrics::{group_distance, intra_cluster_diversity, marginal_wasserstein, wasserstein_1d, DiversityConfig, GroupOracle};
