//! Multi-agent experiment engine: data, partitions, the train–merge loop and
//! its metrics.

mod data;
mod engine;
mod metrics;

pub use data::{
    load_csv, make_regression, make_synthetic, partition, train_test_split, Dataset, Partition,
};
pub use engine::{
    init_agents, run_dimat, run_experiment, run_repeat, streams, AgentState, Divergence, Experiment,
    RunResult,
};
pub use metrics::{
    aligned_average, consensus_and_gradnorm, estimate_heterogeneity, Heterogeneity, MetricsRecord,
};
