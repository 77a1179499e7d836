//! Benchmark harness for the off-policy estimators in `dric_core`:
//! classification datasets turned into logged bandit feedback, replicated
//! estimation against exact ground truth, and the two-action toy
//! comparison of switching rules.

pub mod config;
pub mod error;
pub mod harness;
pub mod toy;
pub mod tune;

pub use config::{EstimatorKind, ExperimentConfig};
pub use error::{BenchError, Result};
pub use harness::{
    clipped_mse, ground_truth, make_policies, oracle_tune, replicate_seed, run_on_table,
    run_replicates, ExperimentResult, ResultRow,
};
pub use toy::{toy_comparison, ToyReport};
