//! Evaluation harness for the agent simulator: leave-one-out ranking
//! metrics, Random and BM25 baselines, the position-bias and
//! rating-distribution experiments, the ablation matrix, parameter sweeps,
//! and the report/CSV emitters they all feed.

pub mod baselines;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{Preset, RunConfig};
pub use runner::{
    run_evaluation, BackendSpec, EvalError, Harness, Method, PreparedData, RunOptions, RunReport,
};
