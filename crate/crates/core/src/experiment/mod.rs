//! Experiment harness: configuration, the deployment loop, metrics,
//! ablations, the constructed look-ahead counterexample and result files.

pub mod ablation;
pub mod config;
pub mod demo;
pub mod deploy;
pub mod metrics;
pub mod report;
pub mod validate;

pub use ablation::{ablation_horizon, ablation_j, AblationResult, HorizonResult};
pub use config::{RunConfig, Scale};
pub use deploy::{run_all, run_deployment, RunId, RunResult};
pub use metrics::{iso_performance, metric_l2, policy_rank, MeanSe};
pub use report::{summarize, RunSummary};
