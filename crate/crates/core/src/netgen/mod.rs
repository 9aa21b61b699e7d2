//! Expander sequences and the oblivious churn schedule.

mod expander;
mod schedule;
mod snapshot;
pub mod spectral;

use thiserror::Error;

pub use expander::{build_regular_expander, build_regular_expander_with_budget, CERTIFY_TOL};
pub use schedule::{
    churn_rate, commit_churn_schedule, ChurnEvent, ChurnStrategy, DynamicNetworkSchedule, NodeLife,
    ScheduleParams,
};
pub use snapshot::GraphSnapshot;
pub use spectral::estimate_lambda;

use crate::ids::Round;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no graph met the spectral bound after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("eigenvalue iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("churn rate {rate} per round is not below n = {n}")]
    RateTooHigh { rate: usize, n: usize },
    #[error("round {round} outside horizon {horizon}")]
    OutOfHorizon { round: Round, horizon: Round },
    #[error("malformed graph: {0}")]
    Malformed(String),
}
