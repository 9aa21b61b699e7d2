//! Scenario runner: round loop, configuration, metrics and reports.

pub mod config;
pub mod metrics;
pub mod scenarios;
pub mod sim;

use thiserror::Error;

use crate::ids::{NodeId, Round};
use crate::netgen::NetError;
use crate::walks::WalkError;

pub use config::{Scenario, SimulationConfig, StorageMode};
pub use metrics::SimOutput;
pub use sim::{Action, Simulation};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("round {round}: {node} used {words} words, cap {cap}")]
    BudgetExceeded { round: Round, node: NodeId, words: u64, cap: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
