//! Random-walk sampling: the token engine and an exact distribution oracle.

mod config;
mod engine;
pub mod oracle;

use thiserror::Error;

pub use config::WalkConfig;
pub use engine::{
    empirical_destinations, spawn_count, spawn_walks, SampleRecord, StepStats, WalkCounters, WalkEngine, WalkId, WalkToken,
};
pub use oracle::{
    build_preserving_network, exact_walk_distribution, reverse_origin_weights, DistributionVector,
    ORACLE_MAX_N,
};

use crate::ids::{NodeId, Round};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("h = {h} exceeds alpha/36 (alpha = {alpha})")]
    HBound { h: usize, alpha: usize },
    #[error("network of {n} nodes is too large for the dense oracle")]
    TooLarge { n: usize },
    #[error("{id} is not present in round {round}")]
    UnknownNode { id: NodeId, round: Round },
    #[error("round range {from}..={to} is not inside the schedule")]
    BadRange { from: Round, to: Round },
}

/// Total-variation distance: half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// TV distance of `p` to the uniform vector of the same length.
pub fn tv_to_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    0.5 * p.iter().map(|a| (a - u).abs()).sum::<f64>()
}

/// Normalizes integer counts into a probability vector (all zero if empty).
pub fn normalize_counts(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_basics() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv_to_uniform(&[0.25; 4]), 0.0);
        assert!((tv_to_uniform(&[1.0, 0.0, 0.0, 0.0]) - 0.75).abs() < 1e-15);
        assert_eq!(normalize_counts(&[1, 3]), vec![0.25, 0.75]);
    }
}
