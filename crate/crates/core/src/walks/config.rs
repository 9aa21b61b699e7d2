use crate::ids::ceil_ln;
use crate::walks::WalkError;

/// Walk-sampling constants for a network of `n` nodes.
///
/// * `α` walks are started per node per round, scaled by `⌈ln n⌉`;
/// * walks take `T = ⌈m ln n⌉` steps; the dynamic mixing time is `τ = m⌈ln n⌉`;
/// * committees have `h⌈ln n⌉` members.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    pub n: usize,
    pub alpha: usize,
    pub h: usize,
    pub m: usize,
    pub walk_length: u32,
    pub forward_cap: usize,
    pub log_n: usize,
}

impl WalkConfig {
    /// Validates `h ≤ α/36` and uses the steady-state forwarding cap.
    pub fn new(n: usize, alpha: usize, h: usize, m: usize) -> Result<Self, WalkError> {
        if 36 * h > alpha {
            return Err(WalkError::HBound { h, alpha });
        }
        Ok(Self::unchecked(n, alpha, h, m))
    }

    /// Same as [`WalkConfig::new`] without the `h ≤ α/36` check.
    pub fn with_h_override(n: usize, alpha: usize, h: usize, m: usize) -> Self {
        Self::unchecked(n, alpha, h, m)
    }

    fn unchecked(n: usize, alpha: usize, h: usize, m: usize) -> Self {
        let log_n = ceil_ln(n).max(1);
        let walk_length = ((m as f64) * (n as f64).ln()).ceil().max(1.0) as u32;
        let mut cfg = WalkConfig { n, alpha, h, m, walk_length, forward_cap: 0, log_n };
        cfg.forward_cap = cfg.steady_state_cap();
        cfg
    }

    pub fn with_forward_cap(mut self, cap: usize) -> Self {
        self.forward_cap = cap;
        self
    }

    /// Removes the per-round forwarding limit; every token moves each round.
    pub fn uncapped(self) -> Self {
        self.with_forward_cap(usize::MAX)
    }

    pub fn with_walk_length(mut self, t: u32) -> Self {
        self.walk_length = t;
        self
    }

    /// `α⌈ln n⌉`.
    pub fn walks_per_round(&self) -> usize {
        self.alpha * self.log_n
    }

    /// `τ = m⌈ln n⌉`.
    pub fn tau(&self) -> u32 {
        (self.m * self.log_n) as u32
    }

    /// `h⌈ln n⌉`.
    pub fn committee_size(&self) -> usize {
        self.h * self.log_n
    }

    /// `2h⌈ln n⌉`: the cap for a single cohort of `h⌈ln n⌉` walks per node.
    pub fn single_cohort_cap(&self) -> usize {
        2 * self.h * self.log_n
    }

    /// Twice the expected number of tokens a node holds when every node starts
    /// `α⌈ln n⌉` walks every round and each walk is in flight for `T` rounds.
    pub fn steady_state_cap(&self) -> usize {
        2 * self.walks_per_round() * self.walk_length as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_for_1024() {
        let c = WalkConfig::new(1024, 72, 2, 3).unwrap();
        assert_eq!(c.log_n, 7);
        assert_eq!(c.walks_per_round(), 504);
        assert_eq!(c.walk_length, 21);
        assert_eq!(c.tau(), 21);
        assert_eq!(c.committee_size(), 14);
        assert_eq!(c.single_cohort_cap(), 28);
        assert_eq!(c.forward_cap, 2 * 504 * 21);
    }

    #[test]
    fn h_bound_enforced_unless_overridden() {
        assert!(matches!(WalkConfig::new(1024, 71, 2, 3), Err(WalkError::HBound { .. })));
        let c = WalkConfig::with_h_override(1024, 72, 4, 3);
        assert_eq!(c.committee_size(), 28);
    }
}
