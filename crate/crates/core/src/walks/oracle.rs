//! Exact walk distributions by dense per-round transition products.
//!
//! A walk started at `s` in round `t0` is first stepped in round `t0 + 1`.
//! Each round `ρ` first removes the mass sitting on nodes churned at `ρ`
//! (adding it to the kill mass) and then applies one uniform neighbor step on
//! the snapshot of `ρ`. This is the same order the token engine uses.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::ids::{NodeId, Round};
use crate::netgen::{DynamicNetworkSchedule, GraphSnapshot};
use crate::walks::WalkError;

/// Largest network the dense oracle accepts.
pub const ORACLE_MAX_N: usize = 4096;

/// Position distribution of one walk in round `round`, in slot order of that
/// round's snapshot.
#[derive(Clone, Debug)]
pub struct DistributionVector {
    pub round: Round,
    ids: Arc<Vec<NodeId>>,
    pub probs: Vec<f64>,
    pub kill_mass: f64,
}

impl DistributionVector {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Probability of sitting at `id` (zero if `id` is not present).
    pub fn get(&self, id: NodeId) -> f64 {
        self.ids.iter().position(|&x| x == id).map_or(0.0, |s| self.probs[s])
    }

    pub fn survival(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn to_map(&self) -> BTreeMap<NodeId, f64> {
        self.ids.iter().copied().zip(self.probs.iter().copied()).collect()
    }
}

/// The walk-preserving network: same topology, but a churned node's walks
/// pass to the fresh node that takes its slot, so nothing is destroyed.
pub fn build_preserving_network(schedule: &DynamicNetworkSchedule) -> DynamicNetworkSchedule {
    schedule.preserving_copy()
}

fn check(schedule: &DynamicNetworkSchedule, t0: Round, t: Round) -> Result<(), WalkError> {
    if schedule.n() > ORACLE_MAX_N {
        return Err(WalkError::TooLarge { n: schedule.n() });
    }
    if t < t0 || t >= schedule.horizon() {
        return Err(WalkError::BadRange { from: t0, to: t });
    }
    Ok(())
}

/// `q <- P q` for the symmetric walk matrix of `g`.
fn step(g: &GraphSnapshot, q: &[f64], out: &mut [f64]) {
    let d = g.degree();
    let inv = 1.0 / d as f64;
    for (v, nb) in g.adjacency().chunks_exact(d).enumerate() {
        out[v] = nb.iter().map(|&u| q[u as usize]).sum::<f64>() * inv;
    }
}

/// `π(𝒢, s, t, t0)` together with its kill mass.
pub fn exact_walk_distribution(
    schedule: &DynamicNetworkSchedule,
    s: NodeId,
    t0: Round,
    t: Round,
) -> Result<DistributionVector, WalkError> {
    check(schedule, t0, t)?;
    let slot = schedule.slot_at(s, t0).ok_or(WalkError::UnknownNode { id: s, round: t0 })?;
    let n = schedule.n();
    let mut q = vec![0.0; n];
    q[slot] = 1.0;
    let mut next = vec![0.0; n];
    let mut kill = 0.0;
    let preserve = schedule.is_walk_preserving();
    for rho in t0 + 1..=t {
        if !preserve {
            for &x in &schedule.event(rho).slots {
                kill += q[x as usize];
                q[x as usize] = 0.0;
            }
        }
        step(schedule.snapshot(rho), &q, &mut next);
        std::mem::swap(&mut q, &mut next);
    }
    Ok(DistributionVector {
        round: t,
        ids: schedule.snapshot(t).ids_arc().clone(),
        probs: q,
        kill_mass: kill,
    })
}

/// For destination `d` in round `t`, the probability that a walk started at
/// each node of round `t0` ends at `d`, computed by running the schedule
/// backwards from `d`. The result is indexed by the slots of round `t0`.
pub fn reverse_origin_weights(
    schedule: &DynamicNetworkSchedule,
    d: NodeId,
    t0: Round,
    t: Round,
) -> Result<DistributionVector, WalkError> {
    check(schedule, t0, t)?;
    let slot = schedule.slot_at(d, t).ok_or(WalkError::UnknownNode { id: d, round: t })?;
    let n = schedule.n();
    let mut w = vec![0.0; n];
    w[slot] = 1.0;
    let mut next = vec![0.0; n];
    let preserve = schedule.is_walk_preserving();
    for rho in (t0 + 1..=t).rev() {
        step(schedule.snapshot(rho), &w, &mut next);
        std::mem::swap(&mut w, &mut next);
        if !preserve {
            for &x in &schedule.event(rho).slots {
                w[x as usize] = 0.0;
            }
        }
    }
    Ok(DistributionVector {
        round: t0,
        ids: schedule.snapshot(t0).ids_arc().clone(),
        probs: w,
        kill_mass: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{commit_churn_schedule, ChurnStrategy, ScheduleParams};

    fn k4_schedule(rate_scale: f64, horizon: Round) -> DynamicNetworkSchedule {
        let p = ScheduleParams {
            lambda_max: 0.5,
            rate_scale,
            strategy: if rate_scale > 0.0 { ChurnStrategy::UniformRandom } else { ChurnStrategy::None },
            rewire_fraction: 0.0,
            ..ScheduleParams::new(4, 3, horizon, 5)
        };
        commit_churn_schedule(&p).unwrap()
    }

    #[test]
    fn one_step_on_k4() {
        let s = k4_schedule(0.0, 3);
        let dv = exact_walk_distribution(&s, NodeId(0), 0, 1).unwrap();
        assert_eq!(dv.get(NodeId(0)), 0.0);
        for v in 1..4 {
            assert!((dv.get(NodeId(v)) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(dv.kill_mass, 0.0);
    }

    #[test]
    fn kill_mass_is_mass_on_removed_nodes() {
        // One replacement per round on K4.
        let s = k4_schedule(0.5, 6);
        assert_eq!(s.event(2).removed.len(), 1);
        let src = s.snapshot(0).id_at(0);
        let after1 = exact_walk_distribution(&s, src, 0, 1).unwrap();
        let after2 = exact_walk_distribution(&s, src, 0, 2).unwrap();
        let removed_at_1: f64 = if s.event(1).removed.contains(&src) { 1.0 } else { 0.0 };
        let on_removed: f64 = s.event(2).removed.iter().map(|&v| after1.get(v)).sum();
        assert!((after2.kill_mass - removed_at_1 - on_removed).abs() < 1e-15);
        for dv in [after1, after2] {
            assert!((dv.survival() + dv.kill_mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preserving_network_has_no_kill() {
        let s = build_preserving_network(&k4_schedule(0.5, 8));
        let src = s.snapshot(0).id_at(1);
        let dv = exact_walk_distribution(&s, src, 0, 7).unwrap();
        assert_eq!(dv.kill_mass, 0.0);
        assert!((dv.survival() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let s = k4_schedule(0.0, 3);
        assert!(matches!(
            exact_walk_distribution(&s, NodeId(9), 0, 1),
            Err(WalkError::UnknownNode { .. })
        ));
        assert!(matches!(exact_walk_distribution(&s, NodeId(0), 2, 1), Err(WalkError::BadRange { .. })));
        assert!(matches!(exact_walk_distribution(&s, NodeId(0), 0, 3), Err(WalkError::BadRange { .. })));
    }

    #[test]
    fn reverse_matches_forward() {
        let s = k4_schedule(0.5, 7);
        let (t0, t) = (1, 6);
        for &d in s.snapshot(t).nodes() {
            let rev = reverse_origin_weights(&s, d, t0, t).unwrap();
            for (slot, &src) in s.snapshot(t0).nodes().iter().enumerate() {
                let fwd = exact_walk_distribution(&s, src, t0, t).unwrap().get(d);
                assert!((fwd - rev.probs[slot]).abs() < 1e-12);
            }
        }
    }
}
