//! Token-level random walk engine.

use rand::RngCore;

use crate::ids::{NodeId, Round};
use crate::netgen::{ChurnEvent, DynamicNetworkSchedule, GraphSnapshot};
use crate::rng::{mix, walk_rng};
use crate::walks::{WalkConfig, WalkError};

/// Unique walk identity: origin, start round and the index within that
/// origin's batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WalkId {
    pub origin_round: Round,
    pub origin: NodeId,
    pub seq: u16,
}

/// A walk token. Its position is the queue it sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkToken {
    pub origin: NodeId,
    pub origin_round: Round,
    pub seq: u16,
    pub steps_taken: u16,
}

impl WalkToken {
    pub fn walk_id(&self) -> WalkId {
        WalkId { origin_round: self.origin_round, origin: self.origin, seq: self.seq }
    }
}

/// A completed walk as seen by the node where it stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub receiver: NodeId,
    pub origin: NodeId,
    pub origin_round: Round,
    pub arrival_round: Round,
    pub seq: u16,
}

impl SampleRecord {
    pub fn walk_id(&self) -> WalkId {
        WalkId { origin_round: self.origin_round, origin: self.origin, seq: self.seq }
    }
}

/// `α⌈ln n⌉` fresh tokens at `node`, all with zero steps.
pub fn spawn_walks(node: NodeId, r: Round, cfg: &WalkConfig) -> Vec<WalkToken> {
    spawn_count(node, r, cfg.walks_per_round())
}

pub fn spawn_count(node: NodeId, r: Round, count: usize) -> Vec<WalkToken> {
    assert!(count <= u16::MAX as usize + 1, "batch of {count} walks exceeds the id space");
    (0..count)
        .map(|i| WalkToken { origin: node, origin_round: r, seq: i as u16, steps_taken: 0 })
        .collect()
}

/// Per-round outcome of [`WalkEngine::step_round`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub destroyed: u64,
    pub forwarded: u64,
    pub completed: u64,
    /// Tokens left waiting because their node hit the forwarding cap.
    pub queued: u64,
    /// Nodes with a non-empty queue after forwarding.
    pub nodes_with_queue: u64,
    /// Largest number of tokens forwarded by one node.
    pub max_forwarded_by_node: u64,
}

/// Cumulative integer accounting. `spawned = in_flight + harvested + destroyed`
/// holds after every call, with completed-but-unharvested tokens counted as in
/// flight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WalkCounters {
    pub spawned: u64,
    pub forwarded: u64,
    pub destroyed: u64,
    pub harvested: u64,
}

/// Unbiased integer in `0..d` (Lemire's multiply-and-reject).
#[inline]
fn pick(rng: &mut impl RngCore, d: u32) -> u32 {
    let mut m = rng.next_u32() as u64 * d as u64;
    let mut low = m as u32;
    if low < d {
        let threshold = d.wrapping_neg() % d;
        while low < threshold {
            m = rng.next_u32() as u64 * d as u64;
            low = m as u32;
        }
    }
    (m >> 32) as u32
}

/// Slot-indexed token queues for one network of fixed size `n`.
pub struct WalkEngine {
    cfg: WalkConfig,
    protocol_seed: u64,
    queues: Vec<Vec<WalkToken>>,
    next: Vec<Vec<WalkToken>>,
    completed: Vec<Vec<WalkToken>>,
    completed_round: Round,
    counters: WalkCounters,
    traffic: Vec<u32>,
}

impl WalkEngine {
    pub fn new(n: usize, cfg: WalkConfig, protocol_seed: u64) -> Self {
        WalkEngine {
            cfg,
            protocol_seed,
            queues: vec![Vec::new(); n],
            next: vec![Vec::new(); n],
            completed: vec![Vec::new(); n],
            completed_round: 0,
            counters: WalkCounters::default(),
            traffic: vec![0; n],
        }
    }

    pub fn config(&self) -> &WalkConfig {
        &self.cfg
    }

    pub fn counters(&self) -> WalkCounters {
        self.counters
    }

    /// Tokens still walking or waiting to be harvested.
    pub fn in_flight(&self) -> u64 {
        let walking: usize = self.queues.iter().map(Vec::len).sum();
        let done: usize = self.completed.iter().map(Vec::len).sum();
        (walking + done) as u64
    }

    /// Tokens each slot sent plus received in the last step.
    pub fn traffic(&self) -> &[u32] {
        &self.traffic
    }

    pub fn queue_len(&self, slot: usize) -> usize {
        self.queues[slot].len()
    }

    /// Places freshly spawned tokens at `slot`; they take their first step in
    /// the next call to [`WalkEngine::step_round`].
    pub fn inject(&mut self, slot: usize, tokens: impl IntoIterator<Item = WalkToken>) {
        let q = &mut self.queues[slot];
        let before = q.len();
        q.extend(tokens);
        self.counters.spawned += (q.len() - before) as u64;
    }

    /// Spawns `α⌈ln n⌉` walks at every node of `g`.
    pub fn spawn_all(&mut self, g: &GraphSnapshot) {
        let per = self.cfg.walks_per_round();
        for slot in 0..g.n() {
            let id = g.id_at(slot);
            let q = &mut self.queues[slot];
            q.extend((0..per).map(|i| WalkToken {
                origin: id,
                origin_round: g.round,
                seq: i as u16,
                steps_taken: 0,
            }));
        }
        self.counters.spawned += (per * g.n()) as u64;
    }

    /// One round: destroy tokens on churned nodes, then every node forwards up
    /// to `forward_cap` tokens (FIFO) to uniformly random current neighbors.
    /// Tokens reaching `T` steps stop and become harvestable where they land.
    pub fn step_round(&mut self, g: &GraphSnapshot, churn: &ChurnEvent, preserve: bool) -> StepStats {
        let mut stats = StepStats::default();
        let n = g.n();
        let d = g.degree() as u32;
        let t_len = self.cfg.walk_length as u16;
        let cap = self.cfg.forward_cap;

        // Anything not harvested in the previous round is discarded with it.
        for (slot, done) in self.completed.iter_mut().enumerate() {
            if !done.is_empty() {
                debug_assert!(slot < n);
                stats.destroyed += done.len() as u64;
                done.clear();
            }
        }
        if !preserve {
            for &slot in &churn.slots {
                let q = &mut self.queues[slot as usize];
                stats.destroyed += q.len() as u64;
                q.clear();
            }
        }

        // Waiting tokens stay ahead of this round's arrivals.
        for slot in 0..n {
            let q = &mut self.queues[slot];
            if q.len() > cap {
                let next = &mut self.next[slot];
                debug_assert!(next.is_empty());
                next.extend_from_slice(&q[cap..]);
                q.truncate(cap);
                stats.queued += next.len() as u64;
                stats.nodes_with_queue += 1;
            }
        }

        let adj = g.adjacency();
        self.traffic.iter_mut().for_each(|t| *t = 0);
        for slot in 0..n {
            let q = std::mem::take(&mut self.queues[slot]);
            if q.is_empty() {
                self.queues[slot] = q;
                continue;
            }
            let mut rng = walk_rng(self.protocol_seed, g.id_at(slot), g.round);
            let nb = &adj[slot * d as usize..(slot + 1) * d as usize];
            for mut tok in q.iter().copied() {
                let to = nb[pick(&mut rng, d) as usize] as usize;
                self.traffic[to] += 1;
                tok.steps_taken += 1;
                if tok.steps_taken >= t_len {
                    self.completed[to].push(tok);
                    stats.completed += 1;
                } else {
                    self.next[to].push(tok);
                }
            }
            let sent = q.len() as u64;
            self.traffic[slot] += sent as u32;
            stats.forwarded += sent;
            stats.max_forwarded_by_node = stats.max_forwarded_by_node.max(sent);
            let mut q = q;
            q.clear();
            self.queues[slot] = q;
        }
        std::mem::swap(&mut self.queues, &mut self.next);
        self.completed_round = g.round;
        self.counters.forwarded += stats.forwarded;
        self.counters.destroyed += stats.destroyed;
        stats
    }

    /// Completed tokens waiting at `slot`, as compact tokens. The receiver is
    /// the node at `slot` and the arrival round is the last stepped round.
    pub fn take_completed(&mut self, slot: usize) -> Vec<WalkToken> {
        let out = std::mem::take(&mut self.completed[slot]);
        self.counters.harvested += out.len() as u64;
        out
    }

    /// Moves the completed tokens at `slot` into `buf` (cleared first).
    pub fn swap_completed(&mut self, slot: usize, buf: &mut Vec<WalkToken>) {
        buf.clear();
        std::mem::swap(&mut self.completed[slot], buf);
        self.counters.harvested += buf.len() as u64;
    }

    /// Returns and clears the walks that finished at `node`.
    pub fn harvest_samples(&mut self, g: &GraphSnapshot, node: NodeId) -> Vec<SampleRecord> {
        let Some(slot) = g.slot(node) else {
            return Vec::new();
        };
        let arrival = self.completed_round;
        self.take_completed(slot)
            .into_iter()
            .map(|t| SampleRecord {
                receiver: node,
                origin: t.origin,
                origin_round: t.origin_round,
                arrival_round: arrival,
                seq: t.seq,
            })
            .collect()
    }
}

/// Runs `walks` independent uncapped walks from `s`, started in round `t0`,
/// through round `t`. Returns the per-slot counts of walks ending in round `t`
/// and the number destroyed by churn on the way.
pub fn empirical_destinations(
    schedule: &DynamicNetworkSchedule,
    s: NodeId,
    t0: Round,
    t: Round,
    walks: usize,
    seed: u64,
) -> Result<(Vec<u64>, u64), WalkError> {
    if t < t0 || t >= schedule.horizon() {
        return Err(WalkError::BadRange { from: t0, to: t });
    }
    let slot = schedule.slot_at(s, t0).ok_or(WalkError::UnknownNode { id: s, round: t0 })?;
    let n = schedule.n();
    let mut counts = vec![0u64; n];
    if t == t0 {
        counts[slot] = walks as u64;
        return Ok((counts, 0));
    }
    let cfg = WalkConfig::with_h_override(n, 0, 0, 1).with_walk_length(t - t0).uncapped();
    let preserve = schedule.is_walk_preserving();
    let mut destroyed = 0;
    let batch = u16::MAX as usize + 1;
    for (b, start) in (0..walks).step_by(batch).enumerate() {
        let count = batch.min(walks - start);
        let mut eng = WalkEngine::new(n, cfg.clone(), mix(&[seed, b as u64]));
        eng.inject(slot, spawn_count(s, t0, count));
        for rho in t0 + 1..=t {
            eng.step_round(schedule.snapshot(rho), schedule.event(rho), preserve);
        }
        for (x, c) in counts.iter_mut().enumerate() {
            *c += eng.take_completed(x).len() as u64;
        }
        destroyed += eng.counters().destroyed;
    }
    Ok((counts, destroyed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::GraphSnapshot;

    fn k4() -> GraphSnapshot {
        let lists: Vec<Vec<u32>> = (0..4).map(|i| (0..4).filter(|&j| j != i).collect()).collect();
        GraphSnapshot::from_neighbor_lists(0, &lists).unwrap()
    }

    fn cfg(t: u32) -> WalkConfig {
        WalkConfig::with_h_override(4, 1, 1, 1).with_walk_length(t).uncapped()
    }

    #[test]
    fn spawn_counts() {
        let c = WalkConfig::new(1024, 72, 2, 3).unwrap();
        let toks = spawn_walks(NodeId(5), 40, &c);
        assert_eq!(toks.len(), 504);
        assert!(toks.iter().all(|t| t.steps_taken == 0 && t.origin == NodeId(5)));
        let again = spawn_walks(NodeId(5), 40, &c);
        assert_eq!(toks, again);
        let zero = WalkConfig::with_h_override(1024, 0, 2, 3);
        assert!(spawn_walks(NodeId(5), 40, &zero).is_empty());
    }

    #[test]
    fn one_step_on_k4_is_uniform_over_neighbors() {
        let g = k4();
        let trials = 100_000;
        let mut eng = WalkEngine::new(4, cfg(1), 99);
        eng.inject(0, spawn_count(NodeId(0), 0, 60_000));
        eng.inject(0, (0..40_000).map(|i| WalkToken {
            origin: NodeId(0),
            origin_round: 1,
            seq: i as u16,
            steps_taken: 0,
        }));
        let mut g1 = g.clone();
        g1.round = 1;
        eng.step_round(&g1, &ChurnEvent::default(), false);
        let mut counts = [0usize; 4];
        for (slot, c) in counts.iter_mut().enumerate() {
            *c = eng.take_completed(slot).len();
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn churned_node_destroys_its_tokens() {
        let g = k4();
        let mut eng = WalkEngine::new(4, cfg(5), 1);
        eng.inject(2, spawn_count(NodeId(2), 0, 10));
        let ev = ChurnEvent { round: 1, removed: vec![NodeId(2)], added: vec![NodeId(4)], slots: vec![2] };
        let stats = eng.step_round(&g, &ev, false);
        assert_eq!(stats.destroyed, 10);
        assert_eq!(eng.in_flight(), 0);
        let c = eng.counters();
        assert_eq!(c.spawned, c.destroyed + c.harvested + eng.in_flight());
    }

    #[test]
    fn preserving_mode_keeps_tokens() {
        let g = k4();
        let mut eng = WalkEngine::new(4, cfg(5), 1);
        eng.inject(2, spawn_count(NodeId(2), 0, 10));
        let ev = ChurnEvent { round: 1, removed: vec![NodeId(2)], added: vec![NodeId(4)], slots: vec![2] };
        let stats = eng.step_round(&g, &ev, true);
        assert_eq!(stats.destroyed, 0);
        assert_eq!(eng.in_flight(), 10);
    }

    #[test]
    fn cap_queues_excess_in_fifo_order() {
        let g = k4();
        let c = cfg(10).with_forward_cap(3);
        let mut eng = WalkEngine::new(4, c, 1);
        eng.inject(0, spawn_count(NodeId(0), 0, 5));
        let stats = eng.step_round(&g, &ChurnEvent::default(), false);
        assert_eq!(stats.forwarded, 3);
        assert_eq!(stats.queued, 2);
        assert_eq!(stats.nodes_with_queue, 1);
        // The two waiting tokens are the last two spawned and still sit first in line.
        let waiting: Vec<u16> = eng.queues[0].iter().take(2).map(|t| t.seq).collect();
        assert_eq!(waiting, vec![3, 4]);
        assert!(eng.queues[0].iter().take(2).all(|t| t.steps_taken == 0));
    }

    #[test]
    fn harvest_returns_records_once() {
        let g = k4();
        let mut eng = WalkEngine::new(4, cfg(1), 3);
        eng.inject(1, spawn_count(NodeId(1), 0, 30));
        eng.step_round(&g, &ChurnEvent::default(), false);
        let total: usize = (0..4u32).map(|i| eng.harvest_samples(&g, NodeId(i)).len()).sum();
        assert_eq!(total, 30);
        let again: usize = (0..4u32).map(|i| eng.harvest_samples(&g, NodeId(i)).len()).sum();
        assert_eq!(again, 0);
    }

    #[test]
    fn pick_is_in_range() {
        let mut rng = walk_rng(1, NodeId(1), 1);
        for d in [1u32, 3, 7, 8] {
            for _ in 0..1000 {
                assert!(pick(&mut rng, d) < d);
            }
        }
    }
}
