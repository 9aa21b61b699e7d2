//! The adversary's pre-committed sequence of graphs and churn events.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::ids::{NodeId, Round};
use crate::netgen::expander::{build_regular_expander_with_budget, certify, check_params};
use crate::netgen::{GraphSnapshot, NetError};
use crate::rng::{adversary_rng, SimRng};

const PURPOSE_CHURN: u64 = 2;
const PURPOSE_REWIRE: u64 = 3;

/// How the oblivious adversary picks which nodes to replace each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChurnStrategy {
    None,
    UniformRandom,
    OldestFirst,
    /// A contiguous run of the sorted current ids, starting at a random offset.
    Block,
}

impl FromStr for ChurnStrategy {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ChurnStrategy::None),
            "uniform-random" | "uniform" => Ok(ChurnStrategy::UniformRandom),
            "oldest-first" | "oldest" => Ok(ChurnStrategy::OldestFirst),
            "block" => Ok(ChurnStrategy::Block),
            other => Err(NetError::InvalidParams(format!("unknown churn strategy `{other}`"))),
        }
    }
}

impl fmt::Display for ChurnStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChurnStrategy::None => "none",
            ChurnStrategy::UniformRandom => "uniform-random",
            ChurnStrategy::OldestFirst => "oldest-first",
            ChurnStrategy::Block => "block",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleParams {
    pub n: usize,
    pub d: usize,
    pub lambda_max: f64,
    pub horizon: Round,
    /// Churn exponent; the per-round limit is `rate_scale * n / ln(n)^k`.
    pub k: f64,
    pub rate_scale: f64,
    pub strategy: ChurnStrategy,
    /// Fraction of the `n*d/2` edges touched by double-edge swaps each round.
    pub rewire_fraction: f64,
    pub seed: u64,
    pub retry_budget: usize,
}

impl ScheduleParams {
    pub fn new(n: usize, d: usize, horizon: Round, seed: u64) -> Self {
        ScheduleParams {
            n,
            d,
            lambda_max: 0.7,
            horizon,
            k: 2.0,
            rate_scale: 0.0,
            strategy: ChurnStrategy::None,
            rewire_fraction: 0.01,
            seed,
            retry_budget: super::expander::DEFAULT_RETRY_BUDGET,
        }
    }

    pub fn per_round_churn(&self) -> usize {
        if self.strategy == ChurnStrategy::None {
            0
        } else {
            churn_rate(self.n, self.k, self.rate_scale)
        }
    }
}

/// `floor(rate_scale * n / ln(n)^k)`.
pub fn churn_rate(n: usize, k: f64, rate_scale: f64) -> usize {
    let ln = (n as f64).ln();
    (rate_scale * n as f64 / ln.powf(k)).floor() as usize
}

/// Replacement set of one round. `added[i]` takes over the slot of `removed[i]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChurnEvent {
    pub round: Round,
    pub removed: Vec<NodeId>,
    pub added: Vec<NodeId>,
    pub slots: Vec<u32>,
}

impl ChurnEvent {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }
}

/// Membership interval of one id: present in rounds `joined..left`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeLife {
    pub slot: u32,
    pub joined: Round,
    pub left: Option<Round>,
}

impl NodeLife {
    #[inline]
    pub fn present_at(&self, r: Round) -> bool {
        self.joined <= r && self.left.is_none_or(|l| r < l)
    }
}

#[derive(Clone, Debug)]
pub struct DynamicNetworkSchedule {
    params: ScheduleParams,
    snapshots: Vec<GraphSnapshot>,
    events: Vec<ChurnEvent>,
    lives: Vec<NodeLife>,
    walk_preserving: bool,
}

/// Generates the full schedule; a pure function of `params`.
pub fn commit_churn_schedule(params: &ScheduleParams) -> Result<DynamicNetworkSchedule, NetError> {
    check_params(params.n, params.d)?;
    if !(params.k > 1.0) {
        return Err(NetError::InvalidParams(format!("k = {} must exceed 1", params.k)));
    }
    if !(params.rate_scale >= 0.0) {
        return Err(NetError::InvalidParams("rate_scale must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&params.rewire_fraction) {
        return Err(NetError::InvalidParams("rewire_fraction must lie in [0,1]".into()));
    }
    if params.horizon == 0 {
        return Err(NetError::InvalidParams("horizon must be positive".into()));
    }
    let n = params.n;
    let rate = params.per_round_churn();
    if rate >= n {
        return Err(NetError::RateTooHigh { rate, n });
    }

    let g0 = build_regular_expander_with_budget(
        n,
        params.d,
        params.lambda_max,
        params.seed,
        params.retry_budget,
    )?;
    let mut lives: Vec<NodeLife> =
        (0..n as u32).map(|s| NodeLife { slot: s, joined: 0, left: None }).collect();
    let mut ids: Vec<NodeId> = g0.nodes().to_vec();
    let mut adj = g0.adjacency_arc().clone();
    let mut lambda_est = g0.lambda_estimate;
    let mut snapshots = Vec::with_capacity(params.horizon as usize);
    let mut events = Vec::with_capacity(params.horizon as usize);
    snapshots.push(g0);
    events.push(ChurnEvent::default());

    for r in 1..params.horizon {
        let mut rng = adversary_rng(params.seed, PURPOSE_CHURN, r as u64);
        let mut slots = pick_removed_slots(params.strategy, rate, &ids, &lives, &mut rng);
        slots.sort_unstable();
        let mut event = ChurnEvent { round: r, slots, ..Default::default() };
        for &s in &event.slots {
            let old = ids[s as usize];
            lives[old.index()].left = Some(r);
            let fresh = NodeId(lives.len() as u32);
            lives.push(NodeLife { slot: s, joined: r, left: None });
            ids[s as usize] = fresh;
            event.removed.push(old);
            event.added.push(fresh);
        }
        let ids_arc = Arc::new(ids.clone());

        if params.rewire_fraction > 0.0 {
            let swaps = ((params.rewire_fraction * (n * params.d) as f64 / 2.0).round() as usize).max(1);
            let mut accepted = None;
            for attempt in 0..params.retry_budget {
                let mut rng =
                    adversary_rng(params.seed, PURPOSE_REWIRE, ((r as u64) << 16) | attempt as u64);
                let mut next = (*adj).clone();
                double_edge_swaps(&mut next, params.d, swaps, &mut rng);
                let g = GraphSnapshot::from_parts(
                    r,
                    params.d,
                    ids_arc.clone(),
                    Arc::new(next),
                    params.lambda_max,
                    1.0,
                );
                if let Some(lam) = certify(&g, params.lambda_max)? {
                    accepted = Some((g, lam));
                    break;
                }
            }
            let Some((mut g, lam)) = accepted else {
                return Err(NetError::GenerationExhausted { attempts: params.retry_budget });
            };
            g.lambda_estimate = lam;
            lambda_est = lam;
            adj = g.adjacency_arc().clone();
            snapshots.push(g);
        } else {
            // Relabeling slots leaves the spectrum unchanged.
            snapshots.push(GraphSnapshot::from_parts(
                r,
                params.d,
                ids_arc,
                adj.clone(),
                params.lambda_max,
                lambda_est,
            ));
        }
        events.push(event);
    }

    Ok(DynamicNetworkSchedule {
        params: params.clone(),
        snapshots,
        events,
        lives,
        walk_preserving: false,
    })
}

fn pick_removed_slots(
    strategy: ChurnStrategy,
    rate: usize,
    ids: &[NodeId],
    lives: &[NodeLife],
    rng: &mut SimRng,
) -> Vec<u32> {
    let n = ids.len();
    if rate == 0 {
        return Vec::new();
    }
    match strategy {
        ChurnStrategy::None => Vec::new(),
        ChurnStrategy::UniformRandom => {
            index::sample(rng, n, rate).into_iter().map(|s| s as u32).collect()
        }
        ChurnStrategy::OldestFirst => {
            let mut order: Vec<NodeId> = ids.to_vec();
            order.sort_unstable_by_key(|id| (lives[id.index()].joined, *id));
            order[..rate].iter().map(|id| lives[id.index()].slot).collect()
        }
        ChurnStrategy::Block => {
            let mut order: Vec<NodeId> = ids.to_vec();
            order.sort_unstable();
            let start = rng.gen_range(0..n);
            (0..rate).map(|i| lives[order[(start + i) % n].index()].slot).collect()
        }
    }
}

/// Degree-preserving rewiring: `(u,v),(x,y) -> (u,y),(x,v)` when that keeps
/// the graph simple.
fn double_edge_swaps(adj: &mut [u32], d: usize, swaps: usize, rng: &mut SimRng) {
    let n = adj.len() / d;
    let mut done = 0;
    let mut tries = 0;
    while done < swaps && tries < swaps * 20 {
        tries += 1;
        let (u, iu) = (rng.gen_range(0..n), rng.gen_range(0..d));
        let (x, ix) = (rng.gen_range(0..n), rng.gen_range(0..d));
        let v = adj[u * d + iu] as usize;
        let y = adj[x * d + ix] as usize;
        if u == x || u == y || v == x || v == y {
            continue;
        }
        let has = |a: usize, b: usize, adj: &[u32]| adj[a * d..(a + 1) * d].contains(&(b as u32));
        if has(u, y, adj) || has(x, v, adj) {
            continue;
        }
        let replace = |adj: &mut [u32], a: usize, from: usize, to: usize| {
            let pos = adj[a * d..(a + 1) * d].iter().position(|&w| w as usize == from).unwrap();
            adj[a * d + pos] = to as u32;
        };
        adj[u * d + iu] = y as u32;
        replace(adj, v, u, x);
        adj[x * d + ix] = v as u32;
        replace(adj, y, x, u);
        done += 1;
    }
}

impl DynamicNetworkSchedule {
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn degree(&self) -> usize {
        self.params.d
    }

    pub fn horizon(&self) -> Round {
        self.snapshots.len() as Round
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    /// Snapshot and churn event of round `r`.
    pub fn advance(&self, r: Round) -> Result<(GraphSnapshot, ChurnEvent), NetError> {
        if r >= self.horizon() {
            return Err(NetError::OutOfHorizon { round: r, horizon: self.horizon() });
        }
        Ok((self.snapshots[r as usize].clone(), self.events[r as usize].clone()))
    }

    #[inline]
    pub fn snapshot(&self, r: Round) -> &GraphSnapshot {
        &self.snapshots[r as usize]
    }

    #[inline]
    pub fn event(&self, r: Round) -> &ChurnEvent {
        &self.events[r as usize]
    }

    pub fn snapshots(&self) -> &[GraphSnapshot] {
        &self.snapshots
    }

    pub fn events(&self) -> &[ChurnEvent] {
        &self.events
    }

    /// Every id ever issued, indexed by `NodeId`.
    pub fn lives(&self) -> &[NodeLife] {
        &self.lives
    }

    #[inline]
    pub fn life(&self, id: NodeId) -> Option<&NodeLife> {
        self.lives.get(id.index())
    }

    #[inline]
    pub fn present(&self, id: NodeId, r: Round) -> bool {
        self.life(id).is_some_and(|l| l.present_at(r)) && r < self.horizon()
    }

    /// Present in every round of `from..=to`.
    pub fn present_throughout(&self, id: NodeId, from: Round, to: Round) -> bool {
        self.life(id).is_some_and(|l| l.joined <= from && l.left.is_none_or(|x| to < x))
    }

    /// Slot of `id` if present at `r`.
    #[inline]
    pub fn slot_at(&self, id: NodeId, r: Round) -> Option<usize> {
        self.life(id).filter(|l| l.present_at(r)).map(|l| l.slot as usize)
    }

    /// Whether walks on churned nodes are relocated instead of destroyed.
    pub fn is_walk_preserving(&self) -> bool {
        self.walk_preserving
    }

    /// Full schedule dump: concatenation of the per-round snapshot dumps.
    pub fn dump(&self) -> String {
        self.snapshots.iter().map(GraphSnapshot::dump).collect()
    }

    /// Hex SHA-256 of [`Self::dump`].
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.snapshots {
            h.update(s.dump().as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn preserving_copy(&self) -> Self {
        DynamicNetworkSchedule { walk_preserving: true, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rate_scale: f64, strategy: ChurnStrategy) -> ScheduleParams {
        ScheduleParams {
            rate_scale,
            strategy,
            lambda_max: 0.9,
            ..ScheduleParams::new(64, 6, 30, 11)
        }
    }

    #[test]
    fn churn_rate_for_1024() {
        // 4 * 1024 / ln(1024)^2 = 4096 / 48.05 = 85.2
        assert_eq!(churn_rate(1024, 2.0, 4.0), 85);
    }

    #[test]
    fn zero_rate_keeps_membership() {
        let s = commit_churn_schedule(&params(0.0, ChurnStrategy::UniformRandom)).unwrap();
        assert!(s.events().iter().all(ChurnEvent::is_empty));
        let first = s.snapshot(0).nodes().to_vec();
        assert!(s.snapshots().iter().all(|g| g.nodes() == first.as_slice()));
    }

    #[test]
    fn oldest_first_removes_oldest() {
        let mut p = params(0.0, ChurnStrategy::OldestFirst);
        // 64 / ln(64)^2 = 3.7, so rate_scale 0.3 gives one node per round.
        p.rate_scale = 0.3;
        let s = commit_churn_schedule(&p).unwrap();
        for r in 1..s.horizon() {
            let ev = s.event(r);
            assert_eq!(ev.removed.len(), 1);
            let prev = s.snapshot(r - 1);
            let oldest = prev
                .nodes()
                .iter()
                .min_by_key(|id| (s.life(**id).unwrap().joined, **id))
                .copied()
                .unwrap();
            assert_eq!(ev.removed[0], oldest);
        }
    }

    #[test]
    fn rate_too_high() {
        let mut p = params(100.0, ChurnStrategy::UniformRandom);
        p.k = 1.01;
        assert!(matches!(commit_churn_schedule(&p), Err(NetError::RateTooHigh { .. })));
    }

    #[test]
    fn k_must_exceed_one() {
        let mut p = params(1.0, ChurnStrategy::UniformRandom);
        p.k = 1.0;
        assert!(matches!(commit_churn_schedule(&p), Err(NetError::InvalidParams(_))));
    }

    #[test]
    fn out_of_horizon() {
        let s = commit_churn_schedule(&params(1.0, ChurnStrategy::Block)).unwrap();
        assert!(matches!(s.advance(30), Err(NetError::OutOfHorizon { .. })));
        let (g, ev) = s.advance(0).unwrap();
        assert_eq!(g.round, 0);
        assert!(ev.is_empty());
    }
}
