//! Landmark sets: fanout-2 trees grown from committee members, one level per
//! round, rebuilt every `τ` rounds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::ids::{ItemId, NodeId, Round, TaskTag};
use crate::net::{distinct_origins, Envelope, Payload, RoundCtx};
use crate::netgen::DynamicNetworkSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("tree depth undefined for n = {n}, k = {k}")]
    DomainError { n: usize, k: f64 },
}

/// Depth at which tree construction stops:
///
/// `μ = ⌈(log₂n − 2(log₂ln n + ln 2)) / (2·log₂(2·(1−1/ln^{(k−1)/2}n)·(1−1/ln^{k−1}n)·(1−1/n³)))⌉`
pub fn tree_depth(n: usize, k: f64) -> Result<u32, LandmarkError> {
    if n < 16 || !(k > 1.0) {
        return Err(LandmarkError::DomainError { n, k });
    }
    let nf = n as f64;
    let ln = nf.ln();
    let num = nf.log2() - 2.0 * (ln.log2() + std::f64::consts::LN_2);
    let factor = 2.0 * (1.0 - 1.0 / ln.powf((k - 1.0) / 2.0)) * (1.0 - 1.0 / ln.powf(k - 1.0)) * (1.0 - nf.powi(-3));
    if !(factor > 0.0) {
        return Err(LandmarkError::DomainError { n, k });
    }
    let den = 2.0 * factor.log2();
    if !(den > 0.0) {
        return Err(LandmarkError::DomainError { n, k });
    }
    Ok((num / den).ceil().max(0.0) as u32)
}

/// `roots · (2^{μ+1} − 1)`: every root growing a full binary tree.
pub fn size_cap(roots: usize, depth: u32) -> u64 {
    let per = if depth >= 62 { u64::MAX } else { (1u64 << (depth + 1)) - 1 };
    per.saturating_mul(roots as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LandmarkKind {
    Storage,
    Search,
}

impl LandmarkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LandmarkKind::Storage => "storage",
            LandmarkKind::Search => "search",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRecord {
    pub item_id: ItemId,
    pub tag: TaskTag,
    pub build: u64,
    pub committee_ids: Arc<Vec<NodeId>>,
    pub created_round: Round,
    pub expires_round: Round,
    pub kind: LandmarkKind,
}

impl LandmarkRecord {
    #[inline]
    pub fn live_at(&self, r: Round) -> bool {
        self.created_round <= r && r < self.expires_round
    }
}

/// Every landmark record held by present nodes.
#[derive(Default)]
pub struct LandmarkStore {
    by_node: HashMap<NodeId, Vec<LandmarkRecord>>,
    by_tag: BTreeMap<TaskTag, HashMap<NodeId, Round>>,
    max_per_node: usize,
}

impl LandmarkStore {
    pub fn insert(&mut self, holder: NodeId, rec: LandmarkRecord) {
        let e = self.by_tag.entry(rec.tag).or_default().entry(holder).or_insert(0);
        *e = (*e).max(rec.expires_round);
        let v = self.by_node.entry(holder).or_default();
        v.push(rec);
        self.max_per_node = self.max_per_node.max(v.len());
    }

    pub fn records(&self, holder: NodeId) -> &[LandmarkRecord] {
        self.by_node.get(&holder).map_or(&[], Vec::as_slice)
    }

    /// Live storage record for `item` at `holder`.
    pub fn storage_record(&self, holder: NodeId, item: &ItemId, r: Round) -> Option<&LandmarkRecord> {
        self.records(holder)
            .iter()
            .filter(|x| x.kind == LandmarkKind::Storage && x.item_id == *item && x.live_at(r))
            .max_by_key(|x| x.created_round)
    }

    pub fn has_live(&self, holder: NodeId, tag: TaskTag, r: Round) -> bool {
        self.records(holder).iter().any(|x| x.tag == tag && x.live_at(r))
    }

    /// Holders of a live record for `tag`, sorted by id.
    pub fn holders(&self, tag: TaskTag, r: Round) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = match self.by_tag.get(&tag) {
            Some(m) => m
                .iter()
                .filter(|(&id, _)| self.has_live(id, tag, r))
                .map(|(&id, _)| id)
                .collect(),
            None => Vec::new(),
        };
        v.sort_unstable();
        v
    }

    /// Drops expired records and everything held by departed nodes.
    pub fn purge(&mut self, r: Round, removed: &[NodeId]) -> usize {
        let mut dropped = 0;
        for id in removed {
            if let Some(v) = self.by_node.remove(id) {
                dropped += v.len();
            }
        }
        self.by_node.retain(|_, v| {
            v.retain(|x| x.expires_round > r);
            !v.is_empty()
        });
        let by_node = &self.by_node;
        for m in self.by_tag.values_mut() {
            m.retain(|id, exp| *exp > r && by_node.contains_key(id));
        }
        self.by_tag.retain(|_, m| !m.is_empty());
        dropped
    }

    pub fn total_records(&self) -> usize {
        self.by_node.values().map(Vec::len).sum()
    }

    pub fn max_records_per_node(&self) -> usize {
        self.max_per_node
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildMetrics {
    pub item_id: ItemId,
    pub tag: TaskTag,
    pub kind: LandmarkKind,
    pub round: Round,
    pub roots: usize,
    pub set_size: usize,
    pub depth_reached: u32,
    pub invitations_sent: u64,
    pub invitations_lost: u64,
    pub declined: u64,
    pub cap: u64,
}

/// One landmark build in progress.
#[derive(Clone, Debug)]
pub struct TreeBuildState {
    pub build: u64,
    pub depth: u32,
    pub target_depth: u32,
    pub frontier: Vec<NodeId>,
    pub used: HashSet<NodeId>,
    committee: Arc<Vec<NodeId>>,
    tau: Round,
    in_flight: u64,
    pub metrics: BuildMetrics,
}

impl TreeBuildState {
    /// Round `ctx.round`: live committee members become landmarks and invite
    /// their first children.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        build: u64,
        tag: TaskTag,
        item_id: ItemId,
        kind: LandmarkKind,
        committee: Arc<Vec<NodeId>>,
        target_depth: u32,
        tau: Round,
        ctx: &mut RoundCtx,
        store: &mut LandmarkStore,
    ) -> Self {
        let roots: Vec<NodeId> = committee.iter().copied().filter(|&m| ctx.present(m)).collect();
        let cap = size_cap(committee.len(), target_depth);
        let mut s = TreeBuildState {
            build,
            depth: 0,
            target_depth,
            frontier: Vec::new(),
            used: HashSet::new(),
            committee,
            tau,
            in_flight: 0,
            metrics: BuildMetrics {
                item_id,
                tag,
                kind,
                round: ctx.round,
                roots: roots.len(),
                set_size: 0,
                depth_reached: 0,
                invitations_sent: 0,
                invitations_lost: 0,
                declined: 0,
                cap,
            },
        };
        for v in roots {
            s.adopt(v, 0, ctx, store);
        }
        s
    }

    fn adopt(&mut self, v: NodeId, depth: u32, ctx: &mut RoundCtx, store: &mut LandmarkStore) {
        self.used.insert(v);
        self.frontier.push(v);
        let m = &mut self.metrics;
        m.set_size += 1;
        m.depth_reached = m.depth_reached.max(depth);
        assert!(m.set_size as u64 <= m.cap, "landmark set exceeds its hard cap");
        store.insert(
            v,
            LandmarkRecord {
                item_id: m.item_id,
                tag: m.tag,
                build: self.build,
                committee_ids: self.committee.clone(),
                created_round: ctx.round,
                expires_round: ctx.round + 2 * self.tau,
                kind: m.kind,
            },
        );
        if depth < self.target_depth {
            let committee = &self.committee;
            let children = distinct_origins(ctx.samples(v), 2, |o| o == v || committee.contains(&o));
            for c in children {
                let payload = Payload::LandmarkInvite { build: self.build, depth: depth + 1, committee: self.committee.clone() };
                ctx.send(v, c, self.metrics.tag, payload);
                self.metrics.invitations_sent += 1;
                self.in_flight += 1;
            }
        }
    }

    /// Handles this round's deliveries for the build: invitees not yet in the
    /// build join and invite their own children, the rest decline.
    pub fn on_delivered(&mut self, ctx: &mut RoundCtx, invites: &[&Envelope], lost: u64, store: &mut LandmarkStore) {
        self.frontier.clear();
        self.in_flight = 0;
        self.metrics.invitations_lost += lost;
        for env in invites {
            if let Payload::LandmarkInvite { depth, .. } = env.payload {
                if self.used.contains(&env.to) {
                    self.metrics.declined += 1;
                } else {
                    self.depth = self.depth.max(depth);
                    self.adopt(env.to, depth, ctx, store);
                }
            }
        }
    }

    /// No invitation of this build is still travelling.
    pub fn finished(&self) -> bool {
        self.in_flight == 0
    }
}

/// Builds run at the first round of an epoch and `τ` rounds later.
pub fn is_rebuild_tick(epoch_start: Round, r: Round, tau: Round) -> bool {
    r == epoch_start || r == epoch_start + tau
}

/// Live records for `tag` whose holders stay present through `[r, r+τ]`.
pub fn live_landmarks_through(store: &LandmarkStore, tag: TaskTag, r: Round, tau: Round, schedule: &DynamicNetworkSchedule) -> usize {
    store
        .holders(tag, r)
        .into_iter()
        .filter(|&id| schedule.present_throughout(id, r, r + tau))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent evaluation with every logarithm spelled out.
    fn mu_reference(n: f64, k: f64) -> f64 {
        let log2 = |x: f64| x.ln() / 2f64.ln();
        let ln_n = n.ln();
        let num = log2(n) - 2.0 * (log2(ln_n) + 2f64.ln());
        let a = 1.0 - 1.0 / ln_n.powf((k - 1.0) / 2.0);
        let b = 1.0 - 1.0 / ln_n.powf(k - 1.0);
        let c = 1.0 - 1.0 / (n * n * n);
        (num / (2.0 * log2(2.0 * a * b * c))).ceil()
    }

    #[test]
    fn depth_for_a_million_nodes() {
        assert_eq!(mu_reference((1u64 << 20) as f64, 2.0), 13.0);
        assert_eq!(tree_depth(1 << 20, 2.0).unwrap(), 13);
        assert_eq!(tree_depth(1024, 2.0).unwrap(), mu_reference(1024.0, 2.0) as u32);
    }

    #[test]
    fn depth_shape() {
        // Large n: depth grows with n. Small n at k = 2 is not monotone since
        // the base of the logarithm approaches one.
        for k in [2.0, 2.5, 3.0] {
            let mut prev = tree_depth(1 << 16, k).unwrap();
            for e in 17..=30 {
                let mu = tree_depth(1 << e, k).unwrap();
                assert!(mu >= prev, "k={k} e={e}");
                prev = mu;
            }
        }
        assert!(tree_depth(1 << 10, 2.0).unwrap() > tree_depth(1 << 14, 2.0).unwrap());
        for e in [10, 16, 24] {
            assert!(tree_depth(1 << e, 3.0).unwrap() <= tree_depth(1 << e, 2.0).unwrap());
        }
    }

    #[test]
    fn domain_errors() {
        assert!(tree_depth(15, 2.0).is_err());
        assert!(tree_depth(1024, 1.0).is_err());
        // ln(16)^0.05 is barely above one, so the base of the logarithm is below 1.
        assert!(tree_depth(16, 1.1).is_err());
    }

    #[test]
    fn cap_and_ticks() {
        assert_eq!(size_cap(14, 0), 14);
        assert_eq!(size_cap(14, 2), 14 * 7);
        assert!(is_rebuild_tick(10, 10, 5) && is_rebuild_tick(10, 15, 5) && !is_rebuild_tick(10, 12, 5));
    }

    #[test]
    fn store_expiry_and_departure() {
        let mut s = LandmarkStore::default();
        let rec = |tag: u32, created: Round| LandmarkRecord {
            item_id: ItemId([1; 32]),
            tag: TaskTag(tag),
            build: 0,
            committee_ids: Arc::new(vec![NodeId(1)]),
            created_round: created,
            expires_round: created + 10,
            kind: LandmarkKind::Storage,
        };
        s.insert(NodeId(5), rec(1, 0));
        s.insert(NodeId(6), rec(1, 0));
        s.insert(NodeId(6), rec(2, 4));
        assert_eq!(s.holders(TaskTag(1), 9), vec![NodeId(5), NodeId(6)]);
        assert!(s.holders(TaskTag(1), 10).is_empty());
        assert!(s.storage_record(NodeId(6), &ItemId([1; 32]), 12).is_some());
        assert_eq!(s.purge(3, &[NodeId(5)]), 1);
        assert_eq!(s.holders(TaskTag(1), 3), vec![NodeId(6)]);
        s.purge(10, &[]);
        assert_eq!(s.total_records(), 1);
        assert_eq!(s.max_records_per_node(), 2);
    }
}
