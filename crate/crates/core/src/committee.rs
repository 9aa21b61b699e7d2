//! Committee creation and perpetual re-formation.
//!
//! Timeline of one maintenance window starting at `r = created + 2γτ`:
//!
//! * `r`: live members record the walks that completed at them and send their
//!   count (and, in erasure mode, their piece) to every other member;
//! * `r+1`: the counts are known to every live member; members are ranked by
//!   (count desc, id asc); the top `min(⌈ln n⌉, live)` become initiators;
//! * `r+2`: every initiator still present invites the origins of the first
//!   `h⌈ln n⌉` walks it recorded in `r`; old members resign but keep their
//!   task state through `r+3`;
//! * `r+3`: invitees take over; surviving initiators announce themselves;
//! * `r+4`: the best-ranked surviving initiator's candidate is adopted and the
//!   other candidates are dissolved.

use std::collections::BTreeMap;
use std::sync::Arc;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::datastore::DataItem;
use crate::erasure::{disperse, reconstruct, CodeParams, ErasureError, Piece};
use crate::ids::{ItemId, NodeId, Round, TaskTag};
use crate::net::{distinct_origins, Envelope, Payload, RoundCtx, TaskPayload};
use crate::netgen::DynamicNetworkSchedule;
use crate::walks::SampleRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommitteeError {
    #[error("{have} distinct sample origins, {need} needed")]
    InsufficientSamples { have: usize, need: usize },
    #[error("committee creation needs round >= {min}, got {round}")]
    TooEarly { round: Round, min: Round },
    #[error("committee dead in epoch {epoch}: {reason:?}")]
    CommitteeDead { epoch: u32, reason: DeathReason },
    #[error("only {have} pieces reachable, {need} needed")]
    ReconstructionImpossible { have: usize, need: usize },
    #[error(transparent)]
    Erasure(#[from] ErasureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeathReason {
    /// No invitee was present when the invitation arrived.
    NoneJoined,
    /// No member present at the start of a maintenance window.
    NoLiveMembers,
    /// No initiator was left to invite, or none survived to agreement.
    InitiatorsGone,
    /// No initiator could rebuild the item from the pieces it saw.
    ItemLost,
}

/// A committee as known to its members.
#[derive(Clone, Debug, PartialEq)]
pub struct Committee {
    pub task_tag: TaskTag,
    /// Full roster sent with the invitation. Ids are never reused, so an
    /// invitee absent on delivery stays absent and `live` is just presence.
    pub members: Arc<Vec<NodeId>>,
    pub epoch: u32,
    pub created_round: Round,
    /// Round from which the current epoch runs landmark builds.
    pub epoch_start: Round,
    pub leader_of_epoch: Option<NodeId>,
    pub target_size: usize,
}

impl Committee {
    pub fn live_members<'a>(&'a self, schedule: &'a DynamicNetworkSchedule, r: Round) -> impl Iterator<Item = NodeId> + 'a {
        self.members.iter().copied().filter(move |&m| schedule.present(m, r))
    }

    /// First round of the next maintenance window.
    pub fn next_maintenance(&self, tau: Round) -> Round {
        self.created_round + 2 * (self.epoch + 1) * tau
    }
}

/// Chooses `size` distinct origins from `u`'s freshest samples.
pub fn create_committee(
    u: NodeId,
    r: Round,
    samples: &[SampleRecord],
    task_tag: TaskTag,
    size: usize,
    tau: Round,
) -> Result<Committee, CommitteeError> {
    if r < 2 * tau {
        return Err(CommitteeError::TooEarly { round: r, min: 2 * tau });
    }
    let mut fresh: Vec<&SampleRecord> = samples.iter().collect();
    fresh.sort_by_key(|s| std::cmp::Reverse(s.arrival_round));
    let mut chosen: Vec<NodeId> = Vec::with_capacity(size);
    for s in fresh {
        if chosen.len() == size {
            break;
        }
        if s.origin != u && !chosen.contains(&s.origin) {
            chosen.push(s.origin);
        }
    }
    if chosen.len() < size {
        return Err(CommitteeError::InsufficientSamples { have: chosen.len(), need: size });
    }
    Ok(Committee {
        task_tag,
        members: Arc::new(chosen),
        epoch: 0,
        created_round: r,
        epoch_start: r + 1,
        leader_of_epoch: None,
        target_size: size,
    })
}

/// Ranks a count table by (count desc, id asc).
pub fn rank_members(counts: &BTreeMap<NodeId, u32>) -> Vec<(NodeId, u32)> {
    let mut v: Vec<(NodeId, u32)> = counts.iter().map(|(&id, &c)| (id, c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Initiators of the parallel construction: the top `min(⌈ln n⌉, live)`.
pub fn initiators(counts: &BTreeMap<NodeId, u32>, log_n: usize) -> Vec<NodeId> {
    rank_members(counts).into_iter().take(log_n).map(|(id, _)| id).collect()
}

/// The candidate adopted by the survivors: the best-ranked surviving initiator.
pub fn agree(initiators: &[NodeId], survived: impl Fn(NodeId) -> bool) -> Option<usize> {
    initiators.iter().position(|&id| survived(id))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitteeHealth {
    pub round: Round,
    pub live_members: usize,
    pub core_proxy_members: usize,
    pub good: bool,
}

/// Goodness via the window-survivor proxy: members present in every round of
/// `[r - 2τ, r]`.
pub fn measure_health(
    members: &[NodeId],
    r: Round,
    schedule: &DynamicNetworkSchedule,
    tau: Round,
    epsilon: f64,
    target_size: usize,
) -> CommitteeHealth {
    let from = r.saturating_sub(2 * tau);
    let live = members.iter().filter(|&&m| schedule.present(m, r)).count();
    let core = members.iter().filter(|&&m| schedule.present_throughout(m, from, r)).count();
    CommitteeHealth {
        round: r,
        live_members: live,
        core_proxy_members: core,
        good: core as f64 >= (1.0 - epsilon) * target_size as f64,
    }
}

/// What a committee is entrusted with.
#[derive(Clone, Debug)]
pub enum TaskState {
    Replicate(Arc<DataItem>),
    Erasure { item_id: ItemId, params: CodeParams },
    Search { requester: NodeId, item: ItemId, deadline: Round },
}

impl TaskState {
    pub fn item_id(&self) -> ItemId {
        match self {
            TaskState::Replicate(d) => d.item_id,
            TaskState::Erasure { item_id, .. } => *item_id,
            TaskState::Search { item, .. } => *item,
        }
    }

    pub fn is_search(&self) -> bool {
        matches!(self, TaskState::Search { .. })
    }
}

/// Task data held by one node on behalf of the committee.
#[derive(Clone, Debug)]
pub enum Held {
    Replica(Arc<DataItem>),
    Piece(Arc<Piece>),
    Nothing,
}

#[derive(Clone, Debug)]
pub struct Holding {
    pub held: Held,
    /// Last round the node keeps the data; `None` while it is a member.
    pub until: Option<Round>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CommitteeEvent {
    Formed { round: Round, members: Arc<Vec<NodeId>> },
    Handover { round: Round, epoch: u32, leader: NodeId, candidates: usize, members: Arc<Vec<NodeId>> },
    Dead { round: Round, epoch: u32, reason: DeathReason },
    ReconstructionImpossible { round: Round, epoch: u32, initiator: NodeId, have: usize, need: usize },
    Dissolved { round: Round },
}

#[derive(Clone, Debug)]
struct Candidate {
    rank: u16,
    initiator: NodeId,
    invited: Arc<Vec<NodeId>>,
    joined: Vec<(NodeId, Held)>,
}

#[derive(Clone, Debug)]
enum Phase {
    Forming,
    Active,
    Recorded { r: Round, origins: BTreeMap<NodeId, Vec<NodeId>>, counts: BTreeMap<NodeId, u32> },
    Ranked { r: Round, origins: BTreeMap<NodeId, Vec<NodeId>>, initiators: Vec<NodeId>, pieces: BTreeMap<NodeId, Vec<Arc<Piece>>> },
    Invited { r: Round, initiators: Vec<NodeId>, candidates: Vec<Candidate> },
    Agreeing { r: Round, candidates: Vec<Candidate> },
    Dead,
    Dissolved,
}

/// One committee and its task, advanced once per round.
#[derive(Clone, Debug)]
pub struct CommitteeRunner {
    pub committee: Committee,
    pub task: TaskState,
    holdings: BTreeMap<NodeId, Holding>,
    phase: Phase,
    tau: Round,
    log_n: usize,
}

impl CommitteeRunner {
    /// Sends the creation invitations from `u` in round `committee.created_round`.
    pub fn launch(committee: Committee, task: TaskState, creator: NodeId, ctx: &mut RoundCtx, tau: Round, log_n: usize) -> Result<Self, CommitteeError> {
        let payloads = initial_payloads(&task, &committee.members)?;
        for (i, &m) in committee.members.iter().enumerate() {
            let payload = Payload::Invite {
                epoch: 0,
                rank: 0,
                members: committee.members.clone(),
                task: payloads[i].clone(),
            };
            ctx.send(creator, m, committee.task_tag, payload);
        }
        Ok(CommitteeRunner { committee, task, holdings: BTreeMap::new(), phase: Phase::Forming, tau, log_n })
    }

    pub fn is_alive(&self) -> bool {
        !matches!(self.phase, Phase::Dead | Phase::Dissolved)
    }

    pub fn is_dead(&self) -> bool {
        matches!(self.phase, Phase::Dead)
    }

    /// Whether the committee currently runs landmark builds.
    pub fn is_settled(&self) -> bool {
        !matches!(self.phase, Phase::Forming | Phase::Dead | Phase::Dissolved)
    }

    /// Data `id` holds for this task in round `r`, if any.
    pub fn held_by(&self, id: NodeId, r: Round) -> Option<&Held> {
        self.holdings.get(&id).filter(|h| h.until.is_none_or(|u| r <= u)).map(|h| &h.held)
    }

    /// Current members holding task data; old members are excluded.
    pub fn member_holdings(&self) -> impl Iterator<Item = (NodeId, &Held)> {
        self.holdings.iter().filter(|(_, h)| h.until.is_none()).map(|(&id, h)| (id, &h.held))
    }

    /// Invitations of (`epoch`, `rank`) that reached a present invitee.
    fn accept_invites(&mut self, inbox: &[Envelope], epoch: u32, rank: u16) -> Vec<(NodeId, Held)> {
        let mut joined: Vec<(NodeId, Held)> = Vec::new();
        for env in inbox {
            if let Payload::Invite { epoch: e, rank: k, task, .. } = &env.payload {
                if *e == epoch && *k == rank && !joined.iter().any(|(id, _)| *id == env.to) {
                    let held = match task {
                        TaskPayload::Replica(d) => Held::Replica(d.clone()),
                        TaskPayload::Piece(p) => Held::Piece(p.clone()),
                        TaskPayload::Search { .. } => Held::Nothing,
                    };
                    self.holdings.insert(env.to, Holding { held: held.clone(), until: None });
                    joined.push((env.to, held));
                }
            }
        }
        joined
    }

    fn die(&mut self, r: Round, reason: DeathReason) -> CommitteeEvent {
        self.phase = Phase::Dead;
        CommitteeEvent::Dead { round: r, epoch: self.committee.epoch, reason }
    }

    /// Advances one round. `inbox` holds this committee's messages delivered
    /// this round.
    pub fn step(&mut self, ctx: &mut RoundCtx, inbox: &[Envelope]) -> Vec<CommitteeEvent> {
        let r = ctx.round;
        let mut events = Vec::new();
        if let TaskState::Search { deadline, .. } = self.task {
            if r >= deadline && self.is_alive() {
                self.phase = Phase::Dissolved;
                events.push(CommitteeEvent::Dissolved { round: r });
                return events;
            }
        }
        let tag = self.committee.task_tag;
        let size = self.committee.target_size;
        match std::mem::replace(&mut self.phase, Phase::Active) {
            Phase::Forming => {
                if r <= self.committee.created_round {
                    self.phase = Phase::Forming;
                } else if self.accept_invites(inbox, 0, 0).is_empty() {
                    events.push(self.die(r, DeathReason::NoneJoined));
                } else {
                    self.committee.epoch_start = r;
                    events.push(CommitteeEvent::Formed { round: r, members: self.committee.members.clone() });
                }
            }
            Phase::Active => {
                if r == self.committee.next_maintenance(self.tau) {
                    let live: Vec<NodeId> = self.committee.live_members(ctx.schedule, r).collect();
                    if live.is_empty() {
                        events.push(self.die(r, DeathReason::NoLiveMembers));
                        return events;
                    }
                    let mut origins = BTreeMap::new();
                    let mut counts = BTreeMap::new();
                    for &m in &live {
                        let samples = ctx.samples(m);
                        counts.insert(m, samples.len() as u32);
                        origins.insert(m, distinct_origins(samples, size, |o| o == m));
                        let piece = match self.held_by(m, r) {
                            Some(Held::Piece(p)) => Some(p.clone()),
                            _ => None,
                        };
                        for &other in self.committee.members.iter().filter(|&&o| o != m) {
                            let payload = Payload::Count { epoch: self.committee.epoch, count: samples.len() as u32, piece: piece.clone() };
                            ctx.send(m, other, tag, payload);
                        }
                    }
                    self.phase = Phase::Recorded { r, origins, counts };
                }
            }
            Phase::Recorded { r: r0, origins, counts } => {
                // Every member present in r0 broadcast its count, so all live
                // members now hold the same table.
                let mut table = BTreeMap::new();
                for env in inbox {
                    if let Payload::Count { epoch, count, .. } = &env.payload {
                        if *epoch == self.committee.epoch {
                            table.insert(env.from, *count);
                        }
                    }
                }
                for (&m, &c) in &counts {
                    if ctx.present(m) {
                        table.insert(m, c);
                    }
                }
                debug_assert!(table.keys().all(|k| counts.contains_key(k)));
                if !self.committee.members.iter().any(|&m| ctx.present(m)) {
                    events.push(self.die(r, DeathReason::NoLiveMembers));
                    return events;
                }
                let init = initiators(&table, self.log_n);
                let mut pieces: BTreeMap<NodeId, Vec<Arc<Piece>>> = BTreeMap::new();
                if matches!(self.task, TaskState::Erasure { .. }) {
                    for &i in &init {
                        let mut known: Vec<Arc<Piece>> = Vec::new();
                        if let Some(Held::Piece(p)) = self.held_by(i, r0) {
                            known.push(p.clone());
                        }
                        for env in inbox.iter().filter(|e| e.to == i) {
                            if let Payload::Count { piece: Some(p), epoch, .. } = &env.payload {
                                if *epoch == self.committee.epoch {
                                    known.push(p.clone());
                                }
                            }
                        }
                        pieces.insert(i, known);
                    }
                }
                self.phase = Phase::Ranked { r: r0, origins, initiators: init, pieces };
            }
            Phase::Ranked { r: r0, origins, initiators, pieces } => {
                let mut candidates = Vec::new();
                let mut lost_item = false;
                for (rank, &i) in initiators.iter().enumerate() {
                    if !ctx.present(i) {
                        continue;
                    }
                    let invited = Arc::new(origins.get(&i).cloned().unwrap_or_default());
                    if invited.is_empty() {
                        continue;
                    }
                    let payloads = match &self.task {
                        TaskState::Erasure { params, .. } => {
                            let known = pieces.get(&i).map(Vec::as_slice).unwrap_or(&[]);
                            match reconstruct(known.iter().map(|p| p.as_ref())) {
                                Ok(bytes) => disperse(&bytes, *params)
                                    .expect("re-dispersal of a reconstructed payload")
                                    .into_iter()
                                    .map(|p| TaskPayload::Piece(Arc::new(p)))
                                    .collect(),
                                Err(_) => {
                                    lost_item = true;
                                    events.push(CommitteeEvent::ReconstructionImpossible {
                                        round: r,
                                        epoch: self.committee.epoch,
                                        initiator: i,
                                        have: known.len(),
                                        need: params.k as usize,
                                    });
                                    continue;
                                }
                            }
                        }
                        other => initial_payloads(other, &invited).expect("replica payloads"),
                    };
                    for (j, &v) in invited.iter().enumerate() {
                        let payload = Payload::Invite {
                            epoch: self.committee.epoch + 1,
                            rank: rank as u16,
                            members: invited.clone(),
                            task: payloads[j].clone(),
                        };
                        ctx.send(i, v, tag, payload);
                    }
                    candidates.push(Candidate { rank: rank as u16, initiator: i, invited, joined: Vec::new() });
                }
                // Old members resign at the end of this round and keep data one more.
                for h in self.holdings.values_mut() {
                    if h.until.is_none() {
                        h.until = Some(r0 + 3);
                    }
                }
                if candidates.is_empty() {
                    let reason = if lost_item { DeathReason::ItemLost } else { DeathReason::InitiatorsGone };
                    events.push(self.die(r, reason));
                    return events;
                }
                self.phase = Phase::Invited { r: r0, initiators, candidates };
            }
            Phase::Invited { r: r0, initiators, mut candidates } => {
                let next = self.committee.epoch + 1;
                for c in candidates.iter_mut() {
                    c.joined = self.accept_invites(inbox, next, c.rank);
                }
                for c in &candidates {
                    if ctx.present(c.initiator) {
                        for &other in initiators.iter().filter(|&&o| o != c.initiator) {
                            ctx.send(c.initiator, other, tag, Payload::Alive { epoch: next, rank: c.rank });
                        }
                    }
                }
                let survivors: Vec<NodeId> =
                    candidates.iter().map(|c| c.initiator).filter(|&i| ctx.present(i)).collect();
                if survivors.is_empty() {
                    events.push(self.die(r, DeathReason::InitiatorsGone));
                    return events;
                }
                let keep: Vec<Candidate> = candidates.into_iter().filter(|c| survivors.contains(&c.initiator)).collect();
                self.phase = Phase::Agreeing { r: r0, candidates: keep };
            }
            Phase::Agreeing { r: r0, candidates } => {
                // Survivors of r0+3 are ordered by rank; the first is adopted.
                let winner = candidates[0].clone();
                for loser in &candidates[1..] {
                    for &v in loser.invited.iter() {
                        if let Some(h) = self.holdings.get_mut(&v) {
                            if h.until.is_none() && !winner.invited.contains(&v) {
                                h.until = Some(r0 + 5);
                            }
                        }
                    }
                    if ctx.present(loser.initiator) {
                        for &v in loser.invited.iter() {
                            ctx.send(loser.initiator, v, tag, Payload::Dissolve { epoch: self.committee.epoch + 1 });
                        }
                    }
                }
                for (v, held) in &winner.joined {
                    self.holdings.insert(*v, Holding { held: held.clone(), until: None });
                }
                self.committee.epoch += 1;
                self.committee.members = winner.invited.clone();
                self.committee.leader_of_epoch = Some(winner.initiator);
                self.committee.epoch_start = r;
                events.push(CommitteeEvent::Handover {
                    round: r,
                    epoch: self.committee.epoch,
                    leader: winner.initiator,
                    candidates: candidates.len(),
                    members: winner.invited,
                });
            }
            p @ (Phase::Dead | Phase::Dissolved) => self.phase = p,
        }
        if r % 64 == 0 {
            self.holdings.retain(|_, h| h.until.is_none_or(|u| u >= r));
        }
        events
    }
}

fn initial_payloads(task: &TaskState, members: &[NodeId]) -> Result<Vec<TaskPayload>, CommitteeError> {
    Ok(match task {
        TaskState::Replicate(d) => vec![TaskPayload::Replica(d.clone()); members.len()],
        TaskState::Search { requester, item, deadline } => {
            vec![TaskPayload::Search { requester: *requester, item: *item, deadline: *deadline }; members.len()]
        }
        TaskState::Erasure { .. } => {
            return Err(CommitteeError::Erasure(ErasureError::InvalidParams(
                "erasure payloads come from dispersal".into(),
            )))
        }
    })
}

/// Launch variant for erasure mode: the creator disperses `item` itself.
pub fn launch_erasure(
    committee: Committee,
    item: &DataItem,
    params: CodeParams,
    creator: NodeId,
    ctx: &mut RoundCtx,
    tau: Round,
    log_n: usize,
) -> Result<CommitteeRunner, CommitteeError> {
    let pieces = disperse(&item.payload, params)?;
    for (i, &m) in committee.members.iter().enumerate() {
        let Some(p) = pieces.get(i) else { break };
        let payload = Payload::Invite {
            epoch: 0,
            rank: 0,
            members: committee.members.clone(),
            task: TaskPayload::Piece(Arc::new(p.clone())),
        };
        ctx.send(creator, m, committee.task_tag, payload);
    }
    Ok(CommitteeRunner {
        committee,
        task: TaskState::Erasure { item_id: item.item_id, params },
        holdings: BTreeMap::new(),
        phase: Phase::Forming,
        tau,
        log_n,
    })
}

/// Chi-square goodness of fit of lifetimes (epochs survived before the first
/// bad check) to a geometric law `P(L = j) = (1-q) q^j`, with `q` fitted by
/// maximum likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricFit {
    pub q: f64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// `None` when the sample is too small or too degenerate for the test (fewer
/// than two bins with expected count of at least 5 after pooling).
pub fn geometric_fit(lifetimes: &[u32]) -> Option<GeometricFit> {
    let n = lifetimes.len();
    if n == 0 {
        return None;
    }
    let mean = lifetimes.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
    let q = mean / (1.0 + mean);
    // Bins 0, 1, ... each with expectation >= 5; the last bin takes the tail.
    let mut bins: Vec<(f64, usize)> = Vec::new();
    let mut j = 0u32;
    let mut tail_prob = 1.0;
    loop {
        let p = (1.0 - q) * q.powi(j as i32);
        if (tail_prob - p) * (n as f64) < 5.0 || p * (n as f64) < 5.0 {
            break;
        }
        let obs = lifetimes.iter().filter(|&&l| l == j).count();
        bins.push((p * n as f64, obs));
        tail_prob -= p;
        j += 1;
    }
    let obs_tail = lifetimes.iter().filter(|&&l| l >= j).count();
    bins.push((tail_prob * n as f64, obs_tail));
    if bins.len() < 3 {
        return None;
    }
    let chi2: f64 = bins.iter().map(|&(e, o)| (o as f64 - e).powi(2) / e).sum();
    let df = bins.len() - 2;
    let p_value = 1.0 - ChiSquared::new(df as f64).ok()?.cdf(chi2);
    Some(GeometricFit { q, chi2, df, p_value })
}
