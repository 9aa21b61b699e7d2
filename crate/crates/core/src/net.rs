//! Id-addressed message layer.
//!
//! A message sent in round `r` is delivered in the delivery phase of round
//! `r + 1` if its recipient is still present, and silently dropped otherwise.
//! Volume is counted in words (one word holds an id or a counter); a node's
//! volume in a round is everything it sends plus everything it receives.

use std::sync::Arc;

use crate::datastore::DataItem;
use crate::erasure::Piece;
use crate::ids::{ItemId, NodeId, Round, TaskTag};
use crate::netgen::DynamicNetworkSchedule;
use crate::walks::WalkToken;

/// Words charged per walk token moved over an edge.
pub const TOKEN_WORDS: u64 = 3;
const ITEM_ID_WORDS: u64 = 4;

/// State handed to a new committee member with its invitation.
#[derive(Clone, Debug)]
pub enum TaskPayload {
    Replica(Arc<DataItem>),
    Piece(Arc<Piece>),
    Search { requester: NodeId, item: ItemId, deadline: Round },
}

impl TaskPayload {
    fn words(&self) -> u64 {
        match self {
            TaskPayload::Replica(d) => d.words(),
            TaskPayload::Piece(p) => piece_words(p),
            TaskPayload::Search { .. } => 2 + ITEM_ID_WORDS,
        }
    }
}

pub fn piece_words(p: &Piece) -> u64 {
    (p.wire_len() as u64).div_ceil(8)
}

#[derive(Clone, Debug)]
pub enum Payload {
    /// Committee invitation carrying the full member list.
    Invite { epoch: u32, rank: u16, members: Arc<Vec<NodeId>>, task: TaskPayload },
    /// Maintenance count exchange; in erasure mode the sender's piece rides along.
    Count { epoch: u32, count: u32, piece: Option<Arc<Piece>> },
    /// A fallback initiator announcing it survived its construction round.
    Alive { epoch: u32, rank: u16 },
    /// Dissolves a candidate committee that lost the agreement.
    Dissolve { epoch: u32 },
    LandmarkInvite { build: u64, depth: u32, committee: Arc<Vec<NodeId>> },
    Inquiry { item: ItemId },
    /// A storage landmark's answer: the storage committee ids it knows.
    Hit { committee: Arc<Vec<NodeId>> },
    /// A search landmark forwarding a hit to the requester.
    Report { committee: Arc<Vec<NodeId>> },
    Fetch { item: ItemId },
    Data(Arc<DataItem>),
    PieceData(Arc<Piece>),
}

impl Payload {
    pub fn words(&self) -> u64 {
        1 + match self {
            Payload::Invite { members, task, .. } => 2 + members.len() as u64 + task.words(),
            Payload::Count { piece, .. } => 2 + piece.as_deref().map_or(0, piece_words),
            Payload::Alive { .. } | Payload::Dissolve { .. } => 2,
            Payload::LandmarkInvite { committee, .. } => 2 + committee.len() as u64 + ITEM_ID_WORDS,
            Payload::Inquiry { .. } | Payload::Fetch { .. } => ITEM_ID_WORDS,
            Payload::Hit { committee } | Payload::Report { committee } => committee.len() as u64,
            Payload::Data(d) => d.words(),
            Payload::PieceData(p) => piece_words(p),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub from: NodeId,
    pub to: NodeId,
    pub tag: TaskTag,
    pub sent: Round,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Pending messages plus the per-slot volume of the current round.
pub struct MessageLayer {
    outgoing: Vec<Envelope>,
    volume: Vec<u64>,
    round: Round,
    counters: NetCounters,
    round_counters: NetCounters,
}

impl MessageLayer {
    pub fn new(n: usize) -> Self {
        MessageLayer {
            outgoing: Vec::new(),
            volume: vec![0; n],
            round: 0,
            counters: NetCounters::default(),
            round_counters: NetCounters::default(),
        }
    }

    /// Resets the per-round volume and counters.
    pub fn begin_round(&mut self, r: Round) {
        self.round = r;
        self.volume.iter_mut().for_each(|v| *v = 0);
        self.round_counters = NetCounters::default();
    }

    /// Delivers last round's messages to present recipients. Returns the
    /// delivered and the dropped envelopes, both in send order.
    pub fn deliver(&mut self, schedule: &DynamicNetworkSchedule) -> (Vec<Envelope>, Vec<Envelope>) {
        let r = self.round;
        let (mut ok, mut lost) = (Vec::new(), Vec::new());
        for env in self.outgoing.drain(..) {
            match schedule.slot_at(env.to, r) {
                Some(slot) => {
                    self.volume[slot] += env.payload.words();
                    ok.push(env);
                }
                None => lost.push(env),
            }
        }
        self.round_counters.delivered += ok.len() as u64;
        self.round_counters.dropped += lost.len() as u64;
        self.counters.delivered += ok.len() as u64;
        self.counters.dropped += lost.len() as u64;
        (ok, lost)
    }

    /// Queues a message from a node present in the current round.
    pub fn send(&mut self, schedule: &DynamicNetworkSchedule, env: Envelope) {
        let slot = schedule
            .slot_at(env.from, self.round)
            .unwrap_or_else(|| panic!("{} sends in round {} but is not present", env.from, self.round));
        self.volume[slot] += env.payload.words();
        self.round_counters.sent += 1;
        self.counters.sent += 1;
        self.outgoing.push(env);
    }

    pub fn add_volume(&mut self, slot: usize, words: u64) {
        self.volume[slot] += words;
    }

    pub fn volume(&self) -> &[u64] {
        &self.volume
    }

    pub fn counters(&self) -> NetCounters {
        self.counters
    }

    pub fn round_counters(&self) -> NetCounters {
        self.round_counters
    }

    pub fn pending(&self) -> usize {
        self.outgoing.len()
    }
}

/// Everything protocol code may touch during the computation phase.
pub struct RoundCtx<'a> {
    pub round: Round,
    pub schedule: &'a DynamicNetworkSchedule,
    harvest: &'a [Vec<WalkToken>],
    pub net: &'a mut MessageLayer,
}

impl<'a> RoundCtx<'a> {
    pub fn new(
        round: Round,
        schedule: &'a DynamicNetworkSchedule,
        harvest: &'a [Vec<WalkToken>],
        net: &'a mut MessageLayer,
    ) -> Self {
        RoundCtx { round, schedule, harvest, net }
    }

    #[inline]
    pub fn present(&self, id: NodeId) -> bool {
        self.schedule.present(id, self.round)
    }

    /// Walks that completed at `id` this round (empty if absent).
    pub fn samples(&self, id: NodeId) -> &'a [WalkToken] {
        match self.schedule.slot_at(id, self.round) {
            Some(s) => &self.harvest[s],
            None => &[],
        }
    }

    pub fn send(&mut self, from: NodeId, to: NodeId, tag: TaskTag, payload: Payload) {
        let env = Envelope { from, to, tag, sent: self.round, payload };
        self.net.send(self.schedule, env);
    }
}

/// Up to `want` distinct origins from `samples` in arrival order, skipping
/// `exclude`.
pub fn distinct_origins(samples: &[WalkToken], want: usize, exclude: impl Fn(NodeId) -> bool) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(want);
    for t in samples {
        if out.len() == want {
            break;
        }
        if !exclude(t.origin) && !out.contains(&t.origin) {
            out.push(t.origin);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{commit_churn_schedule, ChurnStrategy, ScheduleParams};

    #[test]
    fn message_to_removed_id_is_dropped() {
        let p = ScheduleParams {
            rate_scale: 1.0,
            strategy: ChurnStrategy::OldestFirst,
            lambda_max: 0.9,
            ..ScheduleParams::new(16, 3, 4, 2)
        };
        let s = commit_churn_schedule(&p).unwrap();
        let gone = s.event(1).removed[0];
        let stay = *s.snapshot(1).nodes().iter().find(|id| !s.event(1).added.contains(id)).unwrap();
        let mut net = MessageLayer::new(16);
        net.begin_round(0);
        let from = s.snapshot(0).id_at(0);
        for to in [gone, stay] {
            net.send(&s, Envelope { from, to, tag: TaskTag(0), sent: 0, payload: Payload::Inquiry { item: ItemId([0; 32]) } });
        }
        net.begin_round(1);
        let (ok, lost) = net.deliver(&s);
        assert_eq!(ok.len(), 1);
        assert_eq!(lost.len(), 1);
        assert_eq!(lost[0].to, gone);
        assert_eq!(net.counters(), NetCounters { sent: 2, delivered: 1, dropped: 1 });
    }

    #[test]
    fn distinct_origins_in_order() {
        let tok = |o: u32| WalkToken { origin: NodeId(o), origin_round: 0, seq: 0, steps_taken: 3 };
        let s = [tok(5), tok(2), tok(5), tok(9), tok(1)];
        assert_eq!(distinct_origins(&s, 3, |id| id == NodeId(2)), vec![NodeId(5), NodeId(9), NodeId(1)]);
        assert_eq!(distinct_origins(&s, 10, |_| false).len(), 4);
    }
}
