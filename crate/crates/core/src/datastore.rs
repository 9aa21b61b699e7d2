//! Persistent storage and retrieval on top of committees and landmarks.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::committee::{CommitteeRunner, Held};
use crate::erasure::{reconstruct, Piece};
use crate::ids::{ItemId, NodeId, Round, TaskTag};
use crate::landmarks::{live_landmarks_through, LandmarkStore};
use crate::net::{Payload, RoundCtx};
use crate::netgen::DynamicNetworkSchedule;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataItem {
    pub item_id: ItemId,
    pub payload: Vec<u8>,
    pub origin: NodeId,
    pub stored_round: Round,
}

impl DataItem {
    pub fn new(payload: Vec<u8>, origin: NodeId, stored_round: Round) -> Self {
        DataItem { item_id: ItemId::of_payload(&payload), payload, origin, stored_round }
    }

    pub fn verify(&self) -> bool {
        self.item_id.matches(&self.payload)
    }

    /// Message size: id, origin, round and the payload in 8-byte words.
    pub fn words(&self) -> u64 {
        6 + (self.payload.len() as u64).div_ceil(8)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchOutcome {
    Found,
    NotFound,
    RequesterGone,
}

impl SearchOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            SearchOutcome::Found => "found",
            SearchOutcome::NotFound => "not-found",
            SearchOutcome::RequesterGone => "requester-gone",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub item_id: ItemId,
    pub requester: NodeId,
    pub success: bool,
    pub outcome: SearchOutcome,
    pub holder: Option<NodeId>,
    pub started: Round,
    pub rounds_elapsed: u32,
    pub messages_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Availability {
    pub available: bool,
    pub live_landmarks: usize,
    /// Chance that one uniformly random node is a live storage landmark.
    pub hit_rate: f64,
}

/// Available iff at least `threshold·√n` live storage landmarks of `tag` stay
/// present through `[r, r+τ]`.
pub fn is_available(
    store: &LandmarkStore,
    storage_tag: TaskTag,
    r: Round,
    tau: Round,
    schedule: &DynamicNetworkSchedule,
    threshold: f64,
) -> Availability {
    let n = schedule.n();
    let live = live_landmarks_through(store, storage_tag, r, tau, schedule);
    Availability {
        available: live as f64 >= threshold * (n as f64).sqrt(),
        live_landmarks: live,
        hit_rate: live as f64 / n as f64,
    }
}

/// Storage-landmark side of an inquiry: the committee ids `x` knows for `item`.
pub fn answer_inquiry(store: &LandmarkStore, x: NodeId, item: &ItemId, r: Round) -> Option<Arc<Vec<NodeId>>> {
    store.storage_record(x, item, r).map(|rec| rec.committee_ids.clone())
}

/// Storage-member side of a fetch.
pub fn answer_fetch(runner: &CommitteeRunner, m: NodeId, r: Round) -> Option<Payload> {
    match runner.held_by(m, r)? {
        Held::Replica(d) => Some(Payload::Data(d.clone())),
        Held::Piece(p) => Some(Payload::PieceData(p.clone())),
        Held::Nothing => None,
    }
}

/// Requester-side state of one retrieval.
#[derive(Clone, Debug)]
pub struct SearchTask {
    pub tag: TaskTag,
    pub item: ItemId,
    pub requester: NodeId,
    pub started: Round,
    /// Round the search committee dissolves.
    pub deadline: Round,
    reported: HashSet<NodeId>,
    tried: Vec<Arc<Vec<NodeId>>>,
    pieces: BTreeMap<u16, Arc<Piece>>,
    pub messages: u64,
    pub result: Option<SearchResult>,
}

/// Rounds after the deadline a fetch already under way may still complete.
pub const FETCH_GRACE: Round = 4;

impl SearchTask {
    pub fn new(tag: TaskTag, item: ItemId, requester: NodeId, started: Round, deadline: Round) -> Self {
        SearchTask {
            tag,
            item,
            requester,
            started,
            deadline,
            reported: HashSet::new(),
            tried: Vec::new(),
            pieces: BTreeMap::new(),
            messages: 0,
            result: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.result.is_none()
    }

    /// Inquiring continues while the committee lives.
    pub fn inquiring(&self, r: Round) -> bool {
        self.is_open() && r < self.deadline
    }

    fn finish(&mut self, r: Round, outcome: SearchOutcome, holder: Option<NodeId>) {
        self.result = Some(SearchResult {
            item_id: self.item,
            requester: self.requester,
            success: outcome == SearchOutcome::Found,
            outcome,
            holder,
            started: self.started,
            rounds_elapsed: r - self.started,
            messages_used: self.messages,
        });
    }

    pub fn send(&mut self, ctx: &mut RoundCtx, from: NodeId, to: NodeId, payload: Payload) {
        self.messages += 1;
        ctx.send(from, to, self.tag, payload);
    }

    /// A local hit: the requester already holds a replica.
    pub fn found_locally(&mut self, r: Round) {
        let u = self.requester;
        self.finish(r, SearchOutcome::Found, Some(u));
    }

    /// Search landmark `w` learned the storage committee; it reports once.
    pub fn on_hit(&mut self, ctx: &mut RoundCtx, w: NodeId, committee: Arc<Vec<NodeId>>) {
        if self.is_open() && self.reported.insert(w) {
            let u = self.requester;
            self.send(ctx, w, u, Payload::Report { committee });
        }
    }

    /// The requester fetches from every member of a committee list it has not
    /// tried yet.
    pub fn on_report(&mut self, ctx: &mut RoundCtx, committee: Arc<Vec<NodeId>>) {
        if !self.is_open() || self.tried.iter().any(|t| **t == *committee) {
            return;
        }
        let u = self.requester;
        for &m in committee.iter() {
            self.send(ctx, u, m, Payload::Fetch { item: self.item });
        }
        self.tried.push(committee);
    }

    /// Replica or piece arriving at the requester.
    pub fn on_data(&mut self, r: Round, from: NodeId, payload: &Payload) {
        if !self.is_open() {
            return;
        }
        match payload {
            Payload::Data(d) if d.item_id == self.item && d.verify() => {
                self.finish(r, SearchOutcome::Found, Some(from));
            }
            Payload::PieceData(p) if p.item_id == self.item => {
                self.pieces.entry(p.index).or_insert_with(|| p.clone());
                if self.pieces.len() >= p.params.k as usize
                    && reconstruct(self.pieces.values().map(|p| p.as_ref())).is_ok()
                {
                    self.finish(r, SearchOutcome::Found, Some(from));
                }
            }
            _ => {}
        }
    }

    /// End-of-round bookkeeping: requester departure and the final deadline.
    pub fn settle(&mut self, r: Round, schedule: &DynamicNetworkSchedule) {
        if !self.is_open() {
            return;
        }
        if !schedule.present(self.requester, r) {
            self.finish(r, SearchOutcome::RequesterGone, None);
        } else if r >= self.deadline + FETCH_GRACE {
            self.finish(r, SearchOutcome::NotFound, None);
        }
    }
}
