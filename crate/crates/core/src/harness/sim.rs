//! The round loop.
//!
//! Every round runs, in order: the adversary's churn and topology change,
//! neighbour awareness (implicit in the snapshot), delivery of last round's
//! messages to present ids, and computation. Computation steps the walks,
//! harvests completed walks, runs every protocol task and finally spawns the
//! next walk cohort.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::committee::{
    create_committee, launch_erasure, measure_health, CommitteeEvent, CommitteeRunner, Held, TaskState,
};
use crate::datastore::{answer_fetch, answer_inquiry, is_available, DataItem, SearchOutcome, SearchTask};
use crate::erasure::CodeParams;
use crate::harness::config::{SimulationConfig, StorageMode};
use crate::harness::metrics::{
    AvailabilityRecord, BuildRecord, EventRecord, HealthRecord, RetrievalRecord, RoundMetrics, SimOutput,
};
use crate::harness::HarnessError;
use crate::ids::{ItemId, NodeId, Round, TaskTag};
use crate::landmarks::{is_rebuild_tick, tree_depth, LandmarkKind, LandmarkStore, TreeBuildState};
use crate::net::{Envelope, MessageLayer, Payload, RoundCtx, TOKEN_WORDS};
use crate::netgen::DynamicNetworkSchedule;
use crate::walks::{SampleRecord, WalkConfig, WalkEngine, WalkToken};

/// A scripted protocol request. Nodes are picked by `pick mod n` among the
/// slots of the round, so the choice is fixed before the run starts.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Store { item: usize, payload: Vec<u8>, pick: u64 },
    Retrieve { item: usize, pick: u64 },
}

#[derive(Clone, Debug)]
struct StorageInfo {
    item: usize,
    created: Round,
}

#[derive(Clone, Copy, Debug)]
struct Params {
    n: usize,
    tau: Round,
    log_n: usize,
    size: usize,
    depth: u32,
    h: usize,
    mode: StorageMode,
    epsilon: f64,
    threshold: f64,
    search_lifetime: Round,
    horizon: Round,
}

/// Protocol state of one run: committees, landmarks, searches.
struct Protocol {
    p: Params,
    store: LandmarkStore,
    committees: BTreeMap<TaskTag, CommitteeRunner>,
    storage: BTreeMap<TaskTag, StorageInfo>,
    item_storage: BTreeMap<ItemId, TaskTag>,
    items: Vec<Option<ItemId>>,
    searches: BTreeMap<TaskTag, (usize, bool, SearchTask)>,
    builds: BTreeMap<u64, TreeBuildState>,
    next_build: u64,
    next_tag: u32,
    plan: Vec<(Round, Action)>,
    cursor: usize,
    out: SimOutput,
    round_events: u64,
}

pub struct Simulation<'s> {
    schedule: &'s DynamicNetworkSchedule,
    engine: WalkEngine,
    net: MessageLayer,
    proto: Protocol,
    harvest: Vec<Vec<WalkToken>>,
    preserve: bool,
    budget_cap: u64,
    enforce_budget: bool,
    /// Scratch for the per-round volume quantile.
    vol_scratch: Vec<u64>,
}

fn samples_of(u: NodeId, r: Round, toks: &[WalkToken]) -> Vec<SampleRecord> {
    toks.iter()
        .map(|t| SampleRecord { receiver: u, origin: t.origin, origin_round: t.origin_round, arrival_round: r, seq: t.seq })
        .collect()
}

impl<'s> Simulation<'s> {
    pub fn new(
        cfg: &SimulationConfig,
        schedule: &'s DynamicNetworkSchedule,
        plan: Vec<(Round, Action)>,
    ) -> Result<Self, HarnessError> {
        let wcfg = cfg.walk_config()?;
        Self::with_walk_config(cfg, wcfg, schedule, plan)
    }

    pub fn with_walk_config(
        cfg: &SimulationConfig,
        wcfg: WalkConfig,
        schedule: &'s DynamicNetworkSchedule,
        mut plan: Vec<(Round, Action)>,
    ) -> Result<Self, HarnessError> {
        let n = schedule.n();
        if n != cfg.n || wcfg.n != n {
            return Err(HarnessError::Config(format!("schedule has n = {n}, config n = {}", cfg.n)));
        }
        let depth = if cfg.tree_depth >= 0 {
            cfg.tree_depth as u32
        } else {
            tree_depth(n, cfg.k).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        if cfg.mode == StorageMode::Erasure {
            CodeParams::for_committee(wcfg.h, wcfg.log_n).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        plan.sort_by_key(|(r, _)| *r);
        let items = plan.iter().filter(|(_, a)| matches!(a, Action::Store { .. })).count();
        let p = Params {
            n,
            tau: wcfg.tau(),
            log_n: wcfg.log_n,
            size: wcfg.committee_size(),
            depth,
            h: wcfg.h,
            mode: cfg.mode,
            epsilon: cfg.epsilon,
            threshold: cfg.availability_threshold,
            search_lifetime: cfg.search_lifetime * wcfg.tau(),
            horizon: schedule.horizon(),
        };
        let proto = Protocol {
            p,
            store: LandmarkStore::default(),
            committees: BTreeMap::new(),
            storage: BTreeMap::new(),
            item_storage: BTreeMap::new(),
            items: vec![None; items],
            searches: BTreeMap::new(),
            builds: BTreeMap::new(),
            next_build: 0,
            next_tag: 0,
            plan,
            cursor: 0,
            out: SimOutput { schedule_digest: schedule.digest(), ..Default::default() },
            round_events: 0,
        };
        Ok(Simulation {
            schedule,
            engine: WalkEngine::new(n, wcfg, cfg.protocol_seed),
            net: MessageLayer::new(n),
            proto,
            harvest: vec![Vec::new(); n],
            preserve: cfg.preserve_walks,
            budget_cap: cfg.budget_cap(),
            enforce_budget: cfg.enforce_budget,
            vol_scratch: Vec::with_capacity(n),
        })
    }

    pub fn run(mut self) -> Result<SimOutput, HarnessError> {
        for r in 0..self.schedule.horizon() {
            self.run_round(r)?;
        }
        Ok(self.proto.out)
    }

    pub fn run_round(&mut self, r: Round) -> Result<(), HarnessError> {
        let schedule = self.schedule;
        let g = schedule.snapshot(r);
        let ev = schedule.event(r);
        let n = g.n();

        // (1) churn: departed nodes lose their records.
        self.proto.store.purge(r, &ev.removed);

        // (3) delivery.
        self.net.begin_round(r);
        let (delivered, lost) = self.net.deliver(schedule);

        // (4) computation.
        let stats = self.engine.step_round(g, ev, self.preserve);
        let mut harvested = 0u64;
        for (slot, buf) in self.harvest.iter_mut().enumerate() {
            self.engine.swap_completed(slot, buf);
            harvested += buf.len() as u64;
        }
        for (slot, &t) in self.engine.traffic().iter().enumerate() {
            self.net.add_volume(slot, t as u64 * TOKEN_WORDS);
        }
        {
            let mut ctx = RoundCtx::new(r, schedule, &self.harvest, &mut self.net);
            self.proto.step(&mut ctx, delivered, lost);
        }
        let before = self.engine.counters().spawned;
        self.engine.spawn_all(g);
        let spawned = self.engine.counters().spawned - before;

        self.vol_scratch.clear();
        self.vol_scratch.extend_from_slice(self.net.volume());
        for &v in &self.vol_scratch {
            self.proto.out.volume.add(v);
        }
        let (max_slot, &max_volume) =
            self.vol_scratch.iter().enumerate().max_by_key(|(i, v)| (**v, std::cmp::Reverse(*i))).expect("n > 0");
        let idx = ((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1;
        let p99 = *self.vol_scratch.select_nth_unstable(idx).1;

        let nc = self.net.round_counters();
        let m = RoundMetrics {
            round: r,
            tokens_spawned: spawned,
            tokens_forwarded: stats.forwarded,
            tokens_destroyed: stats.destroyed,
            tokens_harvested: harvested,
            tokens_in_flight: self.engine.in_flight(),
            nodes_with_queue: stats.nodes_with_queue,
            max_forwarded: stats.max_forwarded_by_node,
            messages_sent: nc.sent,
            messages_delivered: nc.delivered,
            messages_dropped: nc.dropped,
            messages_pending: self.net.pending() as u64,
            max_volume,
            p99_volume: p99,
            live_committees: self.proto.committees.values().filter(|c| c.is_alive()).count() as u64,
            landmark_records: self.proto.store.total_records() as u64,
            events: std::mem::take(&mut self.proto.round_events),
        };
        self.proto.out.rounds.push(m);
        if self.enforce_budget && max_volume > self.budget_cap {
            return Err(HarnessError::BudgetExceeded {
                round: r,
                node: g.id_at(max_slot),
                words: max_volume,
                cap: self.budget_cap,
            });
        }
        Ok(())
    }

    pub fn output(&self) -> &SimOutput {
        &self.proto.out
    }

    pub fn landmark_store(&self) -> &LandmarkStore {
        &self.proto.store
    }

    pub fn committee(&self, tag: TaskTag) -> Option<&CommitteeRunner> {
        self.proto.committees.get(&tag)
    }

    /// Storage committee tag of the `i`-th stored item.
    pub fn storage_tag(&self, item: usize) -> Option<TaskTag> {
        let id = self.proto.items.get(item).copied().flatten()?;
        self.proto.item_storage.get(&id).copied()
    }
}

impl Protocol {
    fn event(&mut self, round: Round, tag: TaskTag, kind: &'static str, detail: String) {
        self.round_events += 1;
        self.out.events.push(EventRecord { round, tag, kind, detail });
    }

    fn alloc_tag(&mut self) -> TaskTag {
        self.next_tag += 1;
        TaskTag(self.next_tag)
    }

    fn step(&mut self, ctx: &mut RoundCtx, delivered: Vec<Envelope>, lost: Vec<Envelope>) {
        let r = ctx.round;
        let mut inboxes: BTreeMap<TaskTag, Vec<Envelope>> = BTreeMap::new();
        let mut invites: BTreeMap<u64, Vec<Envelope>> = BTreeMap::new();
        let mut lost_invites: BTreeMap<u64, u64> = BTreeMap::new();
        for env in lost {
            if let Payload::LandmarkInvite { build, .. } = env.payload {
                *lost_invites.entry(build).or_insert(0) += 1;
            }
        }
        for env in delivered {
            self.route(ctx, env, &mut inboxes, &mut invites);
        }

        self.record_health(ctx);

        let tags: Vec<TaskTag> = self.committees.keys().copied().collect();
        for tag in tags {
            let runner = self.committees.get_mut(&tag).expect("tag listed");
            if !runner.is_alive() {
                continue;
            }
            let inbox = inboxes.remove(&tag).unwrap_or_default();
            let events = runner.step(ctx, &inbox);
            for e in events {
                self.log_committee_event(tag, e);
            }
        }

        let ids: Vec<u64> = self.builds.keys().copied().collect();
        for id in ids {
            let b = self.builds.get_mut(&id).expect("build listed");
            let envs = invites.remove(&id).unwrap_or_default();
            let refs: Vec<&Envelope> = envs.iter().collect();
            b.on_delivered(ctx, &refs, lost_invites.remove(&id).unwrap_or(0), &mut self.store);
            if b.finished() {
                let b = self.builds.remove(&id).expect("build listed");
                self.out.builds.push(BuildRecord { finished: r, metrics: b.metrics });
            }
        }

        self.start_builds(ctx);
        self.inquire(ctx);
        self.run_actions(ctx);
        self.settle(ctx);
        self.record_availability(ctx);
    }

    fn route(
        &mut self,
        ctx: &mut RoundCtx,
        env: Envelope,
        inboxes: &mut BTreeMap<TaskTag, Vec<Envelope>>,
        invites: &mut BTreeMap<u64, Vec<Envelope>>,
    ) {
        let r = ctx.round;
        match &env.payload {
            Payload::Invite { .. } | Payload::Count { .. } | Payload::Alive { .. } | Payload::Dissolve { .. } => {
                inboxes.entry(env.tag).or_default().push(env);
            }
            Payload::LandmarkInvite { build, .. } => {
                invites.entry(*build).or_default().push(env);
            }
            Payload::Inquiry { item } => {
                if let Some(committee) = answer_inquiry(&self.store, env.to, item, r) {
                    ctx.send(env.to, env.from, env.tag, Payload::Hit { committee });
                    if let Some((_, _, t)) = self.searches.get_mut(&env.tag) {
                        t.messages += 1;
                    }
                }
            }
            Payload::Hit { committee } => {
                if let Some((_, _, t)) = self.searches.get_mut(&env.tag) {
                    t.on_hit(ctx, env.to, committee.clone());
                }
            }
            Payload::Report { committee } => {
                if let Some((_, _, t)) = self.searches.get_mut(&env.tag) {
                    t.on_report(ctx, committee.clone());
                }
            }
            Payload::Fetch { item } => {
                let reply = self
                    .item_storage
                    .get(item)
                    .and_then(|st| self.committees.get(st))
                    .and_then(|runner| answer_fetch(runner, env.to, r));
                if let Some(p) = reply {
                    ctx.send(env.to, env.from, env.tag, p);
                    if let Some((_, _, t)) = self.searches.get_mut(&env.tag) {
                        t.messages += 1;
                    }
                }
            }
            Payload::Data(_) | Payload::PieceData(_) => {
                if let Some((_, _, t)) = self.searches.get_mut(&env.tag) {
                    t.on_data(r, env.from, &env.payload);
                }
            }
        }
    }

    fn log_committee_event(&mut self, tag: TaskTag, e: CommitteeEvent) {
        match e {
            CommitteeEvent::Formed { round, members } => {
                self.event(round, tag, "formed", format!("members={}", members.len()))
            }
            CommitteeEvent::Handover { round, epoch, leader, candidates, members } => self.event(
                round,
                tag,
                "handover",
                format!("epoch={epoch} leader={leader} candidates={candidates} members={}", members.len()),
            ),
            CommitteeEvent::Dead { round, epoch, reason } => {
                self.event(round, tag, "committee-dead", format!("epoch={epoch} reason={reason:?}"))
            }
            CommitteeEvent::ReconstructionImpossible { round, epoch, initiator, have, need } => self.event(
                round,
                tag,
                "reconstruction-impossible",
                format!("epoch={epoch} initiator={initiator} have={have} need={need}"),
            ),
            CommitteeEvent::Dissolved { round } => self.event(round, tag, "dissolved", String::new()),
        }
    }

    fn record_health(&mut self, ctx: &RoundCtx) {
        let r = ctx.round;
        let p = self.p;
        for (&tag, info) in &self.storage {
            if r <= info.created || (r - info.created) % (2 * p.tau) != 0 {
                continue;
            }
            let check = (r - info.created) / (2 * p.tau) - 1;
            let runner = &self.committees[&tag];
            let rec = if runner.is_alive() {
                let h = measure_health(&runner.committee.members, r, ctx.schedule, p.tau, p.epsilon, p.size);
                HealthRecord {
                    tag,
                    item: info.item,
                    check,
                    round: r,
                    alive: true,
                    live_members: h.live_members,
                    core_members: h.core_proxy_members,
                    good: h.good,
                }
            } else {
                HealthRecord {
                    tag,
                    item: info.item,
                    check,
                    round: r,
                    alive: false,
                    live_members: 0,
                    core_members: 0,
                    good: false,
                }
            };
            self.out.health.push(rec);
        }
    }

    fn start_builds(&mut self, ctx: &mut RoundCtx) {
        let r = ctx.round;
        let p = self.p;
        for (&tag, runner) in &self.committees {
            if !runner.is_settled() || !is_rebuild_tick(runner.committee.epoch_start, r, p.tau) {
                continue;
            }
            let kind = if runner.task.is_search() { LandmarkKind::Search } else { LandmarkKind::Storage };
            self.next_build += 1;
            let b = TreeBuildState::start(
                self.next_build,
                tag,
                runner.task.item_id(),
                kind,
                runner.committee.members.clone(),
                p.depth,
                p.tau,
                ctx,
                &mut self.store,
            );
            if b.finished() {
                self.out.builds.push(BuildRecord { finished: r, metrics: b.metrics });
            } else {
                self.builds.insert(b.build, b);
            }
        }
    }

    /// Every live search landmark asks the origin of each sample it harvested
    /// this round about the item.
    fn inquire(&mut self, ctx: &mut RoundCtx) {
        let r = ctx.round;
        for (&tag, (_, _, task)) in self.searches.iter_mut() {
            if !task.inquiring(r) {
                continue;
            }
            for w in self.store.holders(tag, r) {
                for tok in ctx.samples(w) {
                    if tok.origin != w {
                        task.send(ctx, w, tok.origin, Payload::Inquiry { item: task.item });
                    }
                }
            }
        }
    }

    fn run_actions(&mut self, ctx: &mut RoundCtx) {
        let r = ctx.round;
        while self.cursor < self.plan.len() && self.plan[self.cursor].0 <= r {
            let (at, action) = self.plan[self.cursor].clone();
            self.cursor += 1;
            if at < r {
                continue;
            }
            match action {
                Action::Store { item, payload, pick } => self.store_item(ctx, item, payload, pick),
                Action::Retrieve { item, pick } => self.retrieve(ctx, item, pick),
            }
        }
    }

    fn store_item(&mut self, ctx: &mut RoundCtx, index: usize, payload: Vec<u8>, pick: u64) {
        let r = ctx.round;
        let p = self.p;
        let u = ctx.schedule.snapshot(r).id_at((pick % p.n as u64) as usize);
        let data = DataItem::new(payload, u, r);
        let tag = self.alloc_tag();
        let samples = samples_of(u, r, ctx.samples(u));
        let committee = match create_committee(u, r, &samples, tag, p.size, p.tau) {
            Ok(c) => c,
            Err(e) => {
                self.event(r, tag, "store-failed", format!("item={index} {e}"));
                return;
            }
        };
        let launched = match p.mode {
            StorageMode::Replicate => {
                CommitteeRunner::launch(committee, TaskState::Replicate(Arc::new(data.clone())), u, ctx, p.tau, p.log_n)
            }
            StorageMode::Erasure => {
                let params = CodeParams::for_committee(p.h, p.log_n).expect("checked at construction");
                launch_erasure(committee, &data, params, u, ctx, p.tau, p.log_n)
            }
        };
        match launched {
            Ok(runner) => {
                self.committees.insert(tag, runner);
                self.storage.insert(tag, StorageInfo { item: index, created: r });
                self.item_storage.insert(data.item_id, tag);
                if let Some(slot) = self.items.get_mut(index) {
                    *slot = Some(data.item_id);
                }
                self.event(r, tag, "stored", format!("item={index} id={} origin={u}", data.item_id.short()));
            }
            Err(e) => self.event(r, tag, "store-failed", format!("item={index} {e}")),
        }
    }

    fn retrieve(&mut self, ctx: &mut RoundCtx, index: usize, pick: u64) {
        let r = ctx.round;
        let p = self.p;
        let u = ctx.schedule.snapshot(r).id_at((pick % p.n as u64) as usize);
        let tag = self.alloc_tag();
        let Some(item) = self.items.get(index).copied().flatten() else {
            self.out.retrievals.push(RetrievalRecord {
                item: index,
                item_id: String::new(),
                requester: u.0,
                started: r,
                outcome: SearchOutcome::NotFound,
                rounds_elapsed: 0,
                messages_used: 0,
                local: false,
            });
            return;
        };
        let deadline = r + p.search_lifetime;
        let mut task = SearchTask::new(tag, item, u, r, deadline);
        let storage = self.item_storage.get(&item).and_then(|t| self.committees.get(t));
        match storage.and_then(|c| c.held_by(u, r).map(|h| (h.clone(), c.committee.members.clone()))) {
            Some((Held::Replica(_), _)) => {
                task.found_locally(r);
                self.searches.insert(tag, (index, true, task));
                return;
            }
            Some((Held::Piece(_), members)) => {
                // A storage member knows the other members and fetches directly.
                task.on_report(ctx, members);
                self.searches.insert(tag, (index, true, task));
                return;
            }
            _ => {}
        }
        let samples = samples_of(u, r, ctx.samples(u));
        match create_committee(u, r, &samples, tag, p.size, p.tau) {
            Ok(c) => {
                let runner = CommitteeRunner::launch(
                    c,
                    TaskState::Search { requester: u, item, deadline },
                    u,
                    ctx,
                    p.tau,
                    p.log_n,
                )
                .expect("search payloads never fail");
                self.committees.insert(tag, runner);
                self.event(r, tag, "search-started", format!("item={index} requester={u}"));
            }
            Err(e) => self.event(r, tag, "search-failed", format!("item={index} {e}")),
        }
        self.searches.insert(tag, (index, false, task));
    }

    fn settle(&mut self, ctx: &RoundCtx) {
        let r = ctx.round;
        let mut done = Vec::new();
        for (&tag, (index, local, task)) in self.searches.iter_mut() {
            task.settle(r, ctx.schedule);
            if let Some(res) = &task.result {
                self.out.retrievals.push(RetrievalRecord {
                    item: *index,
                    item_id: res.item_id.short(),
                    requester: res.requester.0,
                    started: res.started,
                    outcome: res.outcome,
                    rounds_elapsed: res.rounds_elapsed,
                    messages_used: res.messages_used,
                    local: *local,
                });
                done.push((tag, res.outcome));
            }
        }
        for (tag, outcome) in done {
            self.searches.remove(&tag);
            self.event(r, tag, "retrieval", outcome.as_str().to_string());
        }
    }

    fn record_availability(&mut self, ctx: &RoundCtx) {
        let r = ctx.round;
        let p = self.p;
        if r + p.tau >= p.horizon {
            return;
        }
        for (&tag, info) in &self.storage {
            if r < info.created + 2 * p.tau || (r - info.created) % p.tau != 0 {
                continue;
            }
            let a = is_available(&self.store, tag, r, p.tau, ctx.schedule, p.threshold);
            self.out.availability.push(AvailabilityRecord {
                round: r,
                item: info.item,
                tag,
                live_landmarks: a.live_landmarks,
                available: a.available,
                hit_rate: a.hit_rate,
            });
        }
    }
}
