use std::collections::BTreeMap;
use std::path::Path;

use crate::datastore::SearchOutcome;
use crate::harness::HarnessError;
use crate::ids::{Round, TaskTag};
use crate::landmarks::BuildMetrics;

/// A record type with a fixed CSV layout.
pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn row(&self) -> Vec<String>;
}

pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(T::HEADER)?;
    for r in rows {
        w.write_record(r.row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: CsvRow>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(T::HEADER).expect("in-memory csv");
    for r in rows {
        w.write_record(r.row()).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Per-round counters. Token and message counts are deltas of this round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundMetrics {
    pub round: Round,
    pub tokens_spawned: u64,
    pub tokens_forwarded: u64,
    pub tokens_destroyed: u64,
    pub tokens_harvested: u64,
    /// Tokens alive at the end of the round.
    pub tokens_in_flight: u64,
    pub nodes_with_queue: u64,
    pub max_forwarded: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    /// Messages queued for delivery next round.
    pub messages_pending: u64,
    pub max_volume: u64,
    pub p99_volume: u64,
    pub live_committees: u64,
    pub landmark_records: u64,
    pub events: u64,
}

impl CsvRow for RoundMetrics {
    const HEADER: &'static [&'static str] = &[
        "round",
        "tokens_spawned",
        "tokens_forwarded",
        "tokens_destroyed",
        "tokens_harvested",
        "tokens_in_flight",
        "nodes_with_queue",
        "max_forwarded",
        "messages_sent",
        "messages_delivered",
        "messages_dropped",
        "messages_pending",
        "max_volume",
        "p99_volume",
        "live_committees",
        "landmark_records",
        "events",
    ];

    fn row(&self) -> Vec<String> {
        [
            self.round as u64,
            self.tokens_spawned,
            self.tokens_forwarded,
            self.tokens_destroyed,
            self.tokens_harvested,
            self.tokens_in_flight,
            self.nodes_with_queue,
            self.max_forwarded,
            self.messages_sent,
            self.messages_delivered,
            self.messages_dropped,
            self.messages_pending,
            self.max_volume,
            self.p99_volume,
            self.live_committees,
            self.landmark_records,
            self.events,
        ]
        .iter()
        .map(u64::to_string)
        .collect()
    }
}

/// Checks the integer accounting of a metrics stream: every token spawned is
/// destroyed, harvested or still in flight, and every message sent is
/// delivered, dropped or pending.
pub fn check_conservation(rows: &[RoundMetrics]) -> Result<(), String> {
    let (mut tokens, mut msgs) = (0i64, 0i64);
    for m in rows {
        tokens += m.tokens_spawned as i64 - m.tokens_destroyed as i64 - m.tokens_harvested as i64;
        if tokens != m.tokens_in_flight as i64 {
            return Err(format!("round {}: token balance {} vs in flight {}", m.round, tokens, m.tokens_in_flight));
        }
        msgs += m.messages_sent as i64 - m.messages_delivered as i64 - m.messages_dropped as i64;
        if msgs != m.messages_pending as i64 {
            return Err(format!("round {}: message balance {} vs pending {}", m.round, msgs, m.messages_pending));
        }
    }
    Ok(())
}

/// Goodness check of a storage committee at one scheduled maintenance round.
#[derive(Clone, Debug, PartialEq)]
pub struct HealthRecord {
    pub tag: TaskTag,
    pub item: usize,
    pub check: u32,
    pub round: Round,
    pub alive: bool,
    pub live_members: usize,
    pub core_members: usize,
    pub good: bool,
}

impl CsvRow for HealthRecord {
    const HEADER: &'static [&'static str] =
        &["tag", "item", "check", "round", "alive", "live_members", "core_members", "good"];

    fn row(&self) -> Vec<String> {
        vec![
            self.tag.0.to_string(),
            self.item.to_string(),
            self.check.to_string(),
            self.round.to_string(),
            self.alive.to_string(),
            self.live_members.to_string(),
            self.core_members.to_string(),
            self.good.to_string(),
        ]
    }
}

/// Epochs survived before the first bad check, per committee. Committees that
/// never failed are censored and returned separately.
pub fn lifetimes(health: &[HealthRecord]) -> (Vec<u32>, Vec<u32>) {
    let mut by_tag: BTreeMap<TaskTag, Vec<&HealthRecord>> = BTreeMap::new();
    for h in health {
        by_tag.entry(h.tag).or_default().push(h);
    }
    let (mut done, mut censored) = (Vec::new(), Vec::new());
    for (_, mut v) in by_tag {
        v.sort_by_key(|h| h.check);
        match v.iter().position(|h| !h.good) {
            Some(i) => done.push(i as u32),
            None => censored.push(v.len() as u32),
        }
    }
    (done, censored)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildRecord {
    pub finished: Round,
    pub metrics: BuildMetrics,
}

impl CsvRow for BuildRecord {
    const HEADER: &'static [&'static str] = &[
        "item_id",
        "tag",
        "kind",
        "round",
        "finished",
        "roots",
        "set_size",
        "depth_reached",
        "invitations_sent",
        "invitations_lost",
        "declined",
        "cap",
    ];

    fn row(&self) -> Vec<String> {
        let m = &self.metrics;
        vec![
            m.item_id.short(),
            m.tag.0.to_string(),
            m.kind.as_str().to_string(),
            m.round.to_string(),
            self.finished.to_string(),
            m.roots.to_string(),
            m.set_size.to_string(),
            m.depth_reached.to_string(),
            m.invitations_sent.to_string(),
            m.invitations_lost.to_string(),
            m.declined.to_string(),
            m.cap.to_string(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRecord {
    pub item: usize,
    pub item_id: String,
    pub requester: u32,
    pub started: Round,
    pub outcome: SearchOutcome,
    pub rounds_elapsed: u32,
    pub messages_used: u64,
    pub local: bool,
}

impl RetrievalRecord {
    pub fn success(&self) -> bool {
        self.outcome == SearchOutcome::Found
    }
}

impl CsvRow for RetrievalRecord {
    const HEADER: &'static [&'static str] =
        &["item", "item_id", "requester", "started", "outcome", "rounds_elapsed", "messages_used", "local"];

    fn row(&self) -> Vec<String> {
        vec![
            self.item.to_string(),
            self.item_id.clone(),
            self.requester.to_string(),
            self.started.to_string(),
            self.outcome.as_str().to_string(),
            self.rounds_elapsed.to_string(),
            self.messages_used.to_string(),
            self.local.to_string(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvailabilityRecord {
    pub round: Round,
    pub item: usize,
    pub tag: TaskTag,
    pub live_landmarks: usize,
    pub available: bool,
    pub hit_rate: f64,
}

impl CsvRow for AvailabilityRecord {
    const HEADER: &'static [&'static str] = &["round", "item", "tag", "live_landmarks", "available", "hit_rate"];

    fn row(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.item.to_string(),
            self.tag.0.to_string(),
            self.live_landmarks.to_string(),
            self.available.to_string(),
            format!("{:.6}", self.hit_rate),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub round: Round,
    pub tag: TaskTag,
    pub kind: &'static str,
    pub detail: String,
}

impl CsvRow for EventRecord {
    const HEADER: &'static [&'static str] = &["round", "tag", "kind", "detail"];

    fn row(&self) -> Vec<String> {
        vec![self.round.to_string(), self.tag.0.to_string(), self.kind.to_string(), self.detail.clone()]
    }
}

/// Exact histogram of per-node per-round message volume.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VolumeHistogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl VolumeHistogram {
    pub fn add(&mut self, v: u64) {
        *self.counts.entry(v).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &VolumeHistogram) {
        for (&v, &c) in &other.counts {
            *self.counts.entry(v).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    pub fn max(&self) -> u64 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    /// Smallest value `v` with at least a `q` fraction of samples `<= v`.
    pub fn quantile(&self, q: f64) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let need = ((q * self.total as f64).ceil() as u64).clamp(1, self.total);
        let mut seen = 0;
        for (&v, &c) in &self.counts {
            seen += c;
            if seen >= need {
                return v;
            }
        }
        self.max()
    }
}

/// Everything one run produces.
#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    pub rounds: Vec<RoundMetrics>,
    pub health: Vec<HealthRecord>,
    pub builds: Vec<BuildRecord>,
    pub retrievals: Vec<RetrievalRecord>,
    pub availability: Vec<AvailabilityRecord>,
    pub events: Vec<EventRecord>,
    pub volume: VolumeHistogram,
    pub schedule_digest: String,
}

impl SimOutput {
    pub fn count_events(&self, kind: &str) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("rounds.csv"), &self.rounds)?;
        write_csv(&dir.join("health.csv"), &self.health)?;
        write_csv(&dir.join("builds.csv"), &self.builds)?;
        write_csv(&dir.join("retrievals.csv"), &self.retrievals)?;
        write_csv(&dir.join("availability.csv"), &self.availability)?;
        write_csv(&dir.join("events.csv"), &self.events)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_quantiles() {
        let mut h = VolumeHistogram::default();
        for v in 1..=100 {
            h.add(v);
        }
        assert_eq!(h.quantile(0.99), 99);
        assert_eq!(h.quantile(0.5), 50);
        assert_eq!(h.quantile(1.0), 100);
        let mut g = VolumeHistogram::default();
        g.add(1000);
        h.merge(&g);
        assert_eq!(h.max(), 1000);
        assert_eq!(h.count(), 101);
    }

    #[test]
    fn lifetimes_split_censored() {
        let rec = |tag, check, good| HealthRecord {
            tag: TaskTag(tag),
            item: 0,
            check,
            round: 0,
            alive: true,
            live_members: 0,
            core_members: 0,
            good,
        };
        let h = vec![rec(1, 0, true), rec(1, 1, false), rec(2, 0, true), rec(2, 1, true), rec(3, 0, false)];
        let (done, censored) = lifetimes(&h);
        assert_eq!(done, vec![1, 0]);
        assert_eq!(censored, vec![2]);
    }

    #[test]
    fn conservation_detects_leaks() {
        let mut m = RoundMetrics { tokens_spawned: 10, tokens_harvested: 3, tokens_in_flight: 7, ..Default::default() };
        check_conservation(std::slice::from_ref(&m)).unwrap();
        m.tokens_in_flight = 6;
        assert!(check_conservation(&[m]).is_err());
    }
}
