use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::committee::geometric_fit;
use crate::datastore::{SearchOutcome, FETCH_GRACE};
use crate::harness::config::SimulationConfig;
use crate::harness::metrics::{lifetimes, SimOutput, VolumeHistogram};
use crate::harness::sim::{Action, Simulation};
use crate::harness::HarnessError;
use crate::ids::{NodeId, Round};
use crate::landmarks::{size_cap, tree_depth, LandmarkKind};
use crate::netgen::{commit_churn_schedule, DynamicNetworkSchedule};
use crate::rng::{mix, scenario_rng, SimRng};
use crate::walks::{empirical_destinations, exact_walk_distribution, reverse_origin_weights, WalkError, ORACLE_MAX_N};

const TAG_PLAN: u64 = 1;
const TAG_SOUP: u64 = 2;

/// Protocol and adversary seeds of trial `i`. Trial 0 of a one-trial run uses
/// the configured seeds unchanged.
pub fn trial_seeds(cfg: &SimulationConfig, trial: usize) -> (u64, u64) {
    if cfg.trials <= 1 && trial == 0 {
        (cfg.protocol_seed, cfg.adversary_seed)
    } else {
        (mix(&[cfg.protocol_seed, trial as u64]), mix(&[cfg.adversary_seed, trial as u64]))
    }
}

pub fn generate_schedule(cfg: &SimulationConfig, adversary_seed: u64) -> Result<DynamicNetworkSchedule, HarnessError> {
    Ok(commit_churn_schedule(&cfg.schedule_params(adversary_seed))?)
}

/// Rounds one store-then-retrieve item needs at most.
pub fn rounds_needed(cfg: &SimulationConfig) -> Round {
    let tau = cfg.tau();
    11 * tau.max(1) + cfg.search_lifetime.saturating_sub(4) * tau + FETCH_GRACE + 3
}

/// Items stored at random rounds in `[2τ+1, 4τ+1]` by random nodes; each is
/// retrieved `2τ..=3τ` rounds later by another random node.
pub fn store_retrieve_plan(
    cfg: &SimulationConfig,
    protocol_seed: u64,
    retrieve: bool,
) -> Result<Vec<(Round, Action)>, HarnessError> {
    let tau = cfg.tau();
    if retrieve && cfg.horizon < rounds_needed(cfg) {
        return Err(HarnessError::Config(format!(
            "horizon {} too short for store-then-retrieve, need {}",
            cfg.horizon,
            rounds_needed(cfg)
        )));
    }
    let mut rng: SimRng = scenario_rng(protocol_seed, TAG_PLAN);
    let mut plan = Vec::new();
    for item in 0..cfg.items {
        let at = 2 * tau + 1 + rng.gen_range(0..=2 * tau);
        let mut payload = vec![0u8; cfg.payload_len.max(1)];
        rng.fill_bytes(&mut payload);
        // A distinct prefix keeps two random payloads from ever colliding.
        let w = payload.len().min(8);
        payload[..w].copy_from_slice(&(item as u64).to_le_bytes()[..w]);
        plan.push((at, Action::Store { item, payload, pick: rng.next_u64() }));
        let later = at + 2 * tau + rng.gen_range(0..=tau);
        let pick = rng.next_u64();
        if retrieve {
            plan.push((later, Action::Retrieve { item, pick }));
        }
    }
    Ok(plan)
}

#[derive(Clone, Debug)]
pub struct TrialRun {
    pub trial: usize,
    pub protocol_seed: u64,
    pub adversary_seed: u64,
    pub output: SimOutput,
}

/// Runs one seeded trial on its own schedule.
pub fn run_trial(cfg: &SimulationConfig, trial: usize, retrieve: bool) -> Result<TrialRun, HarnessError> {
    let (_, adv) = trial_seeds(cfg, trial);
    let schedule = generate_schedule(cfg, adv)?;
    run_on_schedule(cfg, &schedule, trial, retrieve)
}

/// Runs one trial on a given schedule; the protocol seed is the trial's.
pub fn run_on_schedule(
    cfg: &SimulationConfig,
    schedule: &DynamicNetworkSchedule,
    trial: usize,
    retrieve: bool,
) -> Result<TrialRun, HarnessError> {
    let (ps, adv) = trial_seeds(cfg, trial);
    let cfg = SimulationConfig { protocol_seed: ps, ..cfg.clone() };
    let plan = store_retrieve_plan(&cfg, ps, retrieve)?;
    let output = Simulation::new(&cfg, schedule, plan)?.run()?;
    Ok(TrialRun { trial, protocol_seed: ps, adversary_seed: adv, output })
}

/// All trials, in parallel. The result order and content do not depend on
/// the thread count.
pub fn run_trials(cfg: &SimulationConfig, retrieve: bool) -> Result<Vec<TrialRun>, HarnessError> {
    cfg.validate()?;
    (0..cfg.trials.max(1)).into_par_iter().map(|t| run_trial(cfg, t, retrieve)).collect()
}

fn quantile_u32(sorted: &[u32], q: f64) -> Option<u32> {
    if sorted.is_empty() {
        return None;
    }
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Some(sorted[i])
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoreRetrieveReport {
    pub trials: usize,
    pub retrievals: usize,
    pub found: usize,
    pub not_found: usize,
    pub requester_gone: usize,
    pub local_hits: usize,
    pub success_rate: f64,
    /// Success rate among retrievals whose requester stayed.
    pub success_rate_present: f64,
    pub median_latency: Option<u32>,
    pub p90_latency: Option<u32>,
    pub max_latency: Option<u32>,
    pub items_stored: usize,
    pub store_failures: usize,
    pub availability_checks: usize,
    pub available_fraction: f64,
    /// Items available at every check.
    pub items_always_available: f64,
    pub health_checks: usize,
    pub good_fraction: f64,
    pub lifetimes: usize,
    pub censored_lifetimes: usize,
    pub lifetime_q: Option<f64>,
    pub lifetime_p_value: Option<f64>,
    pub storage_builds: usize,
    pub builds_in_band: f64,
    pub median_build_size: Option<u32>,
    pub max_build_size: usize,
    pub build_cap: u64,
    pub committee_deaths: usize,
    pub reconstruction_impossible: usize,
    pub p50_volume: u64,
    pub p99_volume: u64,
    pub max_volume: u64,
    pub budget_cap: u64,
    /// `p99_volume / ln²n`.
    pub volume_constant: f64,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn summarize(cfg: &SimulationConfig, outputs: &[&SimOutput]) -> StoreRetrieveReport {
    let n = cfg.n as f64;
    let mut rep = StoreRetrieveReport { trials: outputs.len(), budget_cap: cfg.budget_cap(), ..Default::default() };
    let mut latencies = Vec::new();
    let mut volume = VolumeHistogram::default();
    let mut health = Vec::new();
    let mut sizes = Vec::new();
    let (mut avail_ok, mut items_ok, mut items_checked) = (0, 0, 0);
    let depth = if cfg.tree_depth >= 0 { Some(cfg.tree_depth as u32) } else { tree_depth(cfg.n, cfg.k).ok() };
    let log_n = cfg.log_n();
    rep.build_cap = depth.map_or(0, |mu| size_cap(cfg.h * log_n, mu));
    for (trial, out) in outputs.iter().enumerate() {
        for r in &out.retrievals {
            rep.retrievals += 1;
            rep.local_hits += r.local as usize;
            match r.outcome {
                SearchOutcome::Found => {
                    rep.found += 1;
                    latencies.push(r.rounds_elapsed);
                }
                SearchOutcome::NotFound => rep.not_found += 1,
                SearchOutcome::RequesterGone => rep.requester_gone += 1,
            }
        }
        rep.items_stored += out.count_events("stored");
        rep.store_failures += out.count_events("store-failed");
        rep.committee_deaths += out.count_events("committee-dead");
        rep.reconstruction_impossible += out.count_events("reconstruction-impossible");
        let mut per_item: BTreeMap<usize, bool> = BTreeMap::new();
        for a in &out.availability {
            rep.availability_checks += 1;
            avail_ok += a.available as usize;
            *per_item.entry(a.item).or_insert(true) &= a.available;
        }
        items_checked += per_item.len();
        items_ok += per_item.values().filter(|&&v| v).count();
        // Tags repeat across trials; keep committees apart.
        health.extend(out.health.iter().cloned().map(|mut h| {
            h.tag.0 += (trial as u32) << 20;
            h
        }));
        for b in out.builds.iter().filter(|b| b.metrics.kind == LandmarkKind::Storage) {
            sizes.push(b.metrics.set_size as u32);
        }
        volume.merge(&out.volume);
    }
    rep.success_rate = frac(rep.found, rep.retrievals);
    rep.success_rate_present = frac(rep.found, rep.retrievals - rep.requester_gone);
    latencies.sort_unstable();
    rep.median_latency = quantile_u32(&latencies, 0.5);
    rep.p90_latency = quantile_u32(&latencies, 0.9);
    rep.max_latency = latencies.last().copied();
    rep.available_fraction = frac(avail_ok, rep.availability_checks);
    rep.items_always_available = frac(items_ok, items_checked);
    rep.health_checks = health.len();
    rep.good_fraction = frac(health.iter().filter(|h| h.good).count(), health.len());
    let (done, censored) = lifetimes(&health);
    rep.lifetimes = done.len();
    rep.censored_lifetimes = censored.len();
    if let Some(fit) = geometric_fit(&done) {
        rep.lifetime_q = Some(fit.q);
        rep.lifetime_p_value = Some(fit.p_value);
    }
    rep.storage_builds = sizes.len();
    let lo = n.sqrt();
    rep.builds_in_band = frac(
        sizes.iter().filter(|&&s| s as f64 >= lo && (s as u64) <= rep.build_cap).count(),
        sizes.len(),
    );
    rep.max_build_size = sizes.iter().copied().max().unwrap_or(0) as usize;
    sizes.sort_unstable();
    rep.median_build_size = quantile_u32(&sizes, 0.5);
    rep.p50_volume = volume.quantile(0.5);
    rep.p99_volume = volume.quantile(0.99);
    rep.max_volume = volume.max();
    rep.volume_constant = rep.p99_volume as f64 / n.ln().powi(2);
    rep
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl StoreRetrieveReport {
    pub const HEADER: &'static [&'static str] = &[
        "trials",
        "retrievals",
        "found",
        "not_found",
        "requester_gone",
        "local_hits",
        "success_rate",
        "success_rate_present",
        "median_latency",
        "p90_latency",
        "max_latency",
        "items_stored",
        "store_failures",
        "availability_checks",
        "available_fraction",
        "items_always_available",
        "health_checks",
        "good_fraction",
        "lifetimes",
        "censored_lifetimes",
        "lifetime_q",
        "lifetime_p_value",
        "storage_builds",
        "builds_in_band",
        "median_build_size",
        "max_build_size",
        "build_cap",
        "committee_deaths",
        "reconstruction_impossible",
        "p50_volume",
        "p99_volume",
        "max_volume",
        "budget_cap",
        "volume_constant",
    ];

    pub fn row(&self) -> Vec<String> {
        vec![
            self.trials.to_string(),
            self.retrievals.to_string(),
            self.found.to_string(),
            self.not_found.to_string(),
            self.requester_gone.to_string(),
            self.local_hits.to_string(),
            format!("{:.4}", self.success_rate),
            format!("{:.4}", self.success_rate_present),
            opt(self.median_latency),
            opt(self.p90_latency),
            opt(self.max_latency),
            self.items_stored.to_string(),
            self.store_failures.to_string(),
            self.availability_checks.to_string(),
            format!("{:.4}", self.available_fraction),
            format!("{:.4}", self.items_always_available),
            self.health_checks.to_string(),
            format!("{:.4}", self.good_fraction),
            self.lifetimes.to_string(),
            self.censored_lifetimes.to_string(),
            opt(self.lifetime_q.map(|q| format!("{q:.4}"))),
            opt(self.lifetime_p_value.map(|p| format!("{p:.4}"))),
            self.storage_builds.to_string(),
            format!("{:.4}", self.builds_in_band),
            opt(self.median_build_size),
            self.max_build_size.to_string(),
            self.build_cap.to_string(),
            self.committee_deaths.to_string(),
            self.reconstruction_impossible.to_string(),
            self.p50_volume.to_string(),
            self.p99_volume.to_string(),
            self.max_volume.to_string(),
            self.budget_cap.to_string(),
            format!("{:.2}", self.volume_constant),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::HEADER.iter().zip(self.row()) {
            let _ = writeln!(s, "{k:<26} {v}");
        }
        s
    }
}

fn write_manifest(cfg: &SimulationConfig, runs: &[TrialRun], dir: &Path) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "# churnstore {}", env!("CARGO_PKG_VERSION"));
    s.push_str(&cfg.to_text());
    for r in runs {
        let _ = writeln!(
            s,
            "# trial {} protocol_seed {} adversary_seed {} schedule {}",
            r.trial, r.protocol_seed, r.adversary_seed, r.output.schedule_digest
        );
    }
    std::fs::write(dir.join("manifest.txt"), s)?;
    Ok(())
}

fn write_summary(report: &StoreRetrieveReport, dir: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(StoreRetrieveReport::HEADER)?;
    w.write_record(report.row())?;
    w.flush()?;
    std::fs::write(dir.join("summary.txt"), report.to_text())?;
    Ok(())
}

/// Store-then-retrieve over `cfg.trials` seeded trials. With `write` the
/// per-trial CSVs, the manifest and the summary land in `cfg.out`.
pub fn scenario_store_retrieve(
    cfg: &SimulationConfig,
    retrieve: bool,
    write: bool,
) -> Result<(StoreRetrieveReport, Vec<TrialRun>), HarnessError> {
    let runs = run_trials(cfg, retrieve)?;
    let outs: Vec<&SimOutput> = runs.iter().map(|r| &r.output).collect();
    let report = summarize(cfg, &outs);
    if write {
        std::fs::create_dir_all(&cfg.out)?;
        for r in &runs {
            r.output.write_dir(&cfg.out.join(format!("trial-{}", r.trial)))?;
        }
        write_manifest(cfg, &runs, &cfg.out)?;
        write_summary(&report, &cfg.out)?;
    }
    Ok((report, runs))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoupReport {
    pub schedules: usize,
    pub windows: usize,
    pub window_len: Round,
    pub pairs: u64,
    pub pairs_in_band: u64,
    pub band_fraction: f64,
    pub below_band: u64,
    pub above_band: u64,
    /// Mean fraction of `V^{t0}` present throughout the window.
    pub window_survivor_fraction: f64,
    pub mean_walk_survival: f64,
    pub engine_checks: usize,
    pub max_engine_tv: f64,
    pub max_survival_error: f64,
    pub max_reversal_error: f64,
}

impl SoupReport {
    pub fn to_text(&self) -> String {
        format!(
            "schedules {}\nwindows {}\nwindow_len {}\npairs {}\npairs_in_band {}\nband_fraction {:.4}\nbelow_band {}\nabove_band {}\nwindow_survivor_fraction {:.4}\nmean_walk_survival {:.4}\nengine_checks {}\nmax_engine_tv {:.4}\nmax_survival_error {:.4}\nmax_reversal_error {:.3e}\n",
            self.schedules,
            self.windows,
            self.window_len,
            self.pairs,
            self.pairs_in_band,
            self.band_fraction,
            self.below_band,
            self.above_band,
            self.window_survivor_fraction,
            self.mean_walk_survival,
            self.engine_checks,
            self.max_engine_tv,
            self.max_survival_error,
            self.max_reversal_error
        )
    }
}

/// Soup measurements on one schedule: `windows` windows of `2τ` rounds,
/// `soup_sources` sources each among the window survivors. The first source
/// of every window is also checked against the engine and the reverse
/// oracle.
pub fn soup_on_schedule(
    cfg: &SimulationConfig,
    schedule: &DynamicNetworkSchedule,
    windows: usize,
    seed: u64,
) -> Result<SoupReport, HarnessError> {
    let n = schedule.n();
    if n > ORACLE_MAX_N {
        return Err(WalkError::TooLarge { n }.into());
    }
    let len = 2 * cfg.tau();
    if schedule.horizon() <= len {
        return Err(HarnessError::Config(format!("horizon must exceed {len}")));
    }
    let (lo, hi) = (1.0 / (17.0 * n as f64), 3.0 / (2.0 * n as f64));
    let mut rng: SimRng = scenario_rng(seed, TAG_SOUP);
    let mut rep = SoupReport { schedules: 1, window_len: len, ..Default::default() };
    let (mut surv_sum, mut surv_cnt, mut frac_sum) = (0.0, 0usize, 0.0);
    for _ in 0..windows {
        let t0 = rng.gen_range(0..schedule.horizon() - len);
        let t = t0 + len;
        let survivors: Vec<NodeId> =
            schedule.snapshot(t0).nodes().iter().copied().filter(|&id| schedule.present_throughout(id, t0, t)).collect();
        rep.windows += 1;
        frac_sum += survivors.len() as f64 / n as f64;
        if survivors.is_empty() {
            continue;
        }
        for j in 0..cfg.soup_sources.min(survivors.len()) {
            let s = survivors[rng.gen_range(0..survivors.len())];
            let dist = exact_walk_distribution(schedule, s, t0, t)?;
            surv_sum += dist.survival();
            surv_cnt += 1;
            let map = dist.to_map();
            for d in &survivors {
                let p = map.get(d).copied().unwrap_or(0.0);
                rep.pairs += 1;
                if p < lo {
                    rep.below_band += 1;
                } else if p > hi {
                    rep.above_band += 1;
                } else {
                    rep.pairs_in_band += 1;
                }
            }
            if j == 0 && cfg.soup_walks > 0 {
                let (counts, destroyed) = empirical_destinations(schedule, s, t0, t, cfg.soup_walks, rng.next_u64())?;
                let w = cfg.soup_walks as f64;
                let mut tv = (destroyed as f64 / w - dist.kill_mass).abs();
                for (c, p) in counts.iter().zip(&dist.probs) {
                    tv += (*c as f64 / w - p).abs();
                }
                rep.max_engine_tv = rep.max_engine_tv.max(tv / 2.0);
                let surv = 1.0 - destroyed as f64 / w;
                rep.max_survival_error = rep.max_survival_error.max((surv - dist.survival()).abs());
                let d = survivors[rng.gen_range(0..survivors.len())];
                let back = reverse_origin_weights(schedule, d, t0, t)?;
                rep.max_reversal_error = rep.max_reversal_error.max((back.get(s) - dist.get(d)).abs());
                rep.engine_checks += 1;
            }
        }
    }
    rep.band_fraction = if rep.pairs == 0 { 0.0 } else { rep.pairs_in_band as f64 / rep.pairs as f64 };
    rep.window_survivor_fraction = frac_sum / rep.windows.max(1) as f64;
    rep.mean_walk_survival = if surv_cnt == 0 { 0.0 } else { surv_sum / surv_cnt as f64 };
    Ok(rep)
}

pub fn merge_soup(reports: &[SoupReport]) -> SoupReport {
    let mut m = SoupReport::default();
    let (mut wsum, mut ssum, mut swt) = (0.0, 0.0, 0usize);
    for r in reports {
        m.schedules += r.schedules;
        m.windows += r.windows;
        m.window_len = r.window_len;
        m.pairs += r.pairs;
        m.pairs_in_band += r.pairs_in_band;
        m.below_band += r.below_band;
        m.above_band += r.above_band;
        wsum += r.window_survivor_fraction * r.windows as f64;
        ssum += r.mean_walk_survival * r.windows as f64;
        swt += r.windows;
        m.engine_checks += r.engine_checks;
        m.max_engine_tv = m.max_engine_tv.max(r.max_engine_tv);
        m.max_survival_error = m.max_survival_error.max(r.max_survival_error);
        m.max_reversal_error = m.max_reversal_error.max(r.max_reversal_error);
    }
    m.band_fraction = if m.pairs == 0 { 0.0 } else { m.pairs_in_band as f64 / m.pairs as f64 };
    m.window_survivor_fraction = wsum / swt.max(1) as f64;
    m.mean_walk_survival = ssum / swt.max(1) as f64;
    m
}

/// Soup over `cfg.trials` schedules, 4 windows each.
pub fn scenario_soup(cfg: &SimulationConfig, write: bool) -> Result<SoupReport, HarnessError> {
    if cfg.n > ORACLE_MAX_N {
        return Err(WalkError::TooLarge { n: cfg.n }.into());
    }
    let reports: Vec<SoupReport> = (0..cfg.trials.max(1))
        .into_par_iter()
        .map(|t| {
            let (ps, adv) = trial_seeds(cfg, t);
            let schedule = generate_schedule(cfg, adv)?;
            soup_on_schedule(cfg, &schedule, 4, ps)
        })
        .collect::<Result<_, HarnessError>>()?;
    let rep = merge_soup(&reports);
    if write {
        std::fs::create_dir_all(&cfg.out)?;
        std::fs::write(cfg.out.join("soup.txt"), rep.to_text())?;
        std::fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub rate_scale: f64,
    pub k: f64,
    pub report: StoreRetrieveReport,
}

/// One store-retrieve run per `(rate_scale, k)` cell, same seeds everywhere.
pub fn scenario_sweep(cfg: &SimulationConfig, write: bool) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::new();
    for &k in &cfg.sweep_ks {
        for &rate_scale in &cfg.sweep_rate_scales {
            let cell = SimulationConfig { k, rate_scale, ..cfg.clone() };
            let (report, _) = scenario_store_retrieve(&cell, true, false)?;
            rows.push(SweepRow { rate_scale, k, report });
        }
    }
    if write {
        std::fs::create_dir_all(&cfg.out)?;
        let mut w = csv::Writer::from_path(cfg.out.join("sweep.csv"))?;
        let mut header = vec!["rate_scale", "k"];
        header.extend_from_slice(StoreRetrieveReport::HEADER);
        w.write_record(&header)?;
        for r in &rows {
            let mut row = vec![r.rate_scale.to_string(), r.k.to_string()];
            row.extend(r.report.row());
            w.write_record(&row)?;
        }
        w.flush()?;
        std::fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    }
    Ok(rows)
}

/// Aggregates every `retrievals.csv` and `rounds.csv` below `dir`.
pub fn report_dir(dir: &Path) -> Result<String, HarnessError> {
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    let mut latencies: Vec<u32> = Vec::new();
    let mut volume = VolumeHistogram::default();
    let (mut retrieval_files, mut round_files, mut rounds) = (0, 0, 0);
    let mut stack = vec![dir.to_path_buf()];
    let mut files = Vec::new();
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    for p in files {
        match p.file_name().and_then(|s| s.to_str()) {
            Some("retrievals.csv") => {
                retrieval_files += 1;
                let mut rd = csv::Reader::from_path(&p)?;
                let h = rd.headers()?.clone();
                let oi = h.iter().position(|x| x == "outcome");
                let li = h.iter().position(|x| x == "rounds_elapsed");
                let (Some(oi), Some(li)) = (oi, li) else {
                    return Err(HarnessError::Config(format!("{}: unexpected header", p.display())));
                };
                for rec in rd.records() {
                    let rec = rec?;
                    let o = rec[oi].to_string();
                    if o == "found" {
                        latencies.push(rec[li].parse().map_err(|_| HarnessError::Config("bad latency".into()))?);
                    }
                    *outcomes.entry(o).or_insert(0) += 1;
                }
            }
            Some("rounds.csv") => {
                round_files += 1;
                let mut rd = csv::Reader::from_path(&p)?;
                let h = rd.headers()?.clone();
                let Some(vi) = h.iter().position(|x| x == "max_volume") else {
                    return Err(HarnessError::Config(format!("{}: unexpected header", p.display())));
                };
                for rec in rd.records() {
                    let rec = rec?;
                    rounds += 1;
                    volume.add(rec[vi].parse().map_err(|_| HarnessError::Config("bad volume".into()))?);
                }
            }
            _ => {}
        }
    }
    latencies.sort_unstable();
    let total: usize = outcomes.values().sum();
    let found = outcomes.get("found").copied().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "retrieval_files {retrieval_files}");
    let _ = writeln!(s, "round_files {round_files}");
    let _ = writeln!(s, "retrievals {total}");
    for (k, v) in &outcomes {
        let _ = writeln!(s, "outcome_{k} {v}");
    }
    let _ = writeln!(s, "success_rate {:.4}", frac(found, total));
    let _ = writeln!(s, "median_latency {}", opt(quantile_u32(&latencies, 0.5)));
    let _ = writeln!(s, "p90_latency {}", opt(quantile_u32(&latencies, 0.9)));
    let _ = writeln!(s, "rounds {rounds}");
    let _ = writeln!(s, "p99_round_max_volume {}", volume.quantile(0.99));
    let _ = writeln!(s, "max_volume {}", volume.max());
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_is_seeded_and_ordered_per_item() {
        let cfg = SimulationConfig { n: 64, items: 5, payload_len: 100, horizon: 400, ..Default::default() };
        let a = store_retrieve_plan(&cfg, 9, true).unwrap();
        let b = store_retrieve_plan(&cfg, 9, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, store_retrieve_plan(&cfg, 10, true).unwrap());
        let tau = cfg.tau();
        for pair in a.chunks(2) {
            let (s, r) = (pair[0].0, pair[1].0);
            assert!(s > 2 * tau && r >= s + 2 * tau && r <= s + 3 * tau);
        }
        let short = SimulationConfig { horizon: 50, ..cfg };
        assert!(store_retrieve_plan(&short, 9, true).is_err());
    }

    #[test]
    fn trial_seeds_differ() {
        let cfg = SimulationConfig { trials: 3, ..Default::default() };
        let s: Vec<_> = (0..3).map(|t| trial_seeds(&cfg, t)).collect();
        assert_ne!(s[0], s[1]);
        assert_ne!(s[1].0, s[2].0);
        let one = SimulationConfig { trials: 1, ..Default::default() };
        assert_eq!(trial_seeds(&one, 0), (one.protocol_seed, one.adversary_seed));
    }
}
