use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::harness::HarnessError;
use crate::ids::ceil_ln;
use crate::netgen::{ChurnStrategy, ScheduleParams};
use crate::walks::WalkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageMode {
    Replicate,
    Erasure,
}

impl FromStr for StorageMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replicate" => Ok(StorageMode::Replicate),
            "erasure" => Ok(StorageMode::Erasure),
            _ => Err(HarnessError::Config(format!("unknown mode `{s}`"))),
        }
    }
}

impl StorageMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StorageMode::Replicate => "replicate",
            StorageMode::Erasure => "erasure",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Soup,
    StoreRetrieve,
    CommitteeLifetime,
    Sweep,
}

impl FromStr for Scenario {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soup" => Ok(Scenario::Soup),
            "store-retrieve" => Ok(Scenario::StoreRetrieve),
            "committee-lifetime" => Ok(Scenario::CommitteeLifetime),
            "sweep" => Ok(Scenario::Sweep),
            _ => Err(HarnessError::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Soup => "soup",
            Scenario::StoreRetrieve => "store-retrieve",
            Scenario::CommitteeLifetime => "committee-lifetime",
            Scenario::Sweep => "sweep",
        }
    }
}

/// Every knob of a run. Read from a flat `key = value` file; CLI flags
/// override file values.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub n: usize,
    pub d: usize,
    pub lambda_max: f64,
    pub k: f64,
    pub rate_scale: f64,
    pub strategy: ChurnStrategy,
    pub rewire_fraction: f64,
    pub horizon: u32,
    pub alpha: usize,
    pub h: usize,
    pub m: usize,
    pub h_override: bool,
    /// Per-node forwarding cap; `0` selects the steady-state default.
    pub forward_cap: usize,
    pub epsilon: f64,
    pub mode: StorageMode,
    pub scenario: Scenario,
    pub trials: usize,
    pub protocol_seed: u64,
    pub adversary_seed: u64,
    pub out: PathBuf,
    /// Items stored per trial; each is retrieved once.
    pub items: usize,
    pub payload_len: usize,
    /// Search committee lifetime in units of `τ`.
    pub search_lifetime: u32,
    pub availability_threshold: f64,
    /// Words per node per round; `0` selects `10⁴·ln²n`.
    pub budget_words: u64,
    /// Fail the run on the first node-round above the cap.
    pub enforce_budget: bool,
    /// Walk-preserving network instead of the churned one.
    pub preserve_walks: bool,
    /// Landmark depth override; negative selects the formula.
    pub tree_depth: i64,
    pub soup_sources: usize,
    pub soup_walks: usize,
    pub sweep_rate_scales: Vec<f64>,
    pub sweep_ks: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n: 1024,
            d: 8,
            lambda_max: 0.7,
            k: 2.0,
            rate_scale: 4.0,
            strategy: ChurnStrategy::UniformRandom,
            rewire_fraction: 0.01,
            horizon: 500,
            alpha: 72,
            h: 2,
            m: 3,
            h_override: false,
            forward_cap: 0,
            epsilon: 0.5,
            mode: StorageMode::Replicate,
            scenario: Scenario::StoreRetrieve,
            trials: 1,
            protocol_seed: 1,
            adversary_seed: 2,
            out: PathBuf::from("out"),
            items: 10,
            payload_len: 10 * 1024,
            search_lifetime: 4,
            availability_threshold: 1.0,
            budget_words: 0,
            enforce_budget: true,
            preserve_walks: false,
            tree_depth: -1,
            soup_sources: 32,
            soup_walks: 100_000,
            sweep_rate_scales: vec![0.0, 1.0, 2.0, 4.0],
            sweep_ks: vec![2.0],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, HarnessError> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("bad value `{v}` for `{key}`"))),
    }
}

impl SimulationConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        match key {
            "n" => self.n = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "lambda_max" => self.lambda_max = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "rate_scale" => self.rate_scale = parse(key, v)?,
            "strategy" => {
                self.strategy = v.parse().map_err(|e: crate::netgen::NetError| HarnessError::Config(e.to_string()))?
            }
            "rewire_fraction" => self.rewire_fraction = parse(key, v)?,
            "horizon" | "rounds" => self.horizon = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "h" => self.h = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "h_override" => self.h_override = parse_bool(key, v)?,
            "forward_cap" => self.forward_cap = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "scenario" => self.scenario = v.parse()?,
            "trials" => self.trials = parse(key, v)?,
            "protocol_seed" => self.protocol_seed = parse(key, v)?,
            "adversary_seed" => self.adversary_seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "items" => self.items = parse(key, v)?,
            "payload_len" => self.payload_len = parse(key, v)?,
            "search_lifetime" => self.search_lifetime = parse(key, v)?,
            "availability_threshold" => self.availability_threshold = parse(key, v)?,
            "budget_words" => self.budget_words = parse(key, v)?,
            "enforce_budget" => self.enforce_budget = parse_bool(key, v)?,
            "preserve_walks" => self.preserve_walks = parse_bool(key, v)?,
            "tree_depth" => self.tree_depth = parse(key, v)?,
            "soup_sources" => self.soup_sources = parse(key, v)?,
            "soup_walks" => self.soup_walks = parse(key, v)?,
            "sweep_rate_scales" => self.sweep_rate_scales = parse_list(key, v)?,
            "sweep_ks" => self.sweep_ks = parse_list(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = SimulationConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Same format as the input file; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n", self.n.to_string());
        kv("d", self.d.to_string());
        kv("lambda_max", self.lambda_max.to_string());
        kv("k", self.k.to_string());
        kv("rate_scale", self.rate_scale.to_string());
        kv("strategy", self.strategy.to_string());
        kv("rewire_fraction", self.rewire_fraction.to_string());
        kv("horizon", self.horizon.to_string());
        kv("alpha", self.alpha.to_string());
        kv("h", self.h.to_string());
        kv("m", self.m.to_string());
        kv("h_override", self.h_override.to_string());
        kv("forward_cap", self.forward_cap.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("mode", self.mode.as_str().to_string());
        kv("scenario", self.scenario.as_str().to_string());
        kv("trials", self.trials.to_string());
        kv("protocol_seed", self.protocol_seed.to_string());
        kv("adversary_seed", self.adversary_seed.to_string());
        kv("out", self.out.display().to_string());
        kv("items", self.items.to_string());
        kv("payload_len", self.payload_len.to_string());
        kv("search_lifetime", self.search_lifetime.to_string());
        kv("availability_threshold", self.availability_threshold.to_string());
        kv("budget_words", self.budget_words.to_string());
        kv("enforce_budget", self.enforce_budget.to_string());
        kv("preserve_walks", self.preserve_walks.to_string());
        kv("tree_depth", self.tree_depth.to_string());
        kv("soup_sources", self.soup_sources.to_string());
        kv("soup_walks", self.soup_walks.to_string());
        kv("sweep_rate_scales", list(&self.sweep_rate_scales));
        kv("sweep_ks", list(&self.sweep_ks));
        s
    }

    pub fn log_n(&self) -> usize {
        ceil_ln(self.n).max(1)
    }

    pub fn tau(&self) -> u32 {
        (self.m * self.log_n()) as u32
    }

    pub fn budget_cap(&self) -> u64 {
        if self.budget_words > 0 {
            self.budget_words
        } else {
            let ln = (self.n as f64).ln();
            (1e4 * ln * ln).floor() as u64
        }
    }

    pub fn walk_config(&self) -> Result<WalkConfig, HarnessError> {
        let cfg = if self.h_override {
            WalkConfig::with_h_override(self.n, self.alpha, self.h, self.m)
        } else {
            WalkConfig::new(self.n, self.alpha, self.h, self.m)?
        };
        Ok(if self.forward_cap > 0 { cfg.with_forward_cap(self.forward_cap) } else { cfg })
    }

    pub fn schedule_params(&self, adversary_seed: u64) -> ScheduleParams {
        ScheduleParams {
            lambda_max: self.lambda_max,
            k: self.k,
            rate_scale: self.rate_scale,
            strategy: if self.rate_scale > 0.0 { self.strategy } else { ChurnStrategy::None },
            rewire_fraction: self.rewire_fraction,
            ..ScheduleParams::new(self.n, self.d, self.horizon, adversary_seed)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.mode == StorageMode::Erasure && self.h < 3 {
            return Err(HarnessError::Config("erasure mode needs h >= 3".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || self.epsilon == 0.0 {
            return Err(HarnessError::Config("epsilon must lie in (0, 1]".into()));
        }
        self.walk_config()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = SimulationConfig::default();
        c.apply_text("n = 64\n# comment\nmode = erasure  # trailing\nh=4\nsweep_ks = 1.5, 2\n").unwrap();
        assert_eq!(c.n, 64);
        assert_eq!(c.mode, StorageMode::Erasure);
        assert_eq!(c.sweep_ks, vec![1.5, 2.0]);
        let mut d = SimulationConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = SimulationConfig::default();
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("n = many").is_err());
        assert!(c.apply_text("just words").is_err());
        c.h = 3;
        assert!(c.validate().is_err(), "h above alpha/36 without override");
        c.h_override = true;
        c.validate().unwrap();
    }

    #[test]
    fn default_budget_cap() {
        let c = SimulationConfig::default();
        assert_eq!(c.budget_cap(), (1e4 * 1024f64.ln().powi(2)) as u64);
        assert_eq!(c.tau(), 21);
    }
}
