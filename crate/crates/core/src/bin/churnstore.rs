use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use churnstore::harness::scenarios::{
    generate_schedule, report_dir, scenario_soup, scenario_store_retrieve, scenario_sweep,
};
use churnstore::harness::{Scenario, SimulationConfig};

#[derive(Parser)]
#[command(name = "churnstore", version, about = "Storage and search under adversarial churn")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Commit a churn schedule and write its dump and digest.
    Gen(Common),
    /// Walk soup measurements against the exact oracle.
    Soup(Common),
    /// Store-then-retrieve trials.
    Run(Common),
    /// Store-retrieve over a grid of churn rates.
    Sweep(Common),
    /// Aggregate the CSVs below a directory.
    Report {
        /// Directory written by `run` or `sweep`.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "seed-protocol")]
    seed_protocol: Option<u64>,
    #[arg(long = "seed-adversary")]
    seed_adversary: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long = "rate-scale")]
    rate_scale: Option<f64>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    trials: Option<usize>,
    /// `replicate` or `erasure`.
    #[arg(long)]
    mode: Option<String>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<SimulationConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimulationConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => SimulationConfig::default(),
        };
        if let Some(v) = self.seed_protocol {
            cfg.protocol_seed = v;
        }
        if let Some(v) = self.seed_adversary {
            cfg.adversary_seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.rate_scale {
            cfg.rate_scale = v;
        }
        if let Some(v) = self.rounds {
            cfg.horizon = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = &self.mode {
            cfg.set("mode", v)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("`{kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(c) => {
            let cfg = c.config()?;
            let s = generate_schedule(&cfg, cfg.adversary_seed)?;
            std::fs::create_dir_all(&cfg.out)?;
            std::fs::write(cfg.out.join("schedule.txt"), s.dump())?;
            let digest = s.digest();
            std::fs::write(cfg.out.join("schedule.sha256"), format!("{digest}\n"))?;
            println!("{digest}");
        }
        Cmd::Soup(c) => {
            let cfg = SimulationConfig { scenario: Scenario::Soup, ..c.config()? };
            print!("{}", scenario_soup(&cfg, true)?.to_text());
        }
        Cmd::Run(c) => {
            let cfg = c.config()?;
            let retrieve = cfg.scenario != Scenario::CommitteeLifetime;
            let (report, _) = scenario_store_retrieve(&cfg, retrieve, true)?;
            print!("{}", report.to_text());
        }
        Cmd::Sweep(c) => {
            let cfg = SimulationConfig { scenario: Scenario::Sweep, ..c.config()? };
            for row in scenario_sweep(&cfg, true)? {
                println!(
                    "rate_scale {} k {} success {:.4} median_latency {} good {:.4}",
                    row.rate_scale,
                    row.k,
                    row.report.success_rate,
                    row.report.median_latency.map_or("NA".into(), |v| v.to_string()),
                    row.report.good_fraction
                );
            }
        }
        Cmd::Report { dir } => print!("{}", report_dir(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
