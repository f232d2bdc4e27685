//! Command-line front end: Monte Carlo experiments, trend fitting,
//! resistance estimates, tag inspection, and scripted scenario runs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use palisade_core::fixed::Fixed;
use palisade_core::harness::{self, Scenario};
use palisade_core::sim::{
    self, reference, Resistance, ResistanceQuery, SimParams, TrendFit, OUTCOME_CSV_HEADER,
    TREND_CSV_HEADER,
};
use palisade_core::tag::{decode_option, OPTION_LEN};
use palisade_core::SystemConfig;

#[derive(Parser)]
#[command(
    name = "palisade",
    version,
    about = "Diverse replicated serving: compromise simulator, resistance evaluator, scenario harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run time-to-compromise experiments; one CSV row per budget value.
    Simulate {
        /// Count of variant pools.
        #[arg(long)]
        n: u32,
        /// Replicas per pool.
        #[arg(long)]
        m: u32,
        /// Replicas cleansed per adversarial request; repeatable.
        #[arg(long, required = true, num_args = 1..)]
        b: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        trials: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fit amplitude * exp(rate * b) to experiment medians, grouped by (n, m).
    Fit {
        /// CSV produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Expected time for a rate-limited adversary to own a whole serving set.
    Resistance {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
        /// Mean replicas refreshed per admitted request.
        #[arg(long)]
        k: f64,
        /// Fraction of the request stream the adversary controls.
        #[arg(long)]
        alpha: f64,
        /// Adversarial requests per second.
        #[arg(long)]
        rate: f64,
        /// Trend CSV from `fit`; defaults to the built-in reference constants.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Run a scripted scenario through the full proxy pipeline.
    Scenario {
        /// System configuration TOML.
        #[arg(long)]
        config: PathBuf,
        /// Scenario script TOML.
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit metrics as CSV instead of the human summary.
        #[arg(long)]
        csv: bool,
        /// Also print every write the store accepted.
        #[arg(long)]
        dump_store: bool,
    },
    /// Decode a 40-byte tag option block given as hex.
    TagInspect {
        #[arg(long)]
        hex: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { n, m, b, trials, seed } => simulate(n, m, &b, trials, seed),
        Command::Fit { input } => fit(&input),
        Command::Resistance { n, m, k, alpha, rate, fit } => {
            resistance(n, m, k, alpha, rate, fit.as_deref())
        }
        Command::Scenario { config, script, seed, csv, dump_store } => {
            scenario(&config, &script, seed, csv, dump_store)
        }
        Command::TagInspect { hex } => tag_inspect(&hex),
    }
}

fn simulate(n: u32, m: u32, budgets: &[f64], trials: u32, seed: u64) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{OUTCOME_CSV_HEADER}")?;
    for &b in budgets {
        let b = Fixed::try_from_f64(b).with_context(|| format!("bad budget {b}"))?;
        let params = SimParams { n, m, b, trials, seed };
        let outcome = sim::run_experiment(&params)?;
        writeln!(out, "{}", outcome.csv_row(&params))?;
    }
    print!("{out}");
    Ok(())
}

/// One simulate CSV row, keyed for grouping.
struct MedianPoint {
    n: u32,
    m: u32,
    b: f64,
    median: f64,
}

fn parse_outcome_csv(text: &str) -> Result<Vec<MedianPoint>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == OUTCOME_CSV_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != OUTCOME_CSV_HEADER.split(',').count() {
            bail!("line {}: expected {} fields", lineno + 1, 10);
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .with_context(|| format!("line {}: bad {name} value {:?}", lineno + 1, fields[idx]))
        };
        points.push(MedianPoint {
            n: parse(0, "n")? as u32,
            m: parse(1, "m")? as u32,
            b: parse(2, "b")?,
            median: parse(4, "median")?,
        });
    }
    if points.is_empty() {
        bail!("no data rows found");
    }
    Ok(points)
}

fn fit(input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let points = parse_outcome_csv(&text)?;
    let groups: BTreeSet<(u32, u32)> = points.iter().map(|p| (p.n, p.m)).collect();
    let mut out = String::new();
    writeln!(out, "{TREND_CSV_HEADER}")?;
    for (n, m) in groups {
        let series: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| (p.n, p.m) == (n, m))
            .map(|p| (p.b, p.median))
            .collect();
        let fit = sim::fit_trend(&series)
            .with_context(|| format!("fitting the n={n}, m={m} series"))?;
        writeln!(out, "{}", fit.csv_row(n, m))?;
    }
    print!("{out}");
    Ok(())
}

fn parse_trend_csv(text: &str, n: u32, m: u32) -> Result<TrendFit> {
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == TREND_CSV_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != TREND_CSV_HEADER.split(',').count() {
            bail!("trend row has {} fields, expected 6", fields.len());
        }
        if fields[0].parse::<u32>() == Ok(n) && fields[1].parse::<u32>() == Ok(m) {
            return Ok(TrendFit {
                amplitude: fields[2].parse().context("bad amplitude")?,
                rate: fields[3].parse().context("bad rate")?,
                r_squared_log: fields[4].parse().context("bad r_squared_log")?,
                r_squared_linear: fields[5].parse().context("bad r_squared_linear")?,
            });
        }
    }
    bail!("no trend row for n={n}, m={m}");
}

fn format_duration(seconds: f64) -> String {
    const MINUTE: f64 = 60.0;
    const HOUR: f64 = 3_600.0;
    const DAY: f64 = 86_400.0;
    const YEAR: f64 = 365.25 * DAY;
    if seconds < 2.0 * MINUTE {
        format!("{seconds:.1} seconds")
    } else if seconds < 2.0 * HOUR {
        format!("{:.1} minutes", seconds / MINUTE)
    } else if seconds < 2.0 * DAY {
        format!("{:.1} hours", seconds / HOUR)
    } else if seconds < 2.0 * YEAR {
        format!("{:.1} days", seconds / DAY)
    } else {
        format!("{:.1} years", seconds / YEAR)
    }
}

fn resistance(n: u32, m: u32, k: f64, alpha: f64, rate: f64, fit: Option<&Path>) -> Result<()> {
    let (trend, label) = match fit {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            (parse_trend_csv(&text, n, m)?, format!("fit from {}", path.display()))
        }
        None => {
            let published = reference::published_fit(n).with_context(|| {
                format!("no built-in constants for n={n}; run simulate + fit and pass --fit")
            })?;
            if published.m != m {
                bail!(
                    "built-in constants for n={n} were measured at m={}; \
                     run simulate + fit for m={m} and pass --fit",
                    published.m
                );
            }
            (published.trend(), "published reference constants".to_string())
        }
    };
    println!(
        "constants: {label} (n={n}, m={m}): amplitude={}, rate={}",
        trend.amplitude, trend.rate
    );
    let query = ResistanceQuery { n, m, k, alpha, rate };
    match sim::resistance(&query, &trend)? {
        Resistance::Unbounded => {
            println!("adversary sends no requests: the fleet is never compromised");
        }
        Resistance::Bounded(seconds) => {
            println!("cleanse budget per adversarial request: b = k/alpha = {}", k / alpha);
            if seconds < 120.0 {
                println!("expected time to full compromise: {seconds:.2} seconds");
            } else {
                println!(
                    "expected time to full compromise: {seconds:.2} seconds ({})",
                    format_duration(seconds)
                );
            }
        }
    }
    Ok(())
}

fn scenario(config: &Path, script: &Path, seed: u64, csv: bool, dump_store: bool) -> Result<()> {
    let config = SystemConfig::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    let scenario = Scenario::load(script)
        .with_context(|| format!("loading scenario {}", script.display()))?;
    let report = harness::run_scenario(&config, &scenario, seed)?;
    if csv {
        println!("{}", harness::METRICS_CSV_HEADER);
        println!("{}", report.metrics.csv_row());
    } else {
        println!("{}", report.metrics);
        println!("store writes          {}", report.store.len());
    }
    if dump_store {
        println!("id,position,sql");
        for entry in report.store.log() {
            println!("{},{},{}", entry.id, entry.position, entry.sql_text);
        }
    }
    Ok(())
}

fn tag_inspect(hex_text: &str) -> Result<()> {
    let bytes = hex::decode(hex_text.trim()).context("not valid hex")?;
    if bytes.len() != OPTION_LEN {
        bail!("expected {OPTION_LEN} bytes, got {}", bytes.len());
    }
    let tag = decode_option(&bytes)?;
    println!("id:  {} (0x{:08x})", tag.id, tag.id);
    println!("mac: {}", hex::encode(tag.mac));
    Ok(())
}
