//! Command-line front end: single runs and parameter sweeps written as CSV.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use csv::{QuoteStyle, WriterBuilder};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{default_scenario, parse_scenario, ScenarioConfig};
use crate::metrics::{LevelRequirement, MetricsStore};
use crate::phy::min_rbs;
use crate::sim::run_scenario;
use crate::{sha256_hex, VehicleId};

/// Environment variable overriding the seed of every command.
pub const SEED_ENV: &str = "LTEV_SEED";

#[derive(Debug, Parser)]
#[command(name = "ltev-sim", version, about = "LTE-V sidelink platooning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write pdr.csv, layer_metrics.csv and platoon.csv.
    Run {
        /// Scenario file; the built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the minimum RBs per (MCS, packet size, interval).
    SweepRb {
        #[arg(long, value_delimiter = ',', required = true)]
        mcs: Vec<u32>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u32>,
        #[arg(long, value_delimiter = ',', required = true)]
        intervals: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario over many seeds, with and/or without shadowing.
    SweepPdr {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        /// First seed; later runs use the following integers.
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = ShadowingArg::Both)]
        shadowing: ShadowingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default scenario file.
    DefaultConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShadowingArg {
    On,
    Off,
    Both,
}

impl ShadowingArg {
    fn settings(self) -> Vec<bool> {
        match self {
            ShadowingArg::On => vec![true],
            ShadowingArg::Off => vec![false],
            ShadowingArg::Both => vec![false, true],
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(err.into())
}

/// Formats `x` with 6 significant digits in fixed notation.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let decimals = |v: f64| (5 - v.abs().log10().floor() as i32).max(0) as usize;
    let mut d = decimals(x);
    let rounded: f64 = format!("{x:.d$}").parse().expect("formatted float parses");
    // rounding may add a digit, e.g. 9.999999 -> 10.0000
    if rounded != 0.0 && decimals(rounded) < d {
        d = decimals(rounded);
    }
    format!("{x:.d$}")
}

/// Joinable identifier of a (configuration, seed) pair.
pub fn scenario_id(cfg: &ScenarioConfig, seed: u64) -> String {
    let mut text = cfg.render();
    text.push_str(&seed.to_string());
    sha256_hex(text.as_bytes())[..12].to_string()
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    let cfg = match path {
        None => default_scenario(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_scenario(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = WriterBuilder::new()
        .quote_style(QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(runtime)?;
    for row in rows {
        w.write_record(row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display())))
}

fn on_off(shadowing: bool) -> &'static str {
    if shadowing {
        "on"
    } else {
        "off"
    }
}

fn pdr_rows(id: &str, store: &MetricsStore) -> Result<Vec<Vec<String>>, CliError> {
    store
        .followers()
        .map(|v| {
            let link = store.link(VehicleId::new(1), v);
            let (tx, rx) = link.map_or((0, 0), |l| (l.tx_count, l.rx_count));
            let pdr = store.pdr(v).map_err(runtime)?;
            Ok(vec![
                id.to_string(),
                v.get().to_string(),
                tx.to_string(),
                rx.to_string(),
                fmt_sig6(pdr),
            ])
        })
        .collect()
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed.or(env_seed()?) {
        cfg.seed = s;
    }
    let id = scenario_id(&cfg, cfg.seed);
    let store = run_scenario(&cfg).map_err(runtime)?;
    ensure_dir(out)?;

    write_csv(
        &out.join("pdr.csv"),
        &["scenario_id", "vehicle", "tx", "rx", "pdr"],
        &pdr_rows(&id, &store)?,
    )?;

    let mut layer_rows = Vec::new();
    for v in (1..=cfg.n_vehicles).map(VehicleId::new) {
        for p in store.layer_profile(v) {
            layer_rows.push(vec![
                id.clone(),
                v.get().to_string(),
                p.layer.name().to_string(),
                fmt_sig6(p.mean_delay_ms),
                fmt_sig6(p.p95_delay_ms),
                fmt_sig6(p.throughput_kbps),
            ]);
        }
    }
    write_csv(
        &out.join("layer_metrics.csv"),
        &[
            "scenario_id",
            "vehicle",
            "layer",
            "mean_delay_ms",
            "p95_delay_ms",
            "throughput_kbps",
        ],
        &layer_rows,
    )?;

    let platoon_rows: Vec<Vec<String>> = LevelRequirement::ALL
        .iter()
        .map(|req| {
            vec![
                id.clone(),
                on_off(cfg.shadowing_enabled).to_string(),
                req.level.name().to_string(),
                store.platoon_length(req).to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("platoon.csv"),
        &["scenario_id", "shadowing", "level", "length"],
        &platoon_rows,
    )?;

    let manifest = format!(
        "config_hash={}\nseed={}\nscenario_id={}\n",
        store.config_hash, cfg.seed, id
    );
    fs::write(out.join("manifest.txt"), manifest).map_err(runtime)?;
    Ok(())
}

fn cmd_sweep_rb(mcs: &[u32], sizes: &[u32], intervals: &[u32], out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &m in mcs {
        for &size in sizes {
            let rbs = min_rbs(m, size).map_err(|e| usage(e.to_string()))?;
            for &interval in intervals {
                rows.push(vec![
                    m.to_string(),
                    size.to_string(),
                    interval.to_string(),
                    rbs.to_string(),
                ]);
            }
        }
    }
    ensure_dir(out)?;
    write_csv(
        &out.join("rb_sweep.csv"),
        &["mcs", "size_bytes", "interval_ms", "min_rbs"],
        &rows,
    )
}

/// Outcome of one sweep point.
struct SweepPoint {
    shadowing: bool,
    seed: u64,
    id: String,
    store: MetricsStore,
}

fn cmd_sweep_pdr(
    config: Option<&Path>,
    seeds: u64,
    base_seed: Option<u64>,
    shadowing: ShadowingArg,
    out: &Path,
) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cfg = load_config(config)?;
    let base = match base_seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(cfg.seed),
    };
    let jobs: Vec<ScenarioConfig> = shadowing
        .settings()
        .into_iter()
        .flat_map(|on| {
            let cfg = &cfg;
            (base..base + seeds).map(move |seed| ScenarioConfig {
                shadowing_enabled: on,
                seed,
                ..cfg.clone()
            })
        })
        .collect();

    let mut points: Vec<SweepPoint> = jobs
        .par_iter()
        .map(|c| {
            run_scenario(c).map(|store| SweepPoint {
                shadowing: c.shadowing_enabled,
                seed: c.seed,
                id: scenario_id(c, c.seed),
                store,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    points.sort_by_key(|p| (p.shadowing, p.seed));

    let mut pdr_rows = Vec::new();
    for p in &points {
        pdr_rows.extend(pdr_rows_for(p)?);
    }

    let mut platoon_rows = Vec::new();
    for on in shadowing.settings() {
        let group: Vec<&SweepPoint> = points.iter().filter(|p| p.shadowing == on).collect();
        let group_cfg = ScenarioConfig {
            shadowing_enabled: on,
            ..cfg.clone()
        };
        let mut text = group_cfg.render();
        text.push_str(&format!("seeds={base}+{seeds}"));
        let id = sha256_hex(text.as_bytes())[..12].to_string();
        for req in &LevelRequirement::ALL {
            let mean = group
                .iter()
                .map(|p| f64::from(p.store.platoon_length(req)))
                .sum::<f64>()
                / group.len() as f64;
            platoon_rows.push(vec![
                id.clone(),
                on_off(on).to_string(),
                req.level.name().to_string(),
                fmt_sig6(mean),
            ]);
        }
    }

    ensure_dir(out)?;
    write_csv(
        &out.join("pdr_sweep.csv"),
        &["scenario_id", "seed", "shadowing", "vehicle", "tx", "rx", "pdr"],
        &pdr_rows,
    )?;
    write_csv(
        &out.join("platoon.csv"),
        &["scenario_id", "shadowing", "level", "length"],
        &platoon_rows,
    )
}

fn pdr_rows_for(p: &SweepPoint) -> Result<Vec<Vec<String>>, CliError> {
    Ok(pdr_rows(&p.id, &p.store)?
        .into_iter()
        .map(|mut row| {
            row.insert(1, p.seed.to_string());
            row.insert(2, on_off(p.shadowing).to_string());
            row
        })
        .collect())
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seed, out } => cmd_run(config.as_deref(), seed, &out),
        Command::SweepRb {
            mcs,
            sizes,
            intervals,
            out,
        } => cmd_sweep_rb(&mcs, &sizes, &intervals, &out),
        Command::SweepPdr {
            config,
            seeds,
            base_seed,
            shadowing,
            out,
        } => cmd_sweep_pdr(config.as_deref(), seeds, base_seed, shadowing, &out),
        Command::DefaultConfig => {
            print!("{}", default_scenario().render());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.9), "0.900000");
        assert_eq!(fmt_sig6(28.8), "28.8000");
        assert_eq!(fmt_sig6(1.0), "1.00000");
        assert_eq!(fmt_sig6(0.0123), "0.0123000");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(9.999999), "10.0000");
        assert_eq!(fmt_sig6(0.0), "0.00000");
    }

    #[test]
    fn scenario_ids_depend_on_seed() {
        let cfg = default_scenario();
        let a = scenario_id(&cfg, 1);
        assert_eq!(a.len(), 12);
        assert_eq!(a, scenario_id(&cfg, 1));
        assert_ne!(a, scenario_id(&cfg, 2));
    }

    #[test]
    fn seeds_zero_is_rejected_by_parser() {
        let err = Cli::try_parse_from(["ltev-sim", "sweep-pdr", "--seeds", "0", "--out", "x"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
