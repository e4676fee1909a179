//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure or failed verdict, 2 configuration or usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::{run_all, write_outputs};
use crate::router::RoutingMode;
use crate::store::{load_store, validate_store};
use crate::theory::{run_reach_suite, run_regret_suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Overrides the output directory of every subcommand; `--out` still wins.
pub const ENV_OUT: &str = "DUALPOOL_OUT";

#[derive(Debug, Parser)]
#[command(name = "dualpool", version, about = "Dual-pool memory agents: simulation, theory checks, memory tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulation runs over the synthetic environment.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Numerical checks of reachability and routing regret.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Memory store tools.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Runs every configured routing mode and seed and writes traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Base seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TheoryCommand {
    Reach {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Regret {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum MemoryCommand {
    /// Prints pool sizes, router weight and the best pieces of a store.
    Inspect {
        store: PathBuf,
        /// Re-check every record against the store invariants.
        #[arg(long)]
        validate: bool,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| cfg.out_dir.clone())
}

fn load(path: &Path) -> Result<RunConfig, i32> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), i32> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_RUNTIME
    })
}

fn write_manifest(out: &Path, cfg: &RunConfig) -> Result<(), i32> {
    fs::create_dir_all(out).map_err(|e| {
        eprintln!("error: {}: {e}", out.display());
        EXIT_RUNTIME
    })?;
    let path = out.join("manifest.toml");
    fs::write(&path, format!("{}{}", crate::experiment::MANIFEST_HEADER, cfg.to_toml())).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_RUNTIME
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), i32> {
    let write = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_RUNTIME
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn sim_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<i32, i32> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out_dir(out, &cfg);
    let runs = run_all(&cfg).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })?;
    let summary = write_outputs(&cfg, &runs, &out).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })?;
    for m in &summary.modes {
        println!(
            "{:<12} success {:.3}  first quarter {:.3}  last quarter {:.3}  E-pool {:.1}  w_e {:.2}",
            m.mode, m.mean_success, m.first_quarter, m.last_quarter, m.mean_e_pool, m.mean_final_w_e
        );
    }
    for c in &summary.comparisons {
        if let Some(t) = &c.test {
            println!("{} vs {}: diff {:+.4}  p {:.4}", c.mode, c.baseline, t.mean_difference, t.p_value);
        }
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn theory_reach(config: &Path, out: Option<PathBuf>) -> Result<i32, i32> {
    let cfg = load(config)?;
    let rc = &cfg.theory.reach;
    let out = out_dir(out, &cfg);
    let report = run_reach_suite(rc).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })?;
    write_manifest(&out, &cfg)?;
    write_json(&out.join("reach.json"), &report)?;
    write_csv(&out.join("reach.csv"), &report.instances)?;
    let passed = report.instances.iter().filter(|i| i.pass).count();
    println!("{} {passed}/{} random instances globally reachable", verdict(report.instances_pass()), report.instances.len());
    for i in report.instances.iter().filter(|i| !i.pass) {
        println!(
            "  instance {}: n={} alpha={:.4} min entry {:.3e} bound {:.3e} start tv {:.3e}",
            i.index, i.states, i.alpha, i.min_entry, i.bound, i.start_tv
        );
    }
    println!(
        "{} swap at alpha=1 flagged (expected fail): period {:?}, verdict {:?}",
        verdict(report.swap.period == Some(2) && !report.swap.passes()),
        report.swap.period,
        report.swap.verdict
    );
    println!(
        "{} block-diagonal at alpha=1 traps (expected fail): tv {:.4}, verdict {:?}",
        verdict(report.trapped_tv >= rc.trap_tv && !report.trapped.passes()),
        report.trapped_tv,
        report.trapped.verdict
    );
    Ok(if report.pass(rc) { EXIT_OK } else { EXIT_RUNTIME })
}

#[derive(Serialize)]
struct TraceCsvRow {
    t: u64,
    online_regret: f64,
    online_alpha: f64,
    online_sq_error: f64,
    baseline_regret: f64,
}

fn theory_regret(config: &Path, out: Option<PathBuf>) -> Result<i32, i32> {
    let cfg = load(config)?;
    let rc = &cfg.theory.regret;
    let out = out_dir(out, &cfg);
    let report = run_regret_suite(rc).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })?;
    let v = report.verdicts(rc);
    write_manifest(&out, &cfg)?;
    write_csv(
        &out.join("regret_trace.csv"),
        report.online.points.iter().zip(&report.baseline.points).map(|(o, b)| TraceCsvRow {
            t: o.t,
            online_regret: o.regret,
            online_alpha: o.alpha,
            online_sq_error: o.sq_error,
            baseline_regret: b.regret,
        }),
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        scaled_mse_mid: f64,
        scaled_mse_tail: f64,
        mse_ratio: f64,
        growth_ratio: f64,
        fit: &'a crate::theory::regret::LogFit,
        baseline_growth_ratio: f64,
        baseline_fit: &'a crate::theory::regret::LogFit,
        regret_fraction: f64,
        verdicts: crate::theory::RegretVerdicts,
    }
    write_json(
        &out.join("regret.json"),
        &Summary {
            scaled_mse_mid: report.scaled_mse_mid,
            scaled_mse_tail: report.scaled_mse_tail,
            mse_ratio: report.mse_ratio(),
            growth_ratio: report.growth_ratio,
            fit: &report.fit,
            baseline_growth_ratio: report.baseline_growth_ratio,
            baseline_fit: &report.baseline_fit,
            regret_fraction: report.regret_fraction,
            verdicts: v,
        },
    )?;

    let baseline = RoutingMode::Fixed { alpha: rc.baseline_alpha }.label();
    println!("{} scaled MSE tail/mid {:.3} (max {})", verdict(v.mse_no_upward_trend), report.mse_ratio(), rc.max_mse_ratio);
    println!("{} online R(T)/R(T/10) {:.3} (max {})", verdict(v.log_like_growth), report.growth_ratio, rc.max_growth_ratio);
    println!(
        "{} online log fit relative residual {:.4} (max {})",
        verdict(v.log_fit),
        report.fit.relative_residual,
        rc.max_relative_residual
    );
    println!(
        "{} {baseline} flagged linear: R(T)/R(T/10) {}, log-fit residual {:.4}",
        verdict(v.baseline_linear),
        report.baseline_growth_ratio,
        report.baseline_fit.relative_residual
    );
    println!(
        "{} online regret is {:.2e} of the baseline's (max {})",
        verdict(v.separation),
        report.regret_fraction,
        rc.max_regret_fraction
    );
    Ok(if v.all() { EXIT_OK } else { EXIT_RUNTIME })
}

fn memory_inspect(store: &Path, validate: bool, top: usize) -> Result<i32, i32> {
    if validate {
        let issues = validate_store(store).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        })?;
        for i in &issues {
            eprintln!("record {}: {}", i.record, i.message);
        }
        if !issues.is_empty() {
            eprintln!("{}: {} invalid record(s)", store.display(), issues.len());
            return Ok(EXIT_RUNTIME);
        }
    }
    let m = load_store(store).map_err(|e| {
        eprintln!("error: {}: {e}", store.display());
        EXIT_RUNTIME
    })?;
    println!("agent {}", m.agent_id());
    println!("e_pool {}", m.e_pool().len());
    println!("x_pool {}", m.x_pool().len());
    println!("w_e {}", m.router.w_e);
    println!("alpha {:.4}", m.router.selection_prob());
    let mut pieces: Vec<_> = m.e_pool().iter().chain(m.x_pool()).collect();
    pieces.sort_by(|a, b| b.quality.total_cmp(&a.quality).then(a.created_at.cmp(&b.created_at)));
    for p in pieces.iter().take(top) {
        println!("  {:>5.2}  {}  {}", p.quality, p.id, p.context_prototype);
    }
    if validate {
        println!("valid");
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Sim {
            command: SimCommand::Run { config, seed, out },
        } => sim_run(&config, seed, out),
        Command::Theory { command } => match command {
            TheoryCommand::Reach { config, out } => theory_reach(&config, out),
            TheoryCommand::Regret { config, out } => theory_regret(&config, out),
        },
        Command::Memory {
            command: MemoryCommand::Inspect { store, validate, top },
        } => memory_inspect(&store, validate, top),
    };
    result.unwrap_or_else(|code| code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["dualpool", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["dualpool", "theory", "sideways", "--config", "x.toml"]), EXIT_USAGE);
        assert_eq!(run(["dualpool", "sim", "run"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["dualpool", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_exits_2() {
        assert_eq!(run(["dualpool", "sim", "run", "--config", "/nonexistent/run.toml"]), EXIT_USAGE);
    }

    #[test]
    fn missing_store_exits_1() {
        assert_eq!(run(["dualpool", "memory", "inspect", "/nonexistent/agent-0.jsonl"]), EXIT_RUNTIME);
    }
}
