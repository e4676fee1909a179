//! The `dualpool` binary: exit codes, outputs and memory inspection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualpool::memory::AgentId;
use dualpool::memory::DualPoolMemory;
use dualpool::router::RouterState;
use dualpool::store::save_store;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dualpool"));
    c.env_remove("DUALPOOL_OUT");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn smoke(out: &Path) -> Output {
    run(&["sim", "run", "--config", example("smoke.toml").to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn smoke_run_writes_five_trace_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoke(dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&dir.path().join("tasks.csv")), 5);
    assert_eq!(csv_rows(&dir.path().join("router_trace.csv")), 5);
    assert_eq!(csv_rows(&dir.path().join("weights.csv")), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["tasks_per_run"], 5);
    assert_eq!(summary["modes"][0]["cumulative_accuracy"].as_array().unwrap().len(), 5);
}

#[test]
fn same_seed_gives_byte_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(smoke(a.path()).status.success());
    assert!(smoke(b.path()).status.success());
    for f in ["tasks.csv", "router_trace.csv", "weights.csv", "summary.json", "manifest.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config_and_is_echoed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = example("smoke.toml");
    assert!(smoke(a.path()).status.success());
    let o = run(&["sim", "run", "--config", cfg.to_str().unwrap(), "--seed", "12345", "--out", b.path().to_str().unwrap()]);
    assert!(o.status.success());
    let manifest = fs::read_to_string(b.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 12345"), "{manifest}");
    assert_ne!(
        fs::read(a.path().join("tasks.csv")).unwrap(),
        fs::read(b.path().join("tasks.csv")).unwrap()
    );
}

#[test]
fn out_dir_comes_from_the_environment_when_no_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["sim", "run", "--config", example("smoke.toml").to_str().unwrap()])
        .env("DUALPOOL_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("tasks.csv").is_file());
}

#[test]
fn out_of_range_tau_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[retrieval]\ntau = 1.5\n").unwrap();
    let o = run(&["sim", "run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("retrieval.tau"), "{err}");
    assert!(!dir.path().join("tasks.csv").exists());
}

#[test]
fn unknown_key_exits_2_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n\n[router]\nincrment = 0.5\n").unwrap();
    let o = run(&["sim", "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("incrment") && err.contains("line 4"), "{err}");
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = run(&["theory", "wander", "--config", "x.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["replay"]).status.code(), Some(2));
}

#[test]
fn theory_subcommands_pass_with_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example("theory.toml");
    for sub in ["reach", "regret"] {
        let o = run(&["theory", sub, "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        let text = String::from_utf8_lossy(&o.stdout);
        assert_eq!(o.status.code(), Some(0), "{sub}: {text}");
        assert!(!text.contains("FAIL"), "{text}");
    }
    assert!(dir.path().join("reach.json").is_file());
    assert_eq!(csv_rows(&dir.path().join("reach.csv")), 100);
    assert!(fs::read_to_string(dir.path().join("manifest.toml")).unwrap().contains("[theory.regret]"));
    assert!(csv_rows(&dir.path().join("regret_trace.csv")) > 60);
}

#[test]
fn failing_verdict_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    // No online run can reach zero regret.
    fs::write(&cfg, "[theory.regret]\nseeds = 4\nhorizon = 10000\nmid_start = 100\nsplit = 1000\nmax_regret_fraction = 0.0\n").unwrap();
    let o = run(&["theory", "regret", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

fn inspect(store: &Path, validate: bool) -> Output {
    let mut args = vec!["memory", "inspect", store.to_str().unwrap()];
    if validate {
        args.push("--validate");
    }
    run(&args)
}

fn field(stdout: &str, name: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name} ")))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
        .to_string()
}

#[test]
fn inspect_sizes_match_the_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smoke(dir.path()).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let store = dir.path().join("memory/online-seed7/agent-0.jsonl");
    let o = inspect(&store, true);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    let e: f64 = field(&out, "e_pool").parse().unwrap();
    assert_eq!(e, summary["modes"][0]["mean_e_pool"].as_f64().unwrap());
    assert_eq!(field(&out, "x_pool"), "0");
    let w: f64 = field(&out, "w_e").parse().unwrap();
    assert_eq!(w, summary["modes"][0]["mean_final_w_e"].as_f64().unwrap());
    // The last weights.csv row is the same agent after the last task.
    let mut rdr = csv::Reader::from_path(dir.path().join("weights.csv")).unwrap();
    let last = rdr.records().last().unwrap().unwrap();
    assert_eq!(last[6].parse::<f64>().unwrap(), e);
}

#[test]
fn corrupted_record_is_named_by_validate() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smoke(dir.path()).status.success());
    let store = dir.path().join("memory/online-seed7/agent-0.jsonl");
    let text = fs::read_to_string(&store).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 3, "smoke store too small");
    lines[2] = "{\"pool\": \"e\", \"piece\": {\"id\": 17";
    fs::write(&store, lines.join("\n") + "\n").unwrap();
    let o = inspect(&store, true);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("record 3"), "{err}");
    // Without --validate the load error also names the record.
    let o = inspect(&store, false);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("record 3"));
}

#[test]
fn empty_store_reports_zero_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("agent-4.jsonl");
    save_store(&DualPoolMemory::new(AgentId(4), RouterState::default()), &store).unwrap();
    assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 1);
    let o = inspect(&store, true);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(field(&out, "e_pool"), "0");
    assert_eq!(field(&out, "x_pool"), "0");
    assert_eq!(field(&out, "agent"), "agent-4");
}

#[test]
fn missing_store_exits_1() {
    let o = inspect(Path::new("/nonexistent/agent-0.jsonl"), false);
    assert_eq!(o.status.code(), Some(1));
}
