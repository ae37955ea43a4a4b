use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE_RUN: &str = r#"{
  "model": {"type": "lognormal", "s0": 100, "r": 0.05, "sigma": 0.2, "t": 0.25},
  "payoff": {"type": "variance_swap"},
  "replication": {"n": 18, "x0": 45, "xn": 140}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_static-repl"));
    c.env_remove("STATIC_REPL_THREADS");
    c
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, BASE_RUN).unwrap();
    (dir, cfg)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn replicate_reproduces_the_table_configuration() {
    let (dir, cfg) = setup();
    let (csv, json, grid) = (dir.path().join("p.csv"), dir.path().join("r.json"), dir.path().join("g.csv"));
    let out = run(bin()
        .args(["replicate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .arg("--json")
        .arg(&json)
        .arg("--emit-grid")
        .arg(&grid));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&json);
    let v = report["report"]["replication_value"].as_f64().unwrap();
    assert!((v - 4.1122).abs() < 0.05, "{v}");
    assert!((report["report"]["true_value"].as_f64().unwrap() - 4.0123).abs() < 1e-4);
    assert_eq!(csv_rows(&grid).len(), 19);
    assert!(String::from_utf8_lossy(&out.stdout).contains("replication       4.1"));

    // the written portfolio prices back to the reported value
    let priced = dir.path().join("price.json");
    let out = run(bin()
        .args(["price", "--config"])
        .arg(&cfg)
        .arg("--portfolio")
        .arg(&csv)
        .arg("--json")
        .arg(&priced));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let p = read_json(&priced);
    assert!((p["portfolio_value"].as_f64().unwrap() - v).abs() < 1e-12);
}

#[test]
fn missing_model_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"payoff": {"type": "variance_swap"}}"#).unwrap();
    let out = run(bin().args(["replicate", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`model`"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_and_bad_values_exit_two() {
    let (_dir, cfg) = setup();
    for set in ["replication.bogus=1", "model.sigma=-0.2", "replication.x0=500", "payoff.type=digital"] {
        let out = run(bin().args(["replicate", "--config"]).arg(&cfg).args(["--set", set]));
        assert_eq!(code(&out), 2, "{set}: {}", stderr(&out));
    }
    let out = run(bin().args(["replicate", "--config", "/nonexistent/run.json"]));
    assert_eq!(code(&out), 2);
}

#[test]
fn dry_run_prints_resolved_config_without_computing() {
    let (dir, cfg) = setup();
    let csv = dir.path().join("p.csv");
    let out = run(bin()
        .args(["replicate", "--dry-run", "--set", "replication.n=40", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv));
    assert_eq!(code(&out), 0);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["replication"]["n"], 40);
    assert_eq!(printed["replication"]["gamma_exponent"], 0.4);
    assert!(!csv.exists());
}

#[test]
fn converge_table_has_rates_near_two() {
    let (dir, cfg) = setup();
    let (csv, json) = (dir.path().join("c.csv"), dir.path().join("c.json"));
    let out = run(bin()
        .args(["converge", "--set", "replication.xn=200", "--n-list", "20,40,80,160,320,640", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .arg("--json")
        .arg(&json));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][3], "");
    for row in &rows[1..] {
        let p = num(&row[3]);
        assert!((1.7..=2.4).contains(&p), "{p}");
    }

    // CSV and JSON carry the same numbers to at least 10 significant digits
    let report = read_json(&json);
    for (row, j) in rows.iter().zip(report["rows"].as_array().unwrap()) {
        for (text, key) in [(&row[1], "total_replication_value"), (&row[2], "error")] {
            let (a, b) = (num(text), j[key].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{key}: {a} vs {b}");
        }
    }
}

#[test]
fn converge_single_and_uneven_lists() {
    let (dir, cfg) = setup();
    let csv = dir.path().join("c.csv");
    let out = run(bin().args(["converge", "--n-list", "30", "--config"]).arg(&cfg).arg("--out").arg(&csv));
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][3], "");

    let out = run(bin().args(["converge", "--n-list", "20,30,70", "--config"]).arg(&cfg).arg("--out").arg(&csv));
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&csv);
    for w in rows.windows(2) {
        let (n1, e1, n2, e2) = (num(&w[0][0]), num(&w[0][2]), num(&w[1][0]), num(&w[1][2]));
        let expected = (e1.abs() / e2.abs()).ln() / (n2 / n1).ln();
        assert!((num(&w[1][3]) - expected).abs() < 1e-12);
    }

    let out = run(bin().args(["converge", "--n-list", "40,20", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 2);
}

#[test]
fn quad_hedge_reproduces_the_hedge_table() {
    let (dir, cfg) = setup();
    let csv = dir.path().join("q.csv");
    let out = run(bin()
        .args([
            "quad-hedge",
            "--strikes",
            "50,70,90,100,110,130",
            "--set",
            "quad_hedge.u_method=replication",
            "--set",
            "quad_hedge.replication_intervals=80",
            "--set",
            "quad_hedge.replication_upper=200",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[6][0], "total");
    assert!((num(&rows[6][3]) - 4.0224).abs() < 0.005);
    assert!((num(&rows[3][2]) - 4.6150).abs() < 2e-4);
    let cost: f64 = rows[..6].iter().map(|r| num(&r[3])).sum();
    assert!((cost - num(&rows[6][3])).abs() < 1e-10);
}

#[test]
fn quad_hedge_of_a_call_holds_the_call() {
    let (_dir, cfg) = setup();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("q.json");
    let out = run(bin()
        .args([
            "quad-hedge",
            "--strikes",
            "100",
            "--set",
            "payoff.type=call",
            "--set",
            "payoff.strike=100",
            "--set",
            "replication.notional=1",
            "--config",
        ])
        .arg(&cfg)
        .arg("--json")
        .arg(&json));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let w = read_json(&json)["weights"][0].as_f64().unwrap();
    assert!((w - 1.0).abs() < 1e-6, "{w}");
}

#[test]
fn duplicate_strikes_are_a_numeric_error() {
    let (_dir, cfg) = setup();
    let out = run(bin().args(["quad-hedge", "--strikes", "90,100,100,110", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let out = run(bin().args(["quad-hedge", "--strikes", "100,90", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 2);
}

#[test]
fn strict_mode_fails_on_unconverged_strikes() {
    let (_dir, cfg) = setup();
    let args = ["replicate", "--set", "replication.max_iterations=1", "--config"];
    let lax = run(bin().args(args).arg(&cfg));
    assert_eq!(code(&lax), 0);
    assert!(stderr(&lax).contains("warning"));
    let strict = run(bin().args(args).arg(&cfg).arg("--strict"));
    assert_eq!(code(&strict), 4);
}

#[test]
fn outputs_are_byte_identical_on_rerun() {
    let (dir, cfg) = setup();
    let (a, b) = (dir.path().join("p.csv"), dir.path().join("r.json"));
    let files = || {
        let out = run(bin()
            .args(["replicate", "--set", "payoff.type=swaption", "--set", "payoff.k=0.01", "--set", "payoff.side=put", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&a)
            .arg("--json")
            .arg(&b));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (fs::read(&a).unwrap(), fs::read(&b).unwrap())
    };
    let first = files();
    assert_eq!(first, files());
}

#[test]
fn monte_carlo_is_reproducible_across_thread_counts() {
    let (dir, cfg) = setup();
    let estimate = |threads: Option<&str>, tag: &str| {
        let json = dir.path().join(format!("{tag}.json"));
        let mut cmd = bin();
        if let Some(t) = threads {
            cmd.env("STATIC_REPL_THREADS", t);
        }
        let out = run(cmd.args(["mc", "--paths", "200000", "--seed", "17", "--config"]).arg(&cfg).arg("--json").arg(&json));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read_to_string(json).unwrap()
    };
    let a = estimate(None, "a");
    assert_eq!(a, estimate(Some("1"), "b"));
    assert_eq!(a, estimate(Some("3"), "c"));
    let v: Value = serde_json::from_str(&a).unwrap();
    let (mean, se) = (v["estimate"]["mean"].as_f64().unwrap(), v["estimate"]["std_error"].as_f64().unwrap());
    let reference = v["quadrature_value"].as_f64().unwrap();
    assert!((mean - reference).abs() < 3.0 * se, "{mean} {se} {reference}");

    let out = run(bin().env("STATIC_REPL_THREADS", "zero").args(["mc", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 2);
}

#[test]
fn portfolio_json_twin_prices_like_the_csv() {
    let (dir, cfg) = setup();
    let (csv, json) = (dir.path().join("p.csv"), dir.path().join("r.json"));
    let out = run(bin().args(["replicate", "--config"]).arg(&cfg).arg("--out").arg(&csv).arg("--json").arg(&json));
    assert_eq!(code(&out), 0);
    let twin = dir.path().join("p.json");
    fs::write(&twin, read_json(&json)["portfolio"].to_string()).unwrap();
    let value = |path: &Path| {
        let out = run(bin().args(["price", "--config"]).arg(&cfg).arg("--portfolio").arg(path));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(value(&csv), value(&twin));
}

#[test]
fn counterparty_model_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cp.json");
    fs::write(
        &cfg,
        r#"{"model": {"type": "counterparty", "r": 0.05, "sigma1": 0.3, "sigma2": 0.3,
            "lambda": 0.1, "jump_fractions": [0.5], "jump_probs": [1.0], "t": 1.0},
            "replication": {"n": 40, "x0": 5, "xn": 400}}"#,
    )
    .unwrap();
    let json = dir.path().join("r.json");
    let out = run(bin().args(["replicate", "--config"]).arg(&cfg).arg("--json").arg(&json));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&json);
    let (rep, truth) = (
        r["report"]["replication_value"].as_f64().unwrap(),
        r["report"]["true_value"].as_f64().unwrap(),
    );
    assert!(rep > truth && (rep - truth) / truth < 0.01, "{rep} {truth}");
}
