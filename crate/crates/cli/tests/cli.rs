use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invplan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small but complete run configuration next to the data it writes.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("config.json");
    let text = format!(
        r#"{{
  "out": "run",
  "sales": "run/sales.csv",
  "flags": "run/in_stock.csv",
  "inventory": "run/inventory.csv",
  "synth": {{"n_items": 24, "n_weeks": 100}},
  "hpo": {{"trials": 2}},
  "train": {{"max_iterations": 60, "early_stopping_rounds": 15}}{extra}
}}"#
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_workflow_writes_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(run(&["--config", s(&cfg), "--seed", "5", "synth"]));
    ok(run(&["--config", s(&cfg), "ingest"]));
    ok(run(&["--config", s(&cfg), "features"]));
    ok(run(&["--config", s(&cfg), "--seed", "5", "calibrate"]));
    ok(run(&["--config", s(&cfg), "--seed", "5", "train"]));
    ok(run(&["--config", s(&cfg), "forecast"]));
    ok(run(&["--config", s(&cfg), "--seed", "5", "backtest"]));
    for f in [
        "diagnostics.json",
        "validation.json",
        "features.csv",
        "calibration.json",
        "model_h1.json",
        "model_h3.json",
        "forecasts.csv",
        "orders.csv",
        "benchmark_orders.csv",
        "backtest_report.json",
        "policy_episode.csv",
        "benchmark_episode.csv",
        "manifest_backtest.json",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }

    let manifest = read_json(&run_dir.join("manifest_backtest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "backtest");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    let report_digest = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["path"] == "backtest_report.json")
        .unwrap()["sha256"]
        .clone();

    // Same config and seed with one worker thread: byte-identical report.
    let again = dir.path().join("again");
    ok(run(&[
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--threads",
        "1",
        "--out",
        s(&again),
        "backtest",
    ]));
    assert_eq!(
        fs::read(run_dir.join("backtest_report.json")).unwrap(),
        fs::read(again.join("backtest_report.json")).unwrap()
    );
    let m2 = read_json(&again.join("manifest_backtest.json"));
    assert_eq!(m2["outputs"][0]["sha256"], report_digest);

    ok(run(&[
        "--config",
        s(&cfg),
        "compare",
        "--reports",
        s(&run_dir.join("benchmark_episode.csv")),
        s(&run_dir.join("policy_episode.csv")),
    ]));
    let cmp = read_json(&run_dir.join("compare.json"));
    let report = read_json(&run_dir.join("backtest_report.json"));
    let delta = cmp[1]["reduction_vs_first_pct"].as_f64().unwrap();
    assert!((delta - report["cost_reduction_pct"].as_f64().unwrap()).abs() < 1e-6);
}

fn write_sheet(path: &Path, rows: &[(String, String)], week: usize, qty: i64) {
    let mut text = String::from("Store,Product,decision_week,order_qty\n");
    for (st, pr) in rows {
        text.push_str(&format!("{st},{pr},{week},{qty}\n"));
    }
    fs::write(path, text).unwrap();
}

fn items_of(sales: &Path) -> Vec<(String, String)> {
    let mut r = csv::Reader::from_path(sales).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[1].to_string())
        })
        .collect()
}

#[test]
fn zero_orders_from_empty_stock_cost_all_demand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(run(&["--config", s(&cfg), "synth"]));
    let items = items_of(&run_dir.join("sales.csv"));
    let empty = dir.path().join("empty.csv");
    let mut inv = String::from("Store,Product,on_hand,arrive_w1,arrive_w2\n");
    for (st, pr) in &items {
        inv.push_str(&format!("{st},{pr},0,0,0\n"));
    }
    fs::write(&empty, inv).unwrap();
    let sheets: Vec<PathBuf> = (0..6)
        .map(|r| {
            let p = dir.path().join(format!("orders_{r}.csv"));
            write_sheet(&p, &items, 80 + r, 0);
            p
        })
        .collect();
    let mut args = vec![
        "--config".to_string(),
        s(&cfg).to_string(),
        "--inventory".to_string(),
        s(&empty).to_string(),
        "simulate".to_string(),
        "--first-week".to_string(),
        "80".to_string(),
        "--orders".to_string(),
    ];
    args.extend(sheets.iter().map(|p| s(p).to_string()));
    ok(bin().args(&args).output().unwrap());
    let summary = read_json(&run_dir.join("simulate_summary.json"));
    assert_eq!(summary["costed_weeks"], 8);
    assert_eq!(summary["first_costed_week"], 81);

    // Oracle: every unit sold in weeks 81..=88 is lost at c_s = 1.
    let mut r = csv::Reader::from_path(run_dir.join("sales.csv")).unwrap();
    let mut demand = 0.0;
    for rec in r.records() {
        let rec = rec.unwrap();
        for w in 81..=88 {
            demand += rec[2 + w].parse::<f64>().unwrap().round();
        }
    }
    assert_eq!(summary["cost"]["total"].as_f64().unwrap(), demand);
    assert_eq!(summary["cost"]["holding"].as_f64().unwrap(), 0.0);
}

#[test]
fn synth_options_behave() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run(&[
        "--config",
        s(&cfg),
        "--seed",
        "9",
        "--out",
        s(&a),
        "synth",
    ]));
    ok(run(&[
        "--config",
        s(&cfg),
        "--seed",
        "9",
        "--out",
        s(&b),
        "synth",
    ]));
    for f in ["sales.csv", "in_stock.csv", "inventory.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }

    let cfg2 = write_config(
        dir.path(),
        r#",
  "synth_override": 0"#,
    );
    // Unknown keys are configuration errors.
    let out = run(&["--config", s(&cfg2), "synth"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(
        &cfg2,
        r#"{"out": "z", "synth": {"n_items": 5, "n_weeks": 30, "stockout_rate": 0.0, "zero_prob_range": [1.0, 1.0]}}"#,
    )
    .unwrap();
    ok(run(&["--config", s(&cfg2), "synth"]));
    let z = dir.path().join("z");
    let flags = fs::read_to_string(z.join("in_stock.csv")).unwrap();
    assert!(!flags.lines().skip(1).any(|l| l.contains("false")));
    let mut r = csv::Reader::from_path(z.join("sales.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        assert!(rec.iter().skip(2).all(|v| v.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run(&[
        "--out",
        s(&dir.path().join("o")),
        "--sales",
        s(&missing),
        "--flags",
        s(&missing),
        "ingest",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["--out", s(&dir.path().join("o")), "ingest"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "missing paths are a config error"
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["--config", s(&bad), "synth"]).status.code(), Some(2));

    let cfg = write_config(dir.path(), "");
    ok(run(&["--config", s(&cfg), "synth"]));
    let sheet = dir.path().join("one.csv");
    write_sheet(&sheet, &items_of(&dir.path().join("run/sales.csv")), 90, 1);
    let out = run(&["--config", s(&cfg), "simulate", "--orders", s(&sheet)]);
    assert_eq!(out.status.code(), Some(2), "one sheet for six rounds");

    // A sheet that misses an item is a data error.
    write_sheet(
        &sheet,
        &items_of(&dir.path().join("run/sales.csv"))[1..],
        90,
        1,
    );
    let sheets: Vec<&str> = std::iter::repeat_n(s(&sheet), 6).collect();
    let mut args = vec!["--config", s(&cfg), "simulate", "--orders"];
    args.extend(sheets);
    assert_eq!(run(&args).status.code(), Some(1));
}
