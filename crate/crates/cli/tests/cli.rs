use std::fs;
use std::process::{Command, Output};

use gfbp::pmf::{pmf, pmf_with, PmfConfig};
use gfbp::{OrderSpec, RateModel};
use serde_json::Value;

fn gfbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfbp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(format!(
        "{}/tests/golden/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap()
}

/// `(t, n, p, error_bound)` rows of a pmf CSV.
fn csv_rows(text: &str) -> Vec<(f64, u64, f64, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,n,p,error_bound"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn theta_prints_pattern_set() {
    let out = gfbp(&["theta", "3", "2"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "[[1,1,1],[1,2,0],[2,0,1]]");
}

#[test]
fn pmf_tfpp_gives_poisson_columns() {
    let out = gfbp(&[
        "pmf", "--preset", "tfpp", "--lambda", "1", "--alpha", "1", "--t-grid", "0:2:0.5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&stdout(&out));
    let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    for t in [0.0, 0.5, 1.0, 1.5, 2.0] {
        assert!(times.contains(&t));
    }
    for (t, n, p, _) in rows {
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        let want = (-t).exp() * t.powi(n as i32) / fact;
        assert!((p - want).abs() < 1e-12, "t {t} n {n}: {p} vs {want}");
    }
}

#[test]
fn pmf_gfcp_matches_golden_file_and_library() {
    let args = [
        "pmf",
        "--preset",
        "gfcp",
        "--lambdas",
        "1,3",
        "--alpha",
        "0.5",
        "--t-grid",
        "0:1:0.25",
        "--mass-tol",
        "1e-6",
    ];
    let out = gfbp(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text, golden("gfcp_pmf.csv"));

    let model = RateModel::gfcp(&[1.0, 3.0]).unwrap();
    for (t, n, p, bound) in csv_rows(&text).into_iter().filter(|r| r.1 <= 8) {
        let want = pmf(&model, 0.5, n, t).unwrap();
        assert!(
            (p - want.value).abs() <= bound + want.error_bound + 1e-15,
            "t {t} n {n}: {p} vs {want:?}"
        );
    }
}

#[test]
fn pmf_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("table");
    let out = gfbp(&[
        "pmf",
        "--preset",
        "gfcp",
        "--lambdas",
        "1,3",
        "--alpha",
        "0.5",
        "--t-grid",
        "0.5",
        "--mass-tol",
        "1e-6",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let json = fs::read_to_string(dir.path().join("table.json")).unwrap();
    let table = gfbp::PmfTable::from_json(&json).unwrap();
    assert_eq!(table.to_csv(), csv);
    assert!(table.deficit()[0] <= 1e-6);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("table.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "pmf");
    assert_eq!(manifest["model"]["preset"], "gfcp");
    assert_eq!(manifest["order"], 0.5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert!(manifest["wall_clock_seconds"].is_number());
}

#[test]
fn malformed_model_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"n0\": 1,\n  \"kind\": \n").unwrap();
    let out = gfbp(&[
        "pmf",
        "--model",
        bad.to_str().unwrap(),
        "--alpha",
        "1",
        "--t-grid",
        "0:1:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));

    let out = gfbp(&[
        "pmf", "--preset", "tfpp", "--alpha", "1", "--t-grid", "0:1:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = gfbp(&[
        "pmf", "--preset", "tfpp", "--lambda", "1", "--alpha", "1.5", "--t-grid", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_document_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let doc = r#"{"n0": 1, "k": 2, "kind": "formula", "rate": "n*(2-i) + (i-1)"}"#;
    fs::write(&path, doc).unwrap();
    let model = RateModel::from_json(doc).unwrap();
    let again = RateModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(model.to_json().unwrap(), again.to_json().unwrap());
    let out = gfbp(&[
        "pmf",
        "--model",
        path.to_str().unwrap(),
        "--alpha",
        "0.6",
        "--t-grid",
        "0.7",
        "--mass-tol",
        "1e-6",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let row = csv_rows(&stdout(&out))
        .into_iter()
        .find(|r| r.1 == 4)
        .unwrap();
    let want = pmf(&model, 0.6, 4, 0.7).unwrap();
    assert!((row.2 - want.value).abs() <= row.3 + want.error_bound + 1e-15);
}

#[test]
fn per_state_orders_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("orders.json");
    fs::write(&path, r#"{"orders": {"0": 0.5, "1": 0.9}, "default": 0.7}"#).unwrap();
    let out = gfbp(&[
        "pmf",
        "--preset",
        "tfpp",
        "--lambda",
        "1",
        "--alpha-per-state",
        path.to_str().unwrap(),
        "--t-grid",
        "1",
        "--mass-tol",
        "1e-6",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&stdout(&out));
    let model = RateModel::tfpp(1.0).unwrap();
    let order: OrderSpec = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let want = pmf_with(&model, &order, 1, 1.0, &PmfConfig::default())
        .unwrap()
        .estimate
        .value;
    assert!((rows[1].2 - want).abs() <= rows[1].3 + 1e-12);
}

#[test]
fn state_budget_exits_with_budget_code() {
    let out = gfbp(&[
        "pmf",
        "--preset",
        "tfpp",
        "--lambda",
        "1",
        "--alpha",
        "0.7",
        "--t-grid",
        "1",
        "--max-states",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn explosion_verdicts() {
    let out = gfbp(&[
        "explosion",
        "--preset",
        "fpbp",
        "--rates",
        "n^2",
        "--terms",
        "10000",
    ]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["verdict"], "PossiblyExploding");

    let out = gfbp(&[
        "explosion",
        "--preset",
        "tfpp",
        "--lambda",
        "2",
        "--terms",
        "1000",
    ]);
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["verdict"], "NonExploding");

    let out = gfbp(&[
        "pmf", "--preset", "fpbp", "--rates", "n^2", "--alpha", "1", "--t-grid", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ml_eval_reports_value() {
    let out = gfbp(&["ml-eval", "--alpha", "1", "--z", "-1"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["value"].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(v["certified"], true);
}

#[test]
fn simulate_is_reproducible_and_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sim");
    let args = [
        "simulate",
        "--preset",
        "tfpp",
        "--lambda",
        "2",
        "--horizon",
        "1",
        "--paths",
        "1000",
        "--seed",
        "42",
        "--out",
        prefix.to_str().unwrap(),
    ];
    let out = gfbp(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = fs::read_to_string(dir.path().join("sim.jsonl")).unwrap();
    assert_eq!(lines, golden("tfpp_seed42.jsonl"));
    let summary = fs::read_to_string(dir.path().join("sim.summary.csv")).unwrap();
    assert_eq!(summary, golden("tfpp_seed42.summary.csv"));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sim.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 42);

    let single = Command::new(env!("CARGO_BIN_EXE_gfbp"))
        .args(&args[..args.len() - 2])
        .env("GFBP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(stdout(&single), lines);
}

#[test]
fn validate_modes() {
    let generic = ["--rate", "n*(2-i) + (i-1)", "--k", "2", "--n0", "1"];
    let run = |extra: &[&str]| {
        let mut args = vec!["validate"];
        args.extend_from_slice(extra);
        gfbp(&args)
    };

    let mut a = vec!["--mode", "oracle", "--alpha", "0.8", "--tol", "1e-6"];
    a.extend_from_slice(&generic);
    let out = run(&a);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-6);

    let out = run(&[
        "--mode",
        "mc",
        "--preset",
        "gfcp",
        "--lambdas",
        "1,3",
        "--alpha",
        "0.5",
        "--t-grid",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["details"]["max_tv"].as_f64().unwrap() < 0.01);

    let out = run(&[
        "--mode", "residual", "--preset", "tfpp", "--lambda", "1", "--alpha", "1", "--states", "4",
        "--tol", "1e-6",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(&[
        "--mode",
        "laplace",
        "--preset",
        "gfcp",
        "--lambdas",
        "1,3",
        "--alpha",
        "0.5",
        "--states",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // Plain L1 at this step cannot reach the default tolerance.
    let mut a = vec!["--mode", "residual", "--alpha", "0.7", "--states", "3"];
    a.extend_from_slice(&generic);
    let out = run(&a);
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn oracle_command_emits_oracle_table() {
    let out = gfbp(&[
        "oracle", "--preset", "tfpp", "--lambda", "1", "--alpha", "1", "--t-end", "1", "--step",
        "0.5", "--n-max", "2", "--scheme", "rk4", "--format", "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = gfbp::PmfTable::from_json(&stdout(&out)).unwrap();
    assert_eq!(table.source, gfbp::table::TableSource::Oracle);
    assert_eq!(table.times, vec![0.0, 0.5, 1.0]);
}
