use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wardrop-lab")).args(args).output().expect("binary runs")
}

fn run_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wardrop-lab"))
        .args(args)
        .env("WARDROP_LAB_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn equilibrium_with_link_costs_92() {
    let v = json(&run(&["equilibrium", path(&fixture("braess_with_link.net"))]));
    let routes = v["routes"].as_array().unwrap();
    assert_eq!(routes.len(), 3);
    for r in routes {
        assert!((r["cost"].as_f64().unwrap() - 92.0).abs() < 1e-4, "{r}");
    }
    assert!((v["psi"].as_f64().unwrap() - 386.0).abs() < 1e-6);
    assert!((v["y"]["e12"].as_f64().unwrap() - 4.0).abs() < 1e-4);
}

#[test]
fn od_balance_uniform_is_gravity() {
    let v = json(&run(&["od-balance", path(&fixture("uniform.zones"))]));
    let x: Vec<f64> = v["X"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    let (l, w) = ([30.0, 50.0, 20.0], [40.0, 40.0, 20.0]);
    assert_eq!(v["n"], 3);
    for i in 0..3 {
        for j in 0..3 {
            let g = l[i] * w[j] / 100.0;
            assert!((x[3 * i + j] - g).abs() <= 1e-10 * g);
        }
    }
    assert_eq!(v["lambdaL"].as_array().unwrap().len(), 3);
}

#[test]
fn empty_network_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.net");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["equilibrium", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "parse");
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.zones");
    std::fs::write(&bad, "zones 2\nzone 1 1 1\nzone 2 one 1\n").unwrap();
    let out = run(&["od-balance", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["line"], 3);
}

#[test]
fn nonconvergence_exit_code() {
    let out = run(&["od-balance", path(&fixture("ten_zone.zones")), "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "non_convergence");
}

#[test]
fn precondition_exit_code() {
    let out = run(&["averaging", path(&fixture("braess_with_link.net")), "--replicas", "10"]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(&["od-balance", path(&fixture("missing.zones"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn dynamics_outputs_are_deterministic_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4", "4"].iter().enumerate() {
        let csv = dir.path().join(format!("t{k}.csv"));
        let js = dir.path().join(format!("t{k}.json"));
        let out = run_env(
            &[
                "dynamics",
                path(&fixture("braess_with_link.net")),
                "--steps",
                "2000",
                "--stride",
                "100",
                "--replicas",
                "6",
                "--csv",
                csv.to_str().unwrap(),
                "-o",
                js.to_str().unwrap(),
            ],
            threads,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&csv).unwrap(), std::fs::read(&js).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,route_id,count,psi,gap"));
    // every sample splits the 6000 players over the three routes
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for chunk in rows.chunks(3) {
        let total: u64 = chunk.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
        assert_eq!(total, 6000);
    }
    let summary: Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert_eq!(summary["replicas"].as_array().unwrap().len(), 6);
}

#[test]
fn single_run_matches_replica_zero() {
    let net = fixture("nonuniqueness.net");
    let one = json(&run(&["dynamics", path(&net), "--steps", "500"]));
    let many = json(&run(&["dynamics", path(&net), "--steps", "500", "--replicas", "3"]));
    assert_eq!(one["replicas"][0], many["replicas"][0]);
}

#[test]
fn exchange_sim_preserves_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("chain.csv");
    let v = json(&run(&[
        "exchange-sim",
        path(&fixture("chain_2x2.zones")),
        "--steps",
        "20000",
        "--stride",
        "500",
        "--csv",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(v["total"], 7);
    assert!(v["concentration"]["deterministic"]["pass"].as_bool().unwrap());

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,i,j,count"));
    let rows: Vec<[u64; 4]> = lines
        .map(|l| {
            let f: Vec<u64> = l.split(',').map(|t| t.parse().unwrap()).collect();
            [f[0], f[1], f[2], f[3]]
        })
        .collect();
    assert!(!rows.is_empty());
    for s in rows.chunks(4) {
        assert!(s.iter().all(|r| r[0] == s[0][0]));
        let row1 = s[0][3] + s[1][3];
        let col1 = s[0][3] + s[2][3];
        assert_eq!((row1, col1), (4, 5));
    }
}

#[test]
fn compare_projection_table() {
    let v = json(&run(&["compare-projection", path(&fixture("nonuniqueness.net"))]));
    let table = v["table"].as_array().unwrap();
    assert_eq!(table.len(), 4);
    for row in table {
        assert!((row["projection"].as_f64().unwrap() - 0.25).abs() < 1e-6);
        assert_eq!(row["dynamics"].as_array().unwrap().len(), 5);
    }
    let farthest = v["dynamics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["distance_to_projection"].as_f64().unwrap())
        .fold(0.0, f64::max);
    assert!(farthest > 0.05, "{farthest}");
}

fn significant_digits(tok: &str) -> usize {
    let mantissa = tok.trim_start_matches('-').split(['e', 'E']).next().unwrap();
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = digits.trim_start_matches('0').trim_end_matches('0');
    trimmed.len()
}

#[test]
fn numbers_use_at_most_twelve_significant_digits() {
    let out = run(&["od-balance", path(&fixture("ten_zone.zones"))]);
    let v = json(&out);
    let mut stack = vec![&v];
    let mut checked = 0;
    while let Some(node) = stack.pop() {
        match node {
            Value::Number(n) => {
                assert!(significant_digits(&n.to_string()) <= 12, "{n}");
                checked += 1;
            }
            Value::Array(a) => stack.extend(a),
            Value::Object(o) => stack.extend(o.values()),
            _ => {}
        }
    }
    assert!(checked > 100);
}
