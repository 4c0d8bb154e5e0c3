use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::process::{Child, Command, Output, Stdio};

use sdim_core::serving::wire::{read_frame, Message};
use sdim_core::serving::{deserialize_bucket_table, Client, ScoreRequest};

fn sdim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn curves_emit_requested_points() {
    let o = sdim(&["curves", "--tau", "3", "--scale", "0.5", "--points", "201"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,sdim_weight,ta_weight");
    assert_eq!(lines.len(), 202);
    assert_eq!(lines[1], "-1,0,0.0183156389");
    assert_eq!(lines[201], "1,1,1");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# curve settings\npoints = 11\ntau = 2\n").unwrap();
    let c = cfg.to_str().unwrap();

    let from_file = stdout(&sdim(&["curves", "--config", c]));
    assert_eq!(from_file.lines().count(), 12);
    // tau = 2 at x = 0 gives 0.25
    assert!(from_file.lines().any(|l| l.starts_with("0,0.25,")));

    let overridden = stdout(&sdim(&["curves", "--config", c, "--points", "5"]));
    assert_eq!(overridden.lines().count(), 6);

    std::fs::write(&cfg, "no_such_flag = 1\n").unwrap();
    assert!(!sdim(&["curves", "--config", c]).status.success());
}

#[test]
fn verify_reports_requested_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = sdim(&[
        "verify",
        "--rounds-sweep",
        "4,8,16,32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let convergence: Vec<&serde_json::Value> = rows
        .iter()
        .filter(|r| r["suite"] == "convergence" && r["metric"] == "mean_cosine")
        .collect();
    assert_eq!(convergence.len(), 4);
    let m48 = rows
        .iter()
        .find(|r| r["suite"] == "m-sweep" && r["parameter"] == "m=48,tau=3")
        .unwrap();
    assert!(m48["value"].as_f64().unwrap() >= 0.95);
    assert!(stdout(&o).lines().all(|l| !l.starts_with("FAIL")));
}

#[test]
fn verify_fails_with_named_property() {
    // a sweep listed largest-first cannot be non-decreasing
    let o = sdim(&["verify", "--rounds-sweep", "64,4", "--seeds", "3", "--trials", "2000"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("failed: convergence / non-decreasing in rounds"), "{err}");
}

#[test]
fn encode_writes_one_table_per_user() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let out = dir.path().join("tables.bin");
    std::fs::write(&log, "user_id,item_id,category_id,behavior_type,timestamp\n7,1,1,pv,10\n7,2,1,buy,20\n9,3,2,fav,5\n").unwrap();
    let o = sdim(&[
        "encode",
        "--input",
        log.to_str().unwrap(),
        "--max-len",
        "256",
        "--out",
        out.to_str().unwrap(),
        "--d",
        "16",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&out).unwrap();
    let mut cursor = bytes.as_slice();
    let mut users = Vec::new();
    while let Some(msg) = read_frame(&mut cursor).unwrap() {
        let Message::BucketTable(t) = msg else { panic!("unexpected frame") };
        let table = deserialize_bucket_table(&t).unwrap();
        assert_eq!((table.d, table.m, table.tau), (16, 48, 3));
        users.push((table.user_id, table.item_count));
    }
    users.sort();
    assert_eq!(users, vec![(7, 2), (9, 1)]);
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert!(!sdim(&["curves", "--points", "1"]).status.success());
    assert!(!sdim(&["bench", "--l", "x"]).status.success());
    assert!(!sdim(&["encode", "--input", "/nonexistent/log.csv", "--out", "/tmp/x"]).status.success());
}

#[test]
fn bench_reports_every_method() {
    let o = sdim(&["bench", "--l", "64", "--b", "1,8", "--d", "16", "--iters", "2", "--warmup", "0", "--k", "4"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for c in cells {
        let methods: Vec<&str> = c["methods"].as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
        assert_eq!(methods, ["target-attention", "sdim", "sim-hard", "eta", "mean-pooling"]);
    }
    assert!(report["environment"]["logical_cpus"].as_u64().unwrap() >= 1);
}

#[test]
fn simulate_reports_stage_latencies() {
    let o = sdim(&["simulate", "--users", "3", "--requests", "6", "--b", "16", "--l", "64", "--d", "16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["requests"], 6);
    assert_eq!(report["request_total"]["count"], 6);
    assert_eq!(report["bse"]["sequence_hash_passes"], 3);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn(args: &[&str]) -> (Server, SocketAddr) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sdim"))
        .args(args)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(3).unwrap().trim_end_matches(',').parse().unwrap();
    (Server(child), addr)
}

#[test]
fn servers_answer_over_tcp() {
    let (_bse, bse_addr) = spawn(&["serve-bse", "--listen", "127.0.0.1:0", "--synthetic-users", "2", "--l", "32", "--d", "8"]);
    let bse_arg = bse_addr.to_string();
    let (_ctr, ctr_addr) = spawn(&["serve-ctr", "--listen", "127.0.0.1:0", "--bse", &bse_arg, "--d", "8"]);

    let mut client = Client::connect(ctr_addr).unwrap();
    let q = vec![vec![1.0f32, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
    let resp = client.score(ScoreRequest { user_id: 2, candidates: q.clone() }).unwrap();
    assert_eq!(resp.results.len(), 1);
    assert_eq!(resp.results[0].interest.len(), 8);
    assert!(client.score(ScoreRequest { user_id: 3, candidates: q }).is_err());

    let mut raw = Client::connect(bse_addr).unwrap();
    let table = deserialize_bucket_table(&raw.fetch_table(1).unwrap()).unwrap();
    assert_eq!(table.item_count, 32);
}
