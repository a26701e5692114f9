use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

const KEY: &str = "4242424242424242424242424242424242424242424242424242424242424242";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_portvm"));
    c.env_remove("PORTVM_KEY").env("PORTVM_LOG", "error");
    c
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn program(name: &str) -> PathBuf {
    root().join(format!("crates/core/fixtures/programs/{name}.pasm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn portvm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_sum10_prints_55() {
    let o = run(&["run", p(&program("sum10"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "55");
}

#[test]
fn checkpoint_restore_round_trip_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    for (name, policy) in [("sum10", "loop"), ("fib", "function"), ("fib", "loop"), ("memfill", "loop")] {
        let straight = stdout(&run(&["run", p(&program(name))]));
        let snap = dir.path().join(format!("{name}-{policy}.psnp"));
        let o = run(&["checkpoint", p(&program(name)), "--policy", policy, "--out", p(&snap), "--key", KEY]);
        assert_eq!(code(&o), 0, "{name}/{policy}: {}", String::from_utf8_lossy(&o.stderr));
        let o = bin()
            .args(["restore", p(&snap), "--module", p(&program(name)), "--policy", policy])
            .env("PORTVM_KEY", KEY)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        assert_eq!(stdout(&o), straight, "{name}/{policy}");
    }
}

#[test]
fn checkpoint_reproduces_golden_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.psnp");
    let o = run(&["checkpoint", p(&program("sum10")), "--stops", "6", "--out", p(&out), "--key", KEY]);
    assert_eq!(code(&o), 0);
    let golden = std::fs::read(root().join("crates/core/fixtures/snapshots/sum10-loop6.psnp")).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden);
}

#[test]
fn restore_errors_have_distinct_codes() {
    let golden = root().join("crates/core/fixtures/snapshots/sum10-loop6.psnp");
    let mismatched = run(&["restore", p(&golden), "--module", p(&program("fib")), "--key", KEY]);
    assert_eq!(code(&mismatched), 7);
    let wrong_key = run(&["restore", p(&golden), "--module", p(&program("sum10")), "--key", &"43".repeat(32)]);
    assert_eq!(code(&wrong_key), 9);
    let no_key = run(&["restore", p(&golden), "--module", p(&program("sum10"))]);
    assert_eq!(code(&no_key), 2);

    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(&golden).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    let bad = dir.path().join("bad.psnp");
    std::fs::write(&bad, bytes).unwrap();
    let corrupt = run(&["restore", p(&bad), "--module", p(&program("sum10")), "--key", KEY]);
    assert_eq!(code(&corrupt), 10);
    let missing = run(&["restore", p(&dir.path().join("none.psnp")), "--module", p(&program("sum10")), "--key", KEY]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn run_errors_have_distinct_codes() {
    assert_eq!(code(&run(&["run", p(&program("fib")), "--fuel", "5"])), 6);
    let dir = tempfile::tempdir().unwrap();
    let trap = dir.path().join("trap.pasm");
    std::fs::write(&trap, ".func main 0 0\n    i64.add\n    halt\n.end\n").unwrap();
    assert_eq!(code(&run(&["run", p(&trap)])), 5);
    let junk = dir.path().join("junk.pasm");
    std::fs::write(&junk, "not an instruction\n").unwrap();
    assert_eq!(code(&run(&["run", p(&junk)])), 4);
    assert_eq!(code(&run(&["run"])), 2);
}

struct Server {
    child: Child,
    addr: String,
    out: BufReader<std::process::ChildStdout>,
}

impl Server {
    fn start(extra: &[&str]) -> Server {
        let mut child = bin()
            .args(["serve", "--listen", "127.0.0.1:0", "--once"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        out.read_line(&mut line).unwrap();
        let addr = line.split_whitespace().nth(2).expect("listening line").to_string();
        Server { child, addr, out }
    }

    fn next_line(&mut self) -> String {
        let mut line = String::new();
        self.out.read_line(&mut line).unwrap();
        line
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn loopback_migration_resumes_remotely() {
    let mut server = Server::start(&["--caps", "1003"]);
    let o = run(&["migrate", "--to", &server.addr, "--module", p(&program("sum10")), "--live", "--stops", "6", "--require", "1003"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    for stage in ["checkpoint", "handshake", "compress", "transfer", "restore-ack", "total"] {
        assert!(report.lines().any(|l| l.starts_with(stage)), "missing {stage} in\n{report}");
    }
    assert!(server.next_line().trim().ends_with(": 55"));
    assert!(server.child.wait().unwrap().success());
}

#[test]
fn migration_from_snapshot_resumes_remotely() {
    let mut server = Server::start(&[]);
    let golden = root().join("crates/core/fixtures/snapshots/sum10-loop6.psnp");
    let o = run(&["migrate", "--to", &server.addr, "--module", p(&program("sum10")), "--snapshot", p(&golden), "--key", KEY, "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["report"]["stages"]["total"].as_f64().unwrap() > 0.0);
    assert!(server.next_line().trim().ends_with(": 55"));
}

#[test]
fn wrong_whitelist_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let wl = dir.path().join("whitelist");
    std::fs::write(&wl, format!("{}\n", "00".repeat(32))).unwrap();
    let server = Server::start(&["--whitelist", p(&wl)]);
    let o = run(&["migrate", "--to", &server.addr, "--module", p(&program("sum10")), "--live"]);
    assert_eq!(code(&o), 11, "{}", String::from_utf8_lossy(&o.stderr));

    let server = Server::start(&[]);
    let o = run(&["migrate", "--to", &server.addr, "--module", p(&program("sum10")), "--live", "--whitelist", p(&wl)]);
    assert_eq!(code(&o), 11);
}

#[test]
fn missing_capability_is_refused() {
    let server = Server::start(&["--caps", "1001"]);
    let o = run(&["migrate", "--to", &server.addr, "--module", p(&program("sum10")), "--live", "--require", "1003"]);
    assert_eq!(code(&o), 12, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unreachable_destination_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let o = run(&["migrate", "--to", &port.to_string(), "--module", p(&program("sum10")), "--live"]);
    assert_eq!(code(&o), 15);
}

fn scenario(name: &str) -> PathBuf {
    root().join(format!("scenarios/{name}.toml"))
}

#[test]
fn simulate_logs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["cloud-disconnect", "lossy-cloud", "partition-flap"] {
        let a = dir.path().join(format!("{name}-a.jsonl"));
        let b = dir.path().join(format!("{name}-b.jsonl"));
        assert_eq!(code(&run(&["simulate", p(&scenario(name)), "--log", p(&a)])), 0);
        assert_eq!(code(&run(&["simulate", p(&scenario(name)), "--log", p(&b)])), 0);
        let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

fn summary(name: &str) -> serde_json::Value {
    let o = run(&["simulate", p(&scenario(name)), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()["summary"].clone()
}

#[test]
fn disconnect_activates_local_within_budget() {
    let s = summary("cloud-disconnect");
    let timeline = s["active_timeline"].as_array().unwrap();
    assert!(timeline.iter().any(|e| e[1] == "device"), "{timeline:?}");
    for l in s["failover_latencies_ms"].as_array().unwrap() {
        assert!(l.as_f64().unwrap() < 200.0);
    }
}

#[test]
fn lossy_window_is_served_by_edge() {
    let s = summary("lossy-cloud");
    let timeline: Vec<(f64, String)> = serde_json::from_value(s["active_timeline"].clone()).unwrap();
    let during = timeline.iter().rev().find(|(t, _)| *t <= 6.0).unwrap();
    assert_eq!(during.1, "edge");
    assert_eq!(timeline.last().unwrap().1, "cloud");
}

#[test]
fn failed_assertions_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("cloud-disconnect")).unwrap();
    let text = text.replace("final_active = \"cloud\"", "final_active = \"edge\"");
    std::fs::write(&path, text).unwrap();
    let o = run(&["simulate", p(&path)]);
    assert_eq!(code(&o), 25);
    assert!(stdout(&o).contains("FAIL"));

    std::fs::write(&path, "schema = \"portvm.scenario/9\"\nname = \"x\"\n").unwrap();
    assert_eq!(code(&run(&["simulate", p(&path)])), 4);
}

#[test]
fn simulate_reports_speculation_and_validation_sections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("full.toml");
    let mut text = std::fs::read_to_string(scenario("quiet")).unwrap();
    text += &format!(
        "\n[speculation]\nseed = 3\n[[speculation.workload]]\nname = \"w\"\nfast_ms = 2.0\nratio = 4.0\ntasks = 4\n\n[validation]\nrules = \"{}\"\ncorpus = \"{}\"\nchunk_delay_ms = 0\n",
        p(&root().join("rules/validators.toml")),
        p(&root().join("corpus/validation.jsonl")),
    );
    std::fs::write(&path, text).unwrap();
    let o = run(&["simulate", p(&path), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["speculation"][0]["speedup"].as_f64().unwrap() > 1.0);
    assert_eq!(v["validation"]["items"], 200);
    assert_eq!(v["validation"]["equivalent"], true);
}

#[test]
fn decide_follows_the_rule() {
    let profile = root().join("profiles/image-analysis.toml");
    let o = run(&["decide", p(&profile), "--json"]);
    assert_eq!(code(&o), 0);
    let d: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(d["placement"]["placement"], "migrate");
    let o = run(&["decide", p(&profile), "--labels", "medical-record"]);
    assert!(stdout(&o).starts_with("stay (sensitivity)"));
    assert_eq!(code(&run(&["decide", p(&profile), "--labels", "nope"])), 21);
}

#[test]
fn validate_reports_every_category() {
    let o = run(&["validate", "--rules", p(&root().join("rules/validators.toml")), "--corpus", p(&root().join("corpus/validation.jsonl")), "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["categories"].as_array().unwrap().len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["validate", "--rules", p(&root().join("rules/validators.toml")), "--corpus", p(&empty)]);
    assert_eq!(code(&o), 24);
}

#[test]
fn speculate_bench_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rows.jsonl");
    let o = run(&["speculate-bench", "--jsonl", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("speedup"));
    let rows = std::fs::read_to_string(out).unwrap();
    assert_eq!(rows.lines().count(), 1);
}

#[test]
fn log_level_comes_from_environment() {
    let o = bin().args(["run", p(&program("sum10"))]).env("PORTVM_LOG", "debug").output().unwrap();
    assert_eq!(stdout(&o).trim(), "55");
    assert!(!o.stderr.is_empty());
    let quiet = run(&["run", p(&program("sum10"))]);
    assert!(quiet.stderr.is_empty());
}
