use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Child, Command, Output, Stdio};

use edurt::manage::ManageClient;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_edurt");

/// A node process killed on drop.
struct NodeProcess {
    child: Child,
    manage: String,
    _dir: tempfile::TempDir,
}

impl Drop for NodeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_gmt() -> NodeProcess {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("gmt.conf");
    std::fs::write(
        &conf,
        "node.id = gmt\ntiers.initial = GMT,DST,DGT,DWT\ndst.listen = 127.0.0.1:0\nmanage.listen = 127.0.0.1:0\n",
    )
    .unwrap();
    let mut child = Command::new(BIN)
        .args(["node", "--config"])
        .arg(&conf)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let manage = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("manage="))
        .unwrap_or_else(|| panic!("no manage address in {line:?}"))
        .to_owned();
    NodeProcess { child, manage, _dir: dir }
}

fn cli(gmt: &str, args: &[&str]) -> Output {
    Command::new(BIN).env("EDURT_GMT", gmt).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn exit_codes_follow_response_class() {
    let node = spawn_gmt();
    assert_eq!(cli(&node.manage, &["nodes"]).status.code(), Some(0));
    let bad = cli(&node.manage, &["tier", "add", "--node", "gmt", "--identity", "GMT"]);
    assert_eq!(bad.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["status"], 422);
    assert_eq!(cli(&node.manage, &["job", "missing"]).status.code(), Some(1));

    assert_eq!(cli(&node.manage, &["tier", "add"]).status.code(), Some(1), "usage error");
    assert_eq!(cli(&node.manage, &["--help"]).status.code(), Some(0));

    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    assert_eq!(cli(&closed, &["nodes"]).status.code(), Some(2));
}

#[test]
fn env_var_overrides_flag() {
    let node = spawn_gmt();
    let out = cli(&node.manage, &["--gmt", "127.0.0.1:1", "stats"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cli_output_matches_the_api() {
    let node = spawn_gmt();
    let api = ManageClient::new(&node.manage);
    for (args, path) in [
        (&["nodes"][..], "/v1/nodes"),
        (&["show-node", "gmt"][..], "/v1/nodes/gmt"),
        (&["schema", "DWT"][..], "/v1/schema/DWT"),
        (&["jobs"][..], "/v1/jobs"),
        (&["demands", "--state", "pending"][..], "/v1/demands?state=pending"),
    ] {
        let out = cli(&node.manage, args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert_eq!(json(&out), api.raw("GET", path, None).unwrap().1, "{args:?}");
    }

    let out = cli(&node.manage, &["tier", "add", "--node", "gmt", "--identity", "DWT"]);
    assert_eq!(json(&out)["count"], 2);
    let out = cli(&node.manage, &["tier", "remove", "--node", "gmt", "--identity", "DWT"]);
    assert_eq!(json(&out)["count"], 1);
}

#[test]
fn submit_and_follow_a_job() {
    let node = spawn_gmt();
    let samples: Vec<String> = (0..800).map(|i| format!("{:.4}", (i as f64 * 0.2).sin())).collect();
    let out = cli(
        &node.manage,
        &["submit", "--mode", "train", "--text", &samples.join(" "), "--format", "text", "--speaker", "bob"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let id = json(&out)["job_id"].as_str().unwrap().to_owned();
    let api = ManageClient::new(&node.manage);
    let done = api.wait_job(&id, std::time::Duration::from_secs(30)).unwrap();
    assert_eq!(done.state, "done");
    let view = json(&cli(&node.manage, &["job", &id]));
    assert_eq!(view["state"], "done");
    assert_eq!(view["result"]["kind"], "training_set");

    let missing = cli(&node.manage, &["submit", "--mode", "train", "--text", "0.1 0.2"]);
    assert_eq!(missing.status.code(), Some(1), "train without a speaker");
}
