use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clap::{Args, Parser, Subcommand};
use edurt::manage::types::{FileRequest, JobRequest, ParamsJson, TierRequest};
use edurt::manage::{ClientError, ManageClient};
use edurt::tiers::{bootstrap, load_config, TierError};
use serde_json::Value;

const DEFAULT_GMT: &str = "127.0.0.1:7070";

#[derive(Parser)]
#[command(name = "edurt", version, about = "Run and steer a demand-driven execution network")]
struct Cli {
    /// GMT management address; the EDURT_GMT environment variable takes precedence.
    #[arg(long, global = true)]
    gmt: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a node from a configuration file and run until killed.
    Node {
        #[arg(long)]
        config: PathBuf,
    },
    /// GET /v1/nodes
    Nodes,
    /// GET /v1/nodes/{id}
    ShowNode { id: String },
    /// POST /v1/nodes/{id}/tiers and DELETE /v1/nodes/{id}/tiers/{identity}
    Tier {
        #[command(subcommand)]
        op: TierOp,
    },
    /// GET /v1/store/stats
    Stats,
    /// GET /v1/demands
    Demands(DemandArgs),
    /// POST /v1/jobs
    Submit(SubmitArgs),
    /// GET /v1/jobs/{id}
    Job { id: String },
    /// GET /v1/jobs
    Jobs,
    /// GET /v1/schema/{tier}
    Schema { tier: String },
    /// POST /v1/store/backup
    Backup {
        #[arg(long)]
        file: String,
    },
    /// POST /v1/store/restore
    Restore {
        #[arg(long)]
        file: String,
    },
}

#[derive(Subcommand)]
enum TierOp {
    Add {
        #[arg(long)]
        node: String,
        #[arg(long)]
        identity: String,
    },
    Remove {
        #[arg(long)]
        node: String,
        #[arg(long)]
        identity: String,
    },
}

#[derive(Args)]
struct DemandArgs {
    /// PENDING, INPROCESS, COMPLETED or FAILED
    #[arg(long)]
    state: Option<String>,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    cursor: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct SubmitArgs {
    #[arg(long, default_value = "dmarf")]
    workload: String,
    /// train or classify
    #[arg(long)]
    mode: Option<String>,
    /// File whose bytes are the job input
    #[arg(long, conflicts_with = "text")]
    input: Option<PathBuf>,
    /// Inline text input, e.g. whitespace-separated samples
    #[arg(long)]
    text: Option<String>,
    /// wav, pcm16le or text; guessed from the bytes when absent
    #[arg(long)]
    format: Option<String>,
    #[arg(long, alias = "id")]
    speaker: Option<String>,
    /// JSON object with preprocessing, feature_extraction and classification arrays
    #[arg(long)]
    params: Option<String>,
}

fn gmt_address(flag: Option<String>) -> String {
    std::env::var("EDURT_GMT")
        .ok()
        .filter(|s| !s.is_empty())
        .or(flag)
        .unwrap_or_else(|| DEFAULT_GMT.to_owned())
}

fn encode_path(s: &str) -> String {
    s.bytes()
        .map(|b| {
            if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
                (b as char).to_string()
            } else {
                format!("%{b:02X}")
            }
        })
        .collect()
}

/// One endpoint call: method, path, optional body.
fn request(cmd: Command) -> anyhow::Result<(&'static str, String, Option<Value>)> {
    Ok(match cmd {
        Command::Node { .. } => unreachable!("handled by run_node"),
        Command::Nodes => ("GET", "/v1/nodes".into(), None),
        Command::ShowNode { id } => ("GET", format!("/v1/nodes/{}", encode_path(&id)), None),
        Command::Tier {
            op: TierOp::Add { node, identity },
        } => (
            "POST",
            format!("/v1/nodes/{}/tiers", encode_path(&node)),
            Some(serde_json::to_value(TierRequest { identity })?),
        ),
        Command::Tier {
            op: TierOp::Remove { node, identity },
        } => (
            "DELETE",
            format!("/v1/nodes/{}/tiers/{}", encode_path(&node), encode_path(&identity)),
            None,
        ),
        Command::Stats => ("GET", "/v1/store/stats".into(), None),
        Command::Demands(a) => {
            let mut q = Vec::new();
            for (k, v) in [("state", a.state), ("workload", a.workload), ("stage", a.stage)] {
                if let Some(v) = v {
                    q.push(format!("{k}={}", encode_path(&v)));
                }
            }
            if let Some(c) = a.cursor {
                q.push(format!("cursor={c}"));
            }
            if let Some(l) = a.limit {
                q.push(format!("limit={l}"));
            }
            let qs = if q.is_empty() { String::new() } else { format!("?{}", q.join("&")) };
            ("GET", format!("/v1/demands{qs}"), None)
        }
        Command::Submit(a) => {
            let params: ParamsJson = match &a.params {
                Some(p) => serde_json::from_str(p).context("--params")?,
                None => ParamsJson::default(),
            };
            let input_base64 = match &a.input {
                Some(p) => Some(B64.encode(std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)),
                None => None,
            };
            let req = JobRequest {
                workload: a.workload,
                mode: a.mode,
                input_base64,
                input_text: a.text,
                format: a.format,
                speaker: a.speaker,
                params,
            };
            ("POST", "/v1/jobs".into(), Some(serde_json::to_value(req)?))
        }
        Command::Job { id } => ("GET", format!("/v1/jobs/{}", encode_path(&id)), None),
        Command::Jobs => ("GET", "/v1/jobs".into(), None),
        Command::Schema { tier } => ("GET", format!("/v1/schema/{}", encode_path(&tier)), None),
        Command::Backup { file } => ("POST", "/v1/store/backup".into(), Some(serde_json::to_value(FileRequest { file })?)),
        Command::Restore { file } => ("POST", "/v1/store/restore".into(), Some(serde_json::to_value(FileRequest { file })?)),
    })
}

fn run_node(config: PathBuf) -> ExitCode {
    let node = match load_config(&config).map_err(TierError::from).and_then(bootstrap) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let show = |a: Option<std::net::SocketAddr>| a.map_or_else(|| "-".to_owned(), |a| a.to_string());
    println!(
        "node {} up: manage={} dst={} store={}",
        node.id(),
        show(node.manage_address()),
        show(node.dst_address()),
        node.link().describe()
    );
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are client errors; help and version are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Command::Node { config } = cli.cmd {
        return run_node(config);
    }
    let client = ManageClient::new(&gmt_address(cli.gmt));
    let (method, path, body) = match request(cli.cmd) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match client.raw(method, &path, body.as_ref()) {
        Ok((_, v)) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(ClientError::Status { status, kind, message }) => {
            let err = serde_json::json!({ "status": status, "kind": kind, "error": message });
            eprintln!("{}", serde_json::to_string_pretty(&err).unwrap_or_default());
            ExitCode::from(if status < 500 { 1 } else { 2 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("edurt").chain(args.iter().copied())).unwrap().cmd
    }

    #[test]
    fn verbs_map_to_endpoints() {
        let (m, p, b) = request(parse(&["tier", "remove", "--node", "w 1", "--identity", "DWT"])).unwrap();
        assert_eq!((m, p.as_str(), b), ("DELETE", "/v1/nodes/w%201/tiers/DWT", None));
        let (m, p, _) = request(parse(&["demands", "--state", "pending", "--limit", "5"])).unwrap();
        assert_eq!((m, p.as_str()), ("GET", "/v1/demands?state=pending&limit=5"));
        let (m, p, b) = request(parse(&["submit", "--mode", "train", "--text", "1 2", "--id", "bob"])).unwrap();
        assert_eq!((m, p.as_str()), ("POST", "/v1/jobs"));
        let b = b.unwrap();
        assert_eq!(b["speaker"], "bob");
        assert_eq!(b["workload"], "dmarf");
    }

    #[test]
    fn bad_params_fail_before_any_request() {
        assert!(request(parse(&["submit", "--text", "1", "--params", "{"])).is_err());
        assert!(Cli::try_parse_from(["edurt", "submit", "--input", "f", "--text", "1"]).is_err());
    }
}
