//! Blocking HTTP client for the management API.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::types::{
    ErrorBody, FileRequest, JobAccepted, JobJson, JobList, JobRequest, NodeList, RegisterRequest, RegisterResponse,
    SchemaJson, TierChange, TierReport, TierRequest,
};
use crate::store::{DemandPage, StoreStats};
use crate::tiers::registry::{NodeRecord, TierCount};
use crate::tiers::TierIdentity;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status} ({kind}): {message}")]
    Status { status: u16, kind: String, message: String },
    #[error("bad response body: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandQuery {
    pub state: Option<String>,
    pub workload: Option<String>,
    pub stage: Option<String>,
    pub cursor: Option<u64>,
    pub limit: Option<usize>,
}

#[derive(Clone)]
pub struct ManageClient {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ManageClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManageClient").field("base", &self.base).finish()
    }
}

impl ManageClient {
    /// `address` is `host:port` or a full `http://` URL.
    pub fn new(address: &str) -> Self {
        let base = if address.starts_with("http://") || address.starts_with("https://") {
            address.trim_end_matches('/').to_owned()
        } else {
            format!("http://{}", address.trim_end_matches('/'))
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(3))
            .timeout(Duration::from_secs(30))
            .build();
        ManageClient { base, agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Sends a request and returns status plus raw JSON on 2xx.
    pub fn raw(&self, method: &str, path: &str, body: Option<&serde_json::Value>) -> Result<(u16, serde_json::Value), ClientError> {
        let req = self.agent.request(method, &self.url(path));
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match resp {
            Ok(r) => {
                let status = r.status();
                let text = r.into_string().map_err(|e| ClientError::Decode(e.to_string()))?;
                let v = if text.is_empty() {
                    serde_json::Value::Null
                } else {
                    serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?
                };
                Ok((status, v))
            }
            Err(ureq::Error::Status(status, r)) => {
                let text = r.into_string().unwrap_or_default();
                let (message, kind) = match serde_json::from_str::<ErrorBody>(&text) {
                    Ok(e) => (e.error, e.kind),
                    Err(_) => (text, String::new()),
                };
                Err(ClientError::Status { status, kind, message })
            }
            Err(ureq::Error::Transport(t)) => Err(ClientError::Transport(t.to_string())),
        }
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&B>) -> Result<R, ClientError> {
        let body = body
            .map(serde_json::to_value)
            .transpose()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        let (_, v) = self.raw(method, path, body.as_ref())?;
        serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R, ClientError> {
        self.call::<(), R>("GET", path, None)
    }

    pub fn nodes(&self) -> Result<Vec<NodeRecord>, ClientError> {
        self.get::<NodeList>("/v1/nodes").map(|l| l.nodes)
    }

    pub fn node(&self, id: &str) -> Result<NodeRecord, ClientError> {
        self.get(&format!("/v1/nodes/{}", enc(id)))
    }

    pub fn register_node(&self, req: &RegisterRequest) -> Result<RegisterResponse, ClientError> {
        self.call("POST", "/v1/nodes", Some(req))
    }

    pub fn report_tiers(&self, node_id: &str, tiers: &[TierCount]) -> Result<NodeRecord, ClientError> {
        let body = TierReport { tiers: tiers.to_vec() };
        self.call("PUT", &format!("/v1/nodes/{}/tiers", enc(node_id)), Some(&body))
    }

    pub fn add_tier(&self, node_id: &str, identity: &str) -> Result<TierChange, ClientError> {
        let body = TierRequest {
            identity: identity.to_owned(),
        };
        self.call("POST", &format!("/v1/nodes/{}/tiers", enc(node_id)), Some(&body))
    }

    pub fn remove_tier(&self, node_id: &str, identity: &str) -> Result<TierChange, ClientError> {
        self.call::<(), _>("DELETE", &format!("/v1/nodes/{}/tiers/{}", enc(node_id), enc(identity)), None)
    }

    pub fn store_stats(&self) -> Result<StoreStats, ClientError> {
        self.get("/v1/store/stats")
    }

    pub fn demands(&self, q: &DemandQuery) -> Result<DemandPage, ClientError> {
        let mut parts = Vec::new();
        for (k, v) in [("state", &q.state), ("workload", &q.workload), ("stage", &q.stage)] {
            if let Some(v) = v {
                parts.push(format!("{k}={}", enc(v)));
            }
        }
        if let Some(c) = q.cursor {
            parts.push(format!("cursor={c}"));
        }
        if let Some(l) = q.limit {
            parts.push(format!("limit={l}"));
        }
        let qs = if parts.is_empty() { String::new() } else { format!("?{}", parts.join("&")) };
        self.get(&format!("/v1/demands{qs}"))
    }

    pub fn submit_job(&self, req: &JobRequest) -> Result<JobAccepted, ClientError> {
        self.call("POST", "/v1/jobs", Some(req))
    }

    pub fn job(&self, id: &str) -> Result<JobJson, ClientError> {
        self.get(&format!("/v1/jobs/{}", enc(id)))
    }

    pub fn jobs(&self) -> Result<Vec<JobJson>, ClientError> {
        self.get::<JobList>("/v1/jobs").map(|l| l.jobs)
    }

    pub fn schema(&self, tier: TierIdentity) -> Result<SchemaJson, ClientError> {
        self.get(&format!("/v1/schema/{tier}"))
    }

    pub fn backup(&self, file: &str) -> Result<serde_json::Value, ClientError> {
        let body = FileRequest { file: file.to_owned() };
        self.call("POST", "/v1/store/backup", Some(&body))
    }

    pub fn restore(&self, file: &str) -> Result<serde_json::Value, ClientError> {
        let body = FileRequest { file: file.to_owned() };
        self.call("POST", "/v1/store/restore", Some(&body))
    }

    /// Polls a job until it finishes or `timeout` passes.
    pub fn wait_job(&self, id: &str, timeout: Duration) -> Result<JobJson, ClientError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let j = self.job(id)?;
            if j.state == "done" || j.state == "failed" || std::time::Instant::now() >= deadline {
                return Ok(j);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Percent-encodes a path segment or query value.
fn enc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_urls() {
        assert_eq!(ManageClient::new("127.0.0.1:9").base_url(), "http://127.0.0.1:9");
        assert_eq!(ManageClient::new("http://h:1/").base_url(), "http://h:1");
        assert_eq!(enc("a b/c"), "a%20b%2Fc");
    }

    #[test]
    fn refused_is_transport() {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap().to_string();
        drop(l);
        assert!(matches!(ManageClient::new(&addr).nodes(), Err(ClientError::Transport(_))));
    }
}
