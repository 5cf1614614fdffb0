use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

use super::client::{ClientError, ManageClient};
use super::types::{
    ErrorBody, FileRequest, JobAccepted, JobJson, JobList, JobRequest, NodeList, PropertyJson, RegisterRequest,
    RegisterResponse, SchemaJson, TierChange, TierReport, TierRequest,
};
use crate::demand::DemandState;
use crate::store::DemandFilter;
use crate::tiers::config::schema_for;
use crate::tiers::node::NodeShared;
use crate::tiers::{TierError, TierIdentity};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;
const DRAIN_GRACE: Duration = Duration::from_secs(2);

/// A running management API.
pub struct ManageServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ManageServer {
    pub fn start(listener: TcpListener, node: Arc<NodeShared>) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("manage-http")
            .enable_all()
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(node);
        let thread = std::thread::Builder::new().name(format!("manage-{addr}")).spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        warn!("management listener: {e}");
                        return;
                    }
                };
                let (drain_tx, drain_rx) = oneshot::channel::<()>();
                let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
                    let _ = rx.await;
                    let _ = drain_tx.send(());
                });
                // Idle keep-alive clients must not hold shutdown open forever.
                tokio::select! {
                    r = serve => if let Err(e) = r { warn!("management server: {e}") },
                    _ = async { let _ = drain_rx.await; tokio::time::sleep(DRAIN_GRACE).await } => {}
                }
            });
            rt.shutdown_timeout(Duration::from_millis(200));
        })?;
        info!("management API on {addr}");
        Ok(ManageServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ManageServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

type Node = Arc<NodeShared>;

pub fn router(node: Node) -> Router {
    Router::new()
        .route("/v1/nodes", get(list_nodes).post(register_node))
        .route("/v1/nodes/:id", get(get_node))
        .route("/v1/nodes/:id/tiers", post(add_tier).put(report_tiers))
        .route("/v1/nodes/:id/tiers/:identity", delete(remove_tier))
        .route("/v1/store/stats", get(store_stats))
        .route("/v1/store/backup", post(backup))
        .route("/v1/store/restore", post(restore))
        .route("/v1/demands", get(list_demands))
        .route("/v1/jobs", get(list_jobs).post(submit_job))
        .route("/v1/jobs/:id", get(get_job))
        .route("/v1/schema/:tier", get(schema))
        .with_state(node)
}

/// An error response: status plus `{error, kind}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, msg: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: msg.into(),
                kind: kind.to_owned(),
            },
        }
    }
}

impl From<TierError> for ApiError {
    fn from(e: TierError) -> Self {
        use StatusCode as S;
        use TierError as T;
        let (status, kind) = match &e {
            T::NoController(_) => (S::UNPROCESSABLE_ENTITY, "NoController"),
            T::Validation(_) => (S::UNPROCESSABLE_ENTITY, "ValidationError"),
            T::Config(_) => (S::UNPROCESSABLE_ENTITY, "InvalidProperty"),
            T::InvalidWorkload(_) => (S::UNPROCESSABLE_ENTITY, "InvalidWorkload"),
            T::Snapshot(crate::store::SnapshotError::Io(_)) => (S::INTERNAL_SERVER_ERROR, "Io"),
            T::Snapshot(_) => (S::UNPROCESSABLE_ENTITY, "CorruptSnapshot"),
            T::NothingToRemove(_) => (S::CONFLICT, "NothingToRemove"),
            T::DuplicateNodeId(_) => (S::CONFLICT, "DuplicateNodeId"),
            T::StoreBusy(_) => (S::CONFLICT, "StoreBusy"),
            T::NoStore => (S::CONFLICT, "NoStore"),
            T::PortInUse(_) => (S::CONFLICT, "PortInUse"),
            T::UnknownNode(_) => (S::NOT_FOUND, "UnknownNode"),
            T::UnknownWorkload(_) => (S::NOT_FOUND, "UnknownWorkload"),
            T::UnknownJob(_) => (S::NOT_FOUND, "UnknownJob"),
            T::BadInput(_) => (S::BAD_REQUEST, "BadInput"),
            T::GmtUnreachable { .. } => (S::BAD_GATEWAY, "GmtUnreachable"),
            T::Remote { status, .. } => (
                S::from_u16(*status).unwrap_or(S::BAD_GATEWAY),
                "Remote",
            ),
            _ => (S::INTERNAL_SERVER_ERROR, "Internal"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", format!("invalid body: {e}")))
}

fn parse_identity(s: &str) -> ApiResult<TierIdentity> {
    let t: TierIdentity = s
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", e))?;
    if t == TierIdentity::GMT {
        return Err(TierError::NoController(t).into());
    }
    Ok(t)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

fn ok<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

async fn list_nodes(State(node): State<Node>) -> Response {
    let nodes = match node.registry() {
        Some(r) => r.list(),
        None => vec![node.record()],
    };
    ok(NodeList { nodes })
}

async fn get_node(State(node): State<Node>, Path(id): Path<String>) -> ApiResult<Response> {
    let found = match node.registry() {
        Some(r) => r.get(&id),
        None => (id == node.id()).then(|| node.record()),
    };
    found.map(ok).ok_or_else(|| TierError::UnknownNode(id).into())
}

async fn register_node(State(node): State<Node>, body: Bytes) -> ApiResult<Response> {
    let req: RegisterRequest = parse_body(&body)?;
    if req.node_id.trim().is_empty() {
        return Err(TierError::Validation("node_id must not be empty".into()).into());
    }
    let registration_dst = blocking(move || node.register_node(req).map_err(Into::into)).await?;
    Ok((StatusCode::CREATED, Json(RegisterResponse { registration_dst })).into_response())
}

async fn report_tiers(State(node): State<Node>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let rep: TierReport = parse_body(&body)?;
    let reg = node
        .registry()
        .ok_or(TierError::NoController(TierIdentity::GMT))?;
    reg.update_tiers(&id, rep.tiers)?;
    Ok(ok(reg.get(&id)))
}

/// Where a tier change for `id` has to run.
enum Target {
    Local,
    Remote(ManageClient),
}

fn target(node: &NodeShared, id: &str) -> ApiResult<Target> {
    if id == node.id() {
        return Ok(Target::Local);
    }
    let rec = node
        .registry()
        .and_then(|r| r.get(id))
        .ok_or_else(|| TierError::UnknownNode(id.to_owned()))?;
    let addr = rec.address.ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "Unmanaged",
            format!("node {id} has no management address"),
        )
    })?;
    Ok(Target::Remote(ManageClient::new(&addr)))
}

fn forwarded(node: &NodeShared, id: &str, r: Result<TierChange, ClientError>) -> ApiResult<TierChange> {
    match r {
        Ok(change) => {
            if let Some(reg) = node.registry() {
                let _ = reg.update_tiers(id, change.tiers.clone());
            }
            Ok(change)
        }
        Err(ClientError::Status { status, kind, message }) => Err(ApiError::new(
            StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY),
            &kind,
            message,
        )),
        Err(e) => Err(ApiError::new(StatusCode::BAD_GATEWAY, "NodeUnreachable", format!("node {id}: {e}"))),
    }
}

async fn add_tier(State(node): State<Node>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: TierRequest = parse_body(&body)?;
    let identity = parse_identity(&req.identity)?;
    let t = target(&node, &id)?;
    let change = blocking(move || match t {
        Target::Local => node.add_tier(identity).map_err(Into::into),
        Target::Remote(c) => forwarded(&node, &id, c.add_tier(&id, identity.as_str())),
    })
    .await?;
    Ok((StatusCode::CREATED, Json(change)).into_response())
}

async fn remove_tier(State(node): State<Node>, Path((id, identity)): Path<(String, String)>) -> ApiResult<Response> {
    let identity = parse_identity(&identity)?;
    let t = target(&node, &id)?;
    let change = blocking(move || match t {
        Target::Local => node.remove_tier(identity).map_err(Into::into),
        Target::Remote(c) => forwarded(&node, &id, c.remove_tier(&id, identity.as_str())),
    })
    .await?;
    Ok(ok(change))
}

async fn store_stats(State(node): State<Node>) -> ApiResult<Response> {
    let stats = blocking(move || node.store_stats().map_err(Into::into)).await?;
    Ok(ok(stats))
}

async fn list_demands(State(node): State<Node>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let bad = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", m);
    for k in q.keys() {
        if !["state", "workload", "stage", "cursor", "limit"].contains(&k.as_str()) {
            return Err(bad(format!("unknown query parameter {k:?}")));
        }
    }
    let state = q
        .get("state")
        .map(|s| DemandState::from_label(&s.to_ascii_uppercase()).ok_or_else(|| bad(format!("unknown state {s:?}"))))
        .transpose()?;
    let cursor = q
        .get("cursor")
        .map(|c| c.parse::<u64>().map_err(|_| bad(format!("bad cursor {c:?}"))))
        .transpose()?;
    let limit = q
        .get("limit")
        .map(|l| match l.parse::<usize>() {
            Ok(n) if (1..=MAX_PAGE).contains(&n) => Ok(n),
            _ => Err(bad(format!("limit must be 1..={MAX_PAGE}"))),
        })
        .transpose()?
        .unwrap_or(DEFAULT_PAGE);
    let filter = DemandFilter {
        state,
        workload: q.get("workload").cloned(),
        stage: q.get("stage").cloned(),
    };
    let store = node.store().ok_or(TierError::NoStore)?;
    Ok(ok(store.list_demands(&filter, cursor, limit)))
}

async fn submit_job(State(node): State<Node>, body: Bytes) -> ApiResult<Response> {
    let req: JobRequest = parse_body(&body)?;
    let spec = req.to_spec()?;
    let job_id = blocking(move || node.submit_job(spec).map_err(Into::into)).await?;
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id })).into_response())
}

async fn get_job(State(node): State<Node>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(ok(JobJson::from(&node.job(&id)?)))
}

async fn list_jobs(State(node): State<Node>) -> Response {
    ok(JobList {
        jobs: node.board().list().iter().map(JobJson::from).collect(),
    })
}

async fn schema(Path(tier): Path<String>) -> ApiResult<Response> {
    let tier: TierIdentity = tier
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, "UnknownTier", e))?;
    Ok(ok(SchemaJson {
        tier,
        properties: schema_for(tier).into_iter().map(|p| PropertyJson::from_spec(p, tier)).collect(),
        tier_identities: TierIdentity::CONTROLLED.to_vec(),
    }))
}

async fn backup(State(node): State<Node>, body: Bytes) -> ApiResult<Response> {
    let req: FileRequest = parse_body(&body)?;
    let rep = blocking(move || node.backup(&PathBuf::from(req.file)).map_err(Into::into)).await?;
    Ok(ok(rep))
}

async fn restore(State(node): State<Node>, body: Bytes) -> ApiResult<Response> {
    let req: FileRequest = parse_body(&body)?;
    let rep = blocking(move || node.restore(&PathBuf::from(req.file)).map_err(Into::into)).await?;
    Ok(ok(rep))
}
