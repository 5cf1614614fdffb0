//! A running node: its controllers, store, job board and management link.

use std::net::{SocketAddr, TcpListener};
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use parking_lot::Mutex;
use serde::Serialize;

use super::config::NodeConfiguration;
use super::controller::{bind_error, DgtController, DstController, DwtController, NodeController};
use super::generator::{GeneratorSpec, JobBoard, JobId, JobSpec, JobView, TrainingSets};
use super::registry::{GmtRegistry, NodeRecord, TierCount};
use super::worker::{FaultHook, WorkerSpec};
use super::workload::{WorkloadCatalog, WorkloadDefinition};
use super::{ControllerState, StoreLink, TierError, TierIdentity};
use crate::clock::{Clock, MonotonicClock};
use crate::executor::ExecutorRegistry;
use crate::manage::client::{ClientError, ManageClient};
use crate::manage::types::{RegisterRequest, TierChange};
use crate::manage::ManageServer;
use crate::store::{read_snapshot, write_snapshot, DemandStore, Snapshot, StoreError, StoreStats, Sweeper};

/// Configures and starts a node.
pub struct NodeBuilder {
    config: NodeConfiguration,
    executors: Option<ExecutorRegistry>,
    workloads: Vec<WorkloadDefinition>,
    fault: Option<FaultHook>,
    clock: Option<Arc<dyn Clock>>,
}

impl NodeBuilder {
    pub fn new(config: NodeConfiguration) -> Self {
        NodeBuilder {
            config,
            executors: None,
            workloads: Vec::new(),
            fault: None,
            clock: None,
        }
    }

    /// Replaces the built-in executors.
    pub fn executors(mut self, r: ExecutorRegistry) -> Self {
        self.executors = Some(r);
        self
    }

    pub fn workload(mut self, w: WorkloadDefinition) -> Self {
        self.workloads.push(w);
        self
    }

    pub fn fault_hook(mut self, hook: FaultHook) -> Self {
        self.fault = Some(hook);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn start(self) -> Result<GipsyNode, TierError> {
        let config = self.config;
        config.validate()?;
        let id = config.node_id().to_owned();
        let executors = Arc::new(self.executors.unwrap_or_else(ExecutorRegistry::with_builtins));

        let catalog = Arc::new(WorkloadCatalog::new());
        catalog.insert(WorkloadDefinition::dmarf())?;
        let mut local = self.workloads;
        if let Some(p) = config.workload_file() {
            local.push(WorkloadDefinition::load(&p)?);
        }
        for w in local {
            w.check_executors(&executors)?;
            catalog.insert(w)?;
        }

        let clock = self.clock.unwrap_or_else(|| Arc::new(MonotonicClock));
        let store = Arc::new(DemandStore::with_clock(config.store_config(), clock));
        let is_gmt = config.is_gmt();

        // Nothing has been bound before this point.
        let listener = match config.manage_listen() {
            Some(a) => Some(TcpListener::bind(a).map_err(|e| bind_error(a, e))?),
            None => None,
        };
        let manage_addr = listener.as_ref().map(|l| l.local_addr()).transpose()?;

        let mut dst = DstController::new(&id, store.clone(), config.dst_listen().unwrap_or("127.0.0.1:0"));
        let (link, registry, gmt) = if is_gmt {
            for (w, s, _) in catalog.stages() {
                store.register_stage(&w, &s);
            }
            dst.add_tier()?;
            let addr = dst.address().expect("bound").to_string();
            info!("{id}: registration DST at {addr}");
            (StoreLink::Local(store.clone()), Some(Arc::new(GmtRegistry::new(addr))), None)
        } else {
            let gmt_addr = config.gmt_address().expect("validated").to_owned();
            let client = ManageClient::new(&gmt_addr);
            let req = RegisterRequest {
                node_id: id.clone(),
                address: manage_addr.map(|a| a.to_string()),
                tiers: Vec::new(),
                workloads: catalog.all(),
            };
            let resp = client.register_node(&req).map_err(|e| match e {
                ClientError::Transport(reason) => TierError::GmtUnreachable {
                    address: gmt_addr.clone(),
                    reason,
                },
                ClientError::Status { status: 409, .. } => TierError::DuplicateNodeId(id.clone()),
                ClientError::Status { status, message, .. } => TierError::Remote { status, message },
                ClientError::Decode(m) => TierError::Remote { status: 200, message: m },
            })?;
            info!("{id}: registered with GMT {gmt_addr}, store at {}", resp.registration_dst);
            (StoreLink::Remote(resp.registration_dst), None, Some(client))
        };

        let training = Arc::new(TrainingSets::new());
        let board = Arc::new(JobBoard::new());
        let mut wspec = WorkerSpec::new(link.clone(), executors.clone(), catalog.clone());
        wspec.filter = config.worker_stages();
        wspec.fault = self.fault;
        let gspec = GeneratorSpec {
            link: link.clone(),
            board: board.clone(),
            catalog: catalog.clone(),
            training: training.clone(),
        };
        let sweeper = Sweeper::spawn(store.clone());
        let shared = Arc::new(NodeShared {
            id: id.clone(),
            config: config.clone(),
            executors,
            catalog,
            board,
            training,
            store,
            link,
            registry,
            gmt,
            manage_addr,
            started_wall_ms: crate::clock::wall_clock_ms(),
            tier_lock: Mutex::new(()),
            dgt: Mutex::new(DgtController::new(&id, gspec)),
            dwt: Mutex::new(DwtController::new(&id, wspec)),
            dst: Mutex::new(dst),
            sweeper: Mutex::new(Some(sweeper)),
            manage: Mutex::new(None),
        });
        let node = GipsyNode { shared };

        if let Some(reg) = &node.registry {
            reg.register(node.record())?;
        }
        if let Some(l) = listener {
            *node.manage.lock() = Some(ManageServer::start(l, node.shared.clone())?);
        }
        let mut skip_dst = is_gmt;
        for t in config.initial_tiers() {
            match t {
                TierIdentity::GMT => continue,
                // The registration store counts as the first DST.
                TierIdentity::DST if skip_dst => skip_dst = false,
                _ => {
                    node.add_tier(t)?;
                }
            }
        }
        node.report_tiers();
        Ok(node)
    }
}

/// Starts a node from a validated configuration.
pub fn bootstrap(config: NodeConfiguration) -> Result<GipsyNode, TierError> {
    NodeBuilder::new(config).start()
}

/// State shared by a node and its management server.
pub struct NodeShared {
    id: String,
    config: NodeConfiguration,
    executors: Arc<ExecutorRegistry>,
    catalog: Arc<WorkloadCatalog>,
    board: Arc<JobBoard>,
    training: Arc<TrainingSets>,
    store: Arc<DemandStore>,
    link: StoreLink,
    registry: Option<Arc<GmtRegistry>>,
    gmt: Option<ManageClient>,
    manage_addr: Option<SocketAddr>,
    started_wall_ms: u64,
    tier_lock: Mutex<()>,
    dgt: Mutex<DgtController>,
    dwt: Mutex<DwtController>,
    dst: Mutex<DstController>,
    sweeper: Mutex<Option<Sweeper>>,
    manage: Mutex<Option<ManageServer>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackupReport {
    pub file: String,
    pub warehouse: usize,
    pub training_sets: usize,
}

impl NodeShared {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &NodeConfiguration {
        &self.config
    }

    pub fn is_gmt(&self) -> bool {
        self.registry.is_some()
    }

    pub fn registry(&self) -> Option<&Arc<GmtRegistry>> {
        self.registry.as_ref()
    }

    pub fn executors(&self) -> &Arc<ExecutorRegistry> {
        &self.executors
    }

    pub fn catalog(&self) -> &Arc<WorkloadCatalog> {
        &self.catalog
    }

    pub fn board(&self) -> &Arc<JobBoard> {
        &self.board
    }

    pub fn training_sets(&self) -> &Arc<TrainingSets> {
        &self.training
    }

    pub fn link(&self) -> &StoreLink {
        &self.link
    }

    pub fn manage_address(&self) -> Option<SocketAddr> {
        self.manage_addr
    }

    /// Bound address of this node's own store endpoint.
    pub fn dst_address(&self) -> Option<SocketAddr> {
        self.dst.lock().address()
    }

    /// The store hosted here: always on a GMT node, otherwise once a DST
    /// instance has been started.
    pub fn store(&self) -> Option<&Arc<DemandStore>> {
        (self.is_gmt() || self.dst.lock().state() != ControllerState::Created).then_some(&self.store)
    }

    /// Applies `f` to the controller for `identity`; there is none for GMT.
    pub fn with_controller<R>(
        &self,
        identity: TierIdentity,
        f: impl FnOnce(&mut dyn NodeController) -> R,
    ) -> Result<R, TierError> {
        Ok(match identity {
            TierIdentity::DGT => f(&mut *self.dgt.lock()),
            TierIdentity::DWT => f(&mut *self.dwt.lock()),
            TierIdentity::DST => f(&mut *self.dst.lock()),
            TierIdentity::GMT => return Err(TierError::NoController(TierIdentity::GMT)),
        })
    }

    /// Identity and instance count of the controller for `identity`.
    pub fn controller_by_tier_identity(&self, identity: TierIdentity) -> Result<(TierIdentity, usize), TierError> {
        self.with_controller(identity, |c| (c.identity(), c.instance_count()))
    }

    pub fn add_tier(&self, identity: TierIdentity) -> Result<TierChange, TierError> {
        let change = {
            let _g = self.tier_lock.lock();
            let (instance_id, count) = self.with_controller(identity, |c| c.add_tier().map(|id| (id, c.instance_count())))??;
            info!("{}: added {identity} instance {instance_id}", self.id);
            self.change(identity, instance_id, count)
        };
        self.report_tiers();
        Ok(change)
    }

    pub fn remove_tier(&self, identity: TierIdentity) -> Result<TierChange, TierError> {
        let change = {
            let _g = self.tier_lock.lock();
            let (instance_id, count) =
                self.with_controller(identity, |c| c.remove_tier().map(|id| (id, c.instance_count())))??;
            info!("{}: removed {identity} instance {instance_id}", self.id);
            self.change(identity, instance_id, count)
        };
        self.report_tiers();
        Ok(change)
    }

    fn change(&self, identity: TierIdentity, instance_id: String, count: usize) -> TierChange {
        TierChange {
            node_id: self.id.clone(),
            identity,
            instance_id,
            count,
            tiers: self.tier_counts(),
        }
    }

    pub fn tier_counts(&self) -> Vec<TierCount> {
        let mut out: Vec<TierCount> = TierIdentity::CONTROLLED
            .into_iter()
            .map(|t| {
                self.with_controller(t, |c| TierCount {
                    identity: t,
                    count: c.instance_count(),
                    state: c.state(),
                })
                .expect("controlled identity")
            })
            .collect();
        if self.is_gmt() {
            out.push(TierCount {
                identity: TierIdentity::GMT,
                count: 1,
                state: ControllerState::Running,
            });
        }
        out
    }

    /// This node's registry entry as the GMT should see it.
    pub fn record(&self) -> NodeRecord {
        NodeRecord {
            registered_wall_ms: self.started_wall_ms,
            ..NodeRecord::new(&self.id, self.manage_addr.map(|a| a.to_string()), self.tier_counts())
        }
    }

    /// Pushes current tier counts to the GMT (best effort).
    fn report_tiers(&self) {
        let tiers = self.tier_counts();
        if let Some(reg) = &self.registry {
            let _ = reg.update_tiers(&self.id, tiers);
        } else if let Some(gmt) = &self.gmt {
            if let Err(e) = gmt.report_tiers(&self.id, &tiers) {
                warn!("{}: could not report tiers to GMT: {e}", self.id);
            }
        }
    }

    /// Accepts a node into the registry (GMT only) and registers its
    /// workloads with the store.
    pub fn register_node(&self, req: RegisterRequest) -> Result<String, TierError> {
        let reg = self.registry.as_ref().ok_or(TierError::NoController(TierIdentity::GMT))?;
        for w in &req.workloads {
            w.ordered()?;
        }
        reg.register(NodeRecord::new(&req.node_id, req.address, req.tiers))?;
        for w in req.workloads {
            if self.catalog.get(&w.workload_id).is_none() {
                for s in &w.stages {
                    self.store.register_stage(&w.workload_id, &s.stage_id);
                }
                self.catalog.insert(w)?;
            }
        }
        Ok(reg.registration_dst().to_owned())
    }

    pub fn submit_job(&self, job: JobSpec) -> Result<JobId, TierError> {
        let workload = self
            .catalog
            .get(&job.workload)
            .ok_or_else(|| TierError::UnknownWorkload(job.workload.clone()))?;
        let driver = GeneratorSpec {
            link: self.link.clone(),
            board: self.board.clone(),
            catalog: self.catalog.clone(),
            training: self.training.clone(),
        }
        .driver_for(&job.workload);
        driver.validate(&job)?;
        Ok(self.board.submit(job, workload.stages.len()))
    }

    pub fn job(&self, id: &str) -> Result<JobView, TierError> {
        self.board.get(id).ok_or_else(|| TierError::UnknownJob(id.to_owned()))
    }

    pub fn wait_job(&self, id: &str, timeout: Duration) -> Result<JobView, TierError> {
        self.board
            .wait(id, timeout)
            .ok_or_else(|| TierError::UnknownJob(id.to_owned()))
    }

    /// Stats of the store this node's tiers use.
    pub fn store_stats(&self) -> Result<StoreStats, TierError> {
        match &self.link {
            StoreLink::Local(s) => Ok(s.stats()),
            StoreLink::Remote(_) => self.link.dispatcher().store_stats().map_err(|e| TierError::Remote {
                status: 502,
                message: e.to_string(),
            }),
        }
    }

    pub fn backup(&self, path: &Path) -> Result<BackupReport, TierError> {
        let store = self.store().ok_or(TierError::NoStore)?;
        let snap = Snapshot {
            warehouse: store.warehouse_entries(),
            training_sets: self.training.export(),
        };
        write_snapshot(path, &snap)?;
        Ok(BackupReport {
            file: path.display().to_string(),
            warehouse: snap.warehouse.len(),
            training_sets: snap.training_sets.len(),
        })
    }

    pub fn restore(&self, path: &Path) -> Result<BackupReport, TierError> {
        let store = self.store().ok_or(TierError::NoStore)?;
        let snap = read_snapshot(path)?;
        let (w, t) = (snap.warehouse.len(), snap.training_sets.len());
        self.training.import(&snap.training_sets)?;
        store.restore_warehouse(snap.warehouse).map_err(|e| match e {
            StoreError::Busy(_) => TierError::StoreBusy(e.to_string()),
            other => TierError::Validation(other.to_string()),
        })?;
        Ok(BackupReport {
            file: path.display().to_string(),
            warehouse: w,
            training_sets: t,
        })
    }

    /// Applies to workers started after this call.
    pub fn set_fault_hook(&self, hook: Option<FaultHook>) {
        self.dwt.lock().set_fault_hook(hook);
    }

    /// Stops every tier, the management server and the sweeper.
    pub fn shutdown(&self) {
        if let Some(mut m) = self.manage.lock().take() {
            m.shutdown();
        }
        self.dgt.lock().shutdown();
        self.dwt.lock().shutdown();
        self.dst.lock().shutdown();
        if let Some(mut s) = self.sweeper.lock().take() {
            s.stop();
        }
    }
}

/// Owning handle; dropping it shuts the node down.
pub struct GipsyNode {
    shared: Arc<NodeShared>,
}

impl GipsyNode {
    pub fn shared(&self) -> &Arc<NodeShared> {
        &self.shared
    }
}

impl Deref for GipsyNode {
    type Target = NodeShared;

    fn deref(&self) -> &NodeShared {
        &self.shared
    }
}

impl Drop for GipsyNode {
    fn drop(&mut self) {
        self.shared.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manage::ManageClient;
    use crate::tiers::generator::JobState;

    fn gmt(tiers: &str) -> GipsyNode {
        let cfg = NodeConfiguration::from_pairs([
            ("node.id", "gmt"),
            ("tiers.initial", tiers),
            ("dst.listen", "127.0.0.1:0"),
            ("manage.listen", "127.0.0.1:0"),
            ("lease.ms", "500"),
        ])
        .unwrap();
        bootstrap(cfg).unwrap()
    }

    #[test]
    fn gmt_has_no_controller() {
        let n = gmt("GMT,DST");
        assert!(matches!(
            n.controller_by_tier_identity(TierIdentity::GMT),
            Err(TierError::NoController(TierIdentity::GMT))
        ));
        assert_eq!(n.controller_by_tier_identity(TierIdentity::DST).unwrap().1, 1);
    }

    #[test]
    fn dwt_add_remove_round_trip() {
        let n = gmt("GMT,DST");
        let before = n.controller_by_tier_identity(TierIdentity::DWT).unwrap().1;
        let c = n.add_tier(TierIdentity::DWT).unwrap();
        assert_eq!(c.count, before + 1);
        assert_eq!(n.registry().unwrap().get("gmt").unwrap().count(TierIdentity::DWT), before + 1);
        n.remove_tier(TierIdentity::DWT).unwrap();
        assert_eq!(n.controller_by_tier_identity(TierIdentity::DWT).unwrap().1, before);
        assert!(matches!(n.remove_tier(TierIdentity::DWT), Err(TierError::NothingToRemove(_))));
    }

    #[test]
    fn echo_job_runs_locally() {
        let n = gmt("GMT,DST,DGT,DWT");
        n.catalog().insert(WorkloadDefinition::chain("e", &[("a", "echo"), ("b", "echo")])).unwrap();
        n.store().unwrap().register_stage("e", "a");
        n.store().unwrap().register_stage("e", "b");
        let id = n.submit_job(JobSpec::raw("e", b"hi".to_vec())).unwrap();
        let v = n.wait_job(&id, Duration::from_secs(10)).unwrap();
        assert_eq!(v.state, JobState::Done, "{:?}", v.error);
        assert_eq!(v.result.as_deref(), Some(&b"hi"[..]));
        assert!(matches!(n.submit_job(JobSpec::raw("nope", vec![])), Err(TierError::UnknownWorkload(_))));
    }

    #[test]
    fn remote_node_registers_and_is_steered() {
        let g = gmt("GMT,DST,DGT");
        let gaddr = g.manage_address().unwrap().to_string();
        let cfg = NodeConfiguration::from_pairs([
            ("node.id", "w1"),
            ("tiers.initial", "DWT"),
            ("gmt.address", gaddr.as_str()),
            ("manage.listen", "127.0.0.1:0"),
        ])
        .unwrap();
        let w = NodeBuilder::new(cfg.clone())
            .workload(WorkloadDefinition::chain("e", &[("a", "echo")]))
            .start()
            .unwrap();
        assert_eq!(g.registry().unwrap().get("w1").unwrap().count(TierIdentity::DWT), 1);
        assert!(matches!(bootstrap(cfg), Err(TierError::DuplicateNodeId(_))));

        let c = ManageClient::new(&gaddr);
        let change = c.add_tier("w1", "DWT").unwrap();
        assert_eq!(change.count, 2);
        assert_eq!(w.controller_by_tier_identity(TierIdentity::DWT).unwrap().1, 2);
        assert_eq!(g.registry().unwrap().get("w1").unwrap().count(TierIdentity::DWT), 2);

        // The remote worker serves the GMT's store.
        let id = g.submit_job(JobSpec::raw("e", b"x".to_vec())).unwrap();
        let v = g.wait_job(&id, Duration::from_secs(10)).unwrap();
        assert_eq!(v.result.as_deref(), Some(&b"x"[..]), "{:?}", v.error);
        drop(w);
    }

    #[test]
    fn unreachable_gmt() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap().to_string();
        drop(l);
        let cfg = NodeConfiguration::from_pairs([("node.id", "w"), ("tiers.initial", "DWT"), ("gmt.address", addr.as_str())])
            .unwrap();
        assert!(matches!(bootstrap(cfg), Err(TierError::GmtUnreachable { .. })));
    }
}
