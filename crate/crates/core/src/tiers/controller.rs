use std::net::SocketAddr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::generator::{DemandGenerator, GeneratorSpec};
use super::worker::{DemandWorker, FaultHook, WorkerSpec};
use super::{TierError, TierIdentity};
use crate::store::DemandStore;
use crate::transport::{StoreServer, StoreService};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerState {
    Created,
    Running,
    Stopped,
}

/// Owns the running instances of one tier on one node.
pub trait NodeController: Send {
    fn identity(&self) -> TierIdentity;

    /// Starts one more instance and returns its id.
    fn add_tier(&mut self) -> Result<String, TierError>;

    /// Stops the newest instance and returns its id.
    fn remove_tier(&mut self) -> Result<String, TierError>;

    fn instances(&self) -> Vec<String>;

    fn instance_count(&self) -> usize {
        self.instances().len()
    }

    fn state(&self) -> ControllerState;

    /// Stops every instance.
    fn shutdown(&mut self) {
        while self.remove_tier().is_ok() {}
    }
}

/// Created until the first add, then running or stopped by instance count.
#[derive(Debug, Default)]
struct Lifecycle {
    started_once: bool,
    next: u64,
}

impl Lifecycle {
    fn state(&self, count: usize) -> ControllerState {
        match (self.started_once, count) {
            (false, _) => ControllerState::Created,
            (true, 0) => ControllerState::Stopped,
            _ => ControllerState::Running,
        }
    }

    fn next_id(&mut self, node: &str, t: TierIdentity) -> String {
        self.started_once = true;
        self.next += 1;
        format!("{node}/{t}-{}", self.next)
    }
}

/// Store tier: each instance is an acceptor on the node's store endpoint.
/// The store itself outlives its instances.
pub struct DstController {
    node: String,
    store: Arc<DemandStore>,
    listen: String,
    server: Option<StoreServer>,
    bound: Option<SocketAddr>,
    ids: Vec<String>,
    life: Lifecycle,
}

impl DstController {
    pub fn new(node: &str, store: Arc<DemandStore>, listen: &str) -> Self {
        DstController {
            node: node.to_owned(),
            store,
            listen: listen.to_owned(),
            server: None,
            bound: None,
            ids: Vec::new(),
            life: Lifecycle::default(),
        }
    }

    /// Address the endpoint is (or was last) bound to.
    pub fn address(&self) -> Option<SocketAddr> {
        self.bound
    }

    pub fn store(&self) -> &Arc<DemandStore> {
        &self.store
    }
}

pub(crate) fn bind_error(addr: &str, e: std::io::Error) -> TierError {
    if e.kind() == std::io::ErrorKind::AddrInUse {
        TierError::PortInUse(addr.to_owned())
    } else {
        TierError::Io(e)
    }
}

impl NodeController for DstController {
    fn identity(&self) -> TierIdentity {
        TierIdentity::DST
    }

    fn add_tier(&mut self) -> Result<String, TierError> {
        match &mut self.server {
            Some(s) => s.add_acceptor()?,
            None => {
                // Rebind the port we had before so clients can reconnect.
                let addr = self.bound.map_or_else(|| self.listen.clone(), |a| a.to_string());
                let s = StoreServer::start(&addr, StoreService::new(self.store.clone()))
                    .map_err(|e| bind_error(&addr, e))?;
                self.bound = Some(s.local_addr());
                self.server = Some(s);
            }
        }
        let id = self.life.next_id(&self.node, TierIdentity::DST);
        self.ids.push(id.clone());
        Ok(id)
    }

    fn remove_tier(&mut self) -> Result<String, TierError> {
        let id = self.ids.pop().ok_or(TierError::NothingToRemove(TierIdentity::DST))?;
        if self.ids.is_empty() {
            if let Some(mut s) = self.server.take() {
                s.shutdown();
            }
        } else if let Some(s) = &mut self.server {
            s.remove_acceptor();
        }
        Ok(id)
    }

    fn instances(&self) -> Vec<String> {
        self.ids.clone()
    }

    fn state(&self) -> ControllerState {
        self.life.state(self.ids.len())
    }
}

pub struct DwtController {
    node: String,
    spec: WorkerSpec,
    workers: Vec<DemandWorker>,
    life: Lifecycle,
}

impl DwtController {
    pub fn new(node: &str, spec: WorkerSpec) -> Self {
        DwtController {
            node: node.to_owned(),
            spec,
            workers: Vec::new(),
            life: Lifecycle::default(),
        }
    }

    /// Applies to workers started from now on.
    pub fn set_fault_hook(&mut self, hook: Option<FaultHook>) {
        self.spec.fault = hook;
    }

    pub fn set_filter(&mut self, filter: Vec<String>) {
        self.spec.filter = filter;
    }

    pub fn workers(&self) -> &[DemandWorker] {
        &self.workers
    }
}

impl NodeController for DwtController {
    fn identity(&self) -> TierIdentity {
        TierIdentity::DWT
    }

    fn add_tier(&mut self) -> Result<String, TierError> {
        let id = self.life.next_id(&self.node, TierIdentity::DWT);
        let mut w = DemandWorker::new(id.clone(), self.spec.clone());
        w.start_worker();
        self.workers.push(w);
        Ok(id)
    }

    fn remove_tier(&mut self) -> Result<String, TierError> {
        let mut w = self.workers.pop().ok_or(TierError::NothingToRemove(TierIdentity::DWT))?;
        w.stop_worker();
        Ok(w.name().to_owned())
    }

    fn instances(&self) -> Vec<String> {
        self.workers.iter().map(|w| w.name().to_owned()).collect()
    }

    fn state(&self) -> ControllerState {
        self.life.state(self.workers.len())
    }
}

pub struct DgtController {
    node: String,
    spec: GeneratorSpec,
    generators: Vec<(String, DemandGenerator)>,
    life: Lifecycle,
}

impl DgtController {
    pub fn new(node: &str, spec: GeneratorSpec) -> Self {
        DgtController {
            node: node.to_owned(),
            spec,
            generators: Vec::new(),
            life: Lifecycle::default(),
        }
    }
}

impl NodeController for DgtController {
    fn identity(&self) -> TierIdentity {
        TierIdentity::DGT
    }

    fn add_tier(&mut self) -> Result<String, TierError> {
        let id = self.life.next_id(&self.node, TierIdentity::DGT);
        let mut g = DemandGenerator::new(id.clone(), self.spec.clone());
        g.start();
        self.generators.push((id.clone(), g));
        Ok(id)
    }

    fn remove_tier(&mut self) -> Result<String, TierError> {
        let (id, mut g) = self.generators.pop().ok_or(TierError::NothingToRemove(TierIdentity::DGT))?;
        g.stop();
        Ok(id)
    }

    fn instances(&self) -> Vec<String> {
        self.generators.iter().map(|(id, _)| id.clone()).collect()
    }

    fn state(&self) -> ControllerState {
        self.life.state(self.generators.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreConfig;

    #[test]
    fn dst_round_trip_releases_port() {
        let store = Arc::new(DemandStore::new(StoreConfig::default()));
        let mut c = DstController::new("n", store, "127.0.0.1:0");
        assert_eq!(c.state(), ControllerState::Created);
        c.add_tier().unwrap();
        let addr = c.address().unwrap();
        assert!(std::net::TcpStream::connect(addr).is_ok());
        c.add_tier().unwrap();
        assert_eq!(c.instance_count(), 2);
        c.remove_tier().unwrap();
        c.remove_tier().unwrap();
        assert_eq!(c.state(), ControllerState::Stopped);
        assert!(matches!(c.remove_tier(), Err(TierError::NothingToRemove(TierIdentity::DST))));
        c.add_tier().unwrap();
        assert_eq!(c.address(), Some(addr));
    }

    #[test]
    fn port_in_use() {
        let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = taken.local_addr().unwrap().to_string();
        let store = Arc::new(DemandStore::new(StoreConfig::default()));
        let mut c = DstController::new("n", store, &addr);
        assert!(matches!(c.add_tier(), Err(TierError::PortInUse(a)) if a == addr));
        assert_eq!(c.instance_count(), 0);
    }
}
