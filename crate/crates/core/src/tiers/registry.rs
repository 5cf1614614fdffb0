//! The GMT's view of the network: which nodes exist and what tiers they run.

use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::controller::ControllerState;
use super::{TierError, TierIdentity};
use crate::clock::wall_clock_ms;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCount {
    pub identity: TierIdentity,
    pub count: usize,
    pub state: ControllerState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: String,
    /// Management API address, if the node serves one.
    pub address: Option<String>,
    pub tiers: Vec<TierCount>,
    pub registered_wall_ms: u64,
}

impl NodeRecord {
    pub fn new(node_id: &str, address: Option<String>, tiers: Vec<TierCount>) -> Self {
        NodeRecord {
            node_id: node_id.to_owned(),
            address,
            tiers,
            registered_wall_ms: wall_clock_ms(),
        }
    }

    pub fn count(&self, identity: TierIdentity) -> usize {
        self.tiers.iter().find(|t| t.identity == identity).map_or(0, |t| t.count)
    }
}

#[derive(Debug)]
pub struct GmtRegistry {
    registration_dst: String,
    nodes: Mutex<IndexMap<String, NodeRecord>>,
}

impl GmtRegistry {
    pub fn new(registration_dst: impl Into<String>) -> Self {
        GmtRegistry {
            registration_dst: registration_dst.into(),
            nodes: Mutex::default(),
        }
    }

    /// Store address handed to registering nodes.
    pub fn registration_dst(&self) -> &str {
        &self.registration_dst
    }

    pub fn register(&self, record: NodeRecord) -> Result<(), TierError> {
        let mut nodes = self.nodes.lock();
        if nodes.contains_key(&record.node_id) {
            return Err(TierError::DuplicateNodeId(record.node_id));
        }
        nodes.insert(record.node_id.clone(), record);
        Ok(())
    }

    pub fn update_tiers(&self, node_id: &str, tiers: Vec<TierCount>) -> Result<(), TierError> {
        let mut nodes = self.nodes.lock();
        let rec = nodes
            .get_mut(node_id)
            .ok_or_else(|| TierError::UnknownNode(node_id.to_owned()))?;
        rec.tiers = tiers;
        Ok(())
    }

    pub fn get(&self, node_id: &str) -> Option<NodeRecord> {
        self.nodes.lock().get(node_id).cloned()
    }

    /// Nodes in registration order.
    pub fn list(&self) -> Vec<NodeRecord> {
        self.nodes.lock().values().cloned().collect()
    }

    /// Sum of `identity` instances across all nodes.
    pub fn total(&self, identity: TierIdentity) -> usize {
        self.nodes.lock().values().map(|n| n.count(identity)).sum()
    }
}
