//! Node bootstrap and tier lifecycle.

pub mod config;
pub mod controller;
pub mod generator;
pub mod node;
pub mod registry;
pub mod worker;
pub mod workload;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandType;
use crate::store::DemandStore;
use crate::transport::{DemandDispatcher, InProcessAgent, StoreService, TcpAgent};

pub use config::{load_config, ConfigError, NodeConfiguration};
pub use controller::{ControllerState, NodeController};
pub use generator::{JobBoard, JobId, JobSpec, JobState, JobView};
pub use node::{bootstrap, GipsyNode};
pub use registry::{GmtRegistry, NodeRecord, TierCount};
pub use worker::{DemandWorker, FaultAction, FaultHook};
pub use workload::{StageDef, WorkloadCatalog, WorkloadDefinition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TierIdentity {
    DGT,
    DWT,
    DST,
    GMT,
}

impl TierIdentity {
    pub const ALL: [TierIdentity; 4] = [TierIdentity::DGT, TierIdentity::DWT, TierIdentity::DST, TierIdentity::GMT];
    /// The identities a controller exists for.
    pub const CONTROLLED: [TierIdentity; 3] = [TierIdentity::DGT, TierIdentity::DWT, TierIdentity::DST];

    pub fn as_str(self) -> &'static str {
        match self {
            TierIdentity::DGT => "DGT",
            TierIdentity::DWT => "DWT",
            TierIdentity::DST => "DST",
            TierIdentity::GMT => "GMT",
        }
    }
}

impl fmt::Display for TierIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TierIdentity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown tier identity {s:?} (expected DGT, DWT, DST or GMT)"))
    }
}

#[derive(Debug, Error)]
pub enum TierError {
    #[error("no controller for tier {0}")]
    NoController(TierIdentity),
    #[error("no {0} instance to remove")]
    NothingToRemove(TierIdentity),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("GMT unreachable at {address}: {reason}")]
    GmtUnreachable { address: String, reason: String },
    #[error("address in use: {0}")]
    PortInUse(String),
    #[error("node id {0:?} is already registered")]
    DuplicateNodeId(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown workload {0:?}")]
    UnknownWorkload(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("{0}")]
    Validation(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("stage {stage} failed: {cause}")]
    StageFailed { stage: String, cause: String },
    #[error("unsupported demand type {0:?}")]
    UnsupportedDemandType(DemandType),
    #[error("interrupted by shutdown")]
    Interrupted,
    #[error("node does not host a store")]
    NoStore,
    #[error("store busy: {0}")]
    StoreBusy(String),
    #[error("snapshot: {0}")]
    Snapshot(#[from] crate::store::SnapshotError),
    #[error("remote node answered {status}: {message}")]
    Remote { status: u16, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a tier instance reaches the demand store.
#[derive(Clone)]
pub enum StoreLink {
    Local(Arc<DemandStore>),
    Remote(String),
}

impl StoreLink {
    pub fn dispatcher(&self) -> DemandDispatcher {
        match self {
            StoreLink::Local(store) => {
                DemandDispatcher::new(Box::new(InProcessAgent::new(StoreService::new(store.clone()))))
            }
            StoreLink::Remote(addr) => DemandDispatcher::new(Box::new(TcpAgent::new(addr.clone()))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            StoreLink::Local(_) => "in-process".to_owned(),
            StoreLink::Remote(a) => a.clone(),
        }
    }
}

impl fmt::Debug for StoreLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_parse() {
        for t in TierIdentity::ALL {
            assert_eq!(t.as_str().parse::<TierIdentity>().unwrap(), t);
        }
        assert_eq!("dwt".parse::<TierIdentity>().unwrap(), TierIdentity::DWT);
        assert!("XYZ".parse::<TierIdentity>().is_err());
    }
}
