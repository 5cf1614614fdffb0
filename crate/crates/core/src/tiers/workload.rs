//! Declarative workloads: a chain of stages, each bound to an executor.
//!
//! ```toml
//! workload_id = "echo2"
//!
//! [[stages]]
//! stage_id = "first"
//! executor_id = "echo"
//! next_stage = "second"
//!
//! [[stages]]
//! stage_id = "second"
//! executor_id = "echo"
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::TierError;
use crate::executor::ExecutorRegistry;
use crate::pipeline::executors as dmarf;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDef {
    pub stage_id: String,
    pub executor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadDefinition {
    pub workload_id: String,
    pub stages: Vec<StageDef>,
}

impl WorkloadDefinition {
    /// A chain in the given order.
    pub fn chain(workload_id: &str, stages: &[(&str, &str)]) -> Self {
        let stages = stages
            .iter()
            .enumerate()
            .map(|(i, (s, e))| StageDef {
                stage_id: (*s).to_owned(),
                executor_id: (*e).to_owned(),
                next_stage: stages.get(i + 1).map(|(n, _)| (*n).to_owned()),
            })
            .collect();
        WorkloadDefinition {
            workload_id: workload_id.to_owned(),
            stages,
        }
    }

    /// The speaker-recognition pipeline.
    pub fn dmarf() -> Self {
        Self::chain(
            dmarf::WORKLOAD,
            &[
                ("load", dmarf::LOAD),
                ("preprocess", dmarf::PREPROCESS),
                ("extract", dmarf::EXTRACT),
                ("classify_or_train", dmarf::CLASSIFY_OR_TRAIN),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self, TierError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, TierError> {
        let w: WorkloadDefinition = toml::from_str(text).map_err(|e| TierError::InvalidWorkload(e.to_string()))?;
        w.ordered()?;
        Ok(w)
    }

    /// Stages from first to final. Fails unless the graph is one simple chain.
    pub fn ordered(&self) -> Result<Vec<&StageDef>, TierError> {
        let bad = |m: String| Err(TierError::InvalidWorkload(format!("{}: {m}", self.workload_id)));
        if self.workload_id.is_empty() || self.workload_id.contains('/') {
            return bad("workload id must be non-empty and contain no '/'".into());
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        let mut by_id = BTreeMap::new();
        for s in &self.stages {
            if s.stage_id.is_empty() || s.stage_id.contains('/') {
                return bad(format!("bad stage id {:?}", s.stage_id));
            }
            if by_id.insert(s.stage_id.as_str(), s).is_some() {
                return bad(format!("duplicate stage {}", s.stage_id));
            }
        }
        let mut targets = HashSet::new();
        for s in &self.stages {
            if let Some(n) = &s.next_stage {
                if !by_id.contains_key(n.as_str()) {
                    return bad(format!("stage {} points at unknown stage {n}", s.stage_id));
                }
                if !targets.insert(n.as_str()) {
                    return bad(format!("stage {n} has more than one predecessor"));
                }
            }
        }
        let heads: Vec<_> = self.stages.iter().filter(|s| !targets.contains(s.stage_id.as_str())).collect();
        if heads.len() != 1 {
            return bad("stages must form a single chain".into());
        }
        let mut out = vec![heads[0]];
        while let Some(n) = &out.last().expect("non-empty").next_stage {
            out.push(by_id[n.as_str()]);
        }
        if out.len() != self.stages.len() {
            return bad("stages must form a single chain".into());
        }
        Ok(out)
    }

    pub fn first_stage(&self) -> &StageDef {
        self.ordered().expect("validated")[0]
    }

    pub fn check_executors(&self, registry: &ExecutorRegistry) -> Result<(), TierError> {
        for s in &self.stages {
            if !registry.contains(&s.executor_id) {
                return Err(TierError::InvalidWorkload(format!(
                    "{}: stage {} uses unknown executor {}",
                    self.workload_id, s.stage_id, s.executor_id
                )));
            }
        }
        Ok(())
    }
}

/// Workloads known to a node.
#[derive(Debug, Default)]
pub struct WorkloadCatalog {
    by_id: RwLock<BTreeMap<String, WorkloadDefinition>>,
}

impl WorkloadCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a definition after checking its shape. Executors
    /// are checked by whoever runs them.
    pub fn insert(&self, w: WorkloadDefinition) -> Result<(), TierError> {
        w.ordered()?;
        self.by_id.write().insert(w.workload_id.clone(), w);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<WorkloadDefinition> {
        self.by_id.read().get(id).cloned()
    }

    pub fn all(&self) -> Vec<WorkloadDefinition> {
        self.by_id.read().values().cloned().collect()
    }

    /// `(workload, stage, executor)` for every stage.
    pub fn stages(&self) -> Vec<(String, String, String)> {
        self.by_id
            .read()
            .values()
            .flat_map(|w| {
                w.stages
                    .iter()
                    .map(|s| (w.workload_id.clone(), s.stage_id.clone(), s.executor_id.clone()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn executor_for(&self, workload: &str, stage: &str) -> Option<String> {
        self.by_id
            .read()
            .get(workload)?
            .stages
            .iter()
            .find(|s| s.stage_id == stage)
            .map(|s| s.executor_id.clone())
    }
}
