//! JSON bodies of the management API.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::demand::DemandId;
use crate::pipeline::abi::{self, Record, RecordKind};
use crate::pipeline::{JobMode, ModuleParams, Param, SourceFormat};
use crate::tiers::config::PropertySpec;
use crate::tiers::generator::{JobSpec, JobView};
use crate::tiers::registry::{NodeRecord, TierCount};
use crate::tiers::workload::WorkloadDefinition;
use crate::tiers::{TierError, TierIdentity};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub node_id: String,
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default)]
    pub tiers: Vec<TierCount>,
    #[serde(default)]
    pub workloads: Vec<WorkloadDefinition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    /// Store endpoint the node's tiers should use.
    pub registration_dst: String,
}

/// Body of a tier add. The identity stays a string so a bad value gets a
/// validation error rather than a parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierRequest {
    pub identity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierChange {
    pub node_id: String,
    pub identity: TierIdentity,
    pub instance_id: String,
    /// Instances of `identity` on the node after the change.
    pub count: usize,
    pub tiers: Vec<TierCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierReport {
    pub tiers: Vec<TierCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeList {
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsJson {
    #[serde(default)]
    pub preprocessing: Vec<Param>,
    #[serde(default)]
    pub feature_extraction: Vec<Param>,
    #[serde(default)]
    pub classification: Vec<Param>,
}

impl ParamsJson {
    pub fn to_module_params(&self) -> ModuleParams {
        let mut p = ModuleParams::new();
        p.set_preprocessing_params(self.preprocessing.clone());
        p.set_feature_extraction_params(self.feature_extraction.clone());
        p.set_classification_params(self.classification.clone());
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub workload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_base64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default)]
    pub params: ParamsJson,
}

impl JobRequest {
    /// Checks field syntax; workload-specific rules are left to the driver.
    pub fn to_spec(&self) -> Result<JobSpec, TierError> {
        let input = match (&self.input_base64, &self.input_text) {
            (Some(b), None) => B64
                .decode(b.trim())
                .map_err(|e| TierError::BadInput(format!("input_base64: {e}")))?,
            (None, Some(t)) => t.clone().into_bytes(),
            _ => {
                return Err(TierError::Validation(
                    "exactly one of input_base64 and input_text is required".into(),
                ))
            }
        };
        let mode = self
            .mode
            .as_deref()
            .map(str::parse::<JobMode>)
            .transpose()
            .map_err(|e| TierError::Validation(format!("mode: {e}")))?;
        let format = self
            .format
            .as_deref()
            .map(str::parse::<SourceFormat>)
            .transpose()
            .map_err(|e| TierError::Validation(format!("format: {e}")))?;
        Ok(JobSpec {
            workload: self.workload.clone(),
            mode,
            input,
            format,
            params: self.params.to_module_params(),
            speaker: self.speaker.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobJson {
    pub job_id: String,
    pub workload: String,
    pub mode: Option<JobMode>,
    pub state: String,
    /// Last stage reached.
    pub stage: Option<String>,
    pub stages_done: usize,
    pub stages_total: usize,
    pub result_ready: bool,
    pub result_base64: Option<String>,
    /// Readable form of a pipeline result, when it is one.
    pub result: Option<serde_json::Value>,
    pub error: Option<String>,
    pub demands: Vec<DemandId>,
    pub submitted_wall_ms: u64,
    pub finished_wall_ms: Option<u64>,
}

impl From<&JobView> for JobJson {
    fn from(v: &JobView) -> Self {
        JobJson {
            job_id: v.job_id.clone(),
            workload: v.workload.clone(),
            mode: v.mode,
            state: serde_json::to_value(v.state)
                .ok()
                .and_then(|s| s.as_str().map(str::to_owned))
                .unwrap_or_default(),
            stage: v.stage.clone(),
            stages_done: v.stages_done,
            stages_total: v.stages_total,
            result_ready: v.result.is_some(),
            result_base64: v.result.as_ref().map(|r| B64.encode(r)),
            result: v.result.as_deref().and_then(decode_result),
            error: v.error.clone(),
            demands: v.demands.clone(),
            submitted_wall_ms: v.submitted_wall_ms,
            finished_wall_ms: v.finished_wall_ms,
        }
    }
}

/// JSON view of a result-set or training-set record.
pub fn decode_result(bytes: &[u8]) -> Option<serde_json::Value> {
    let rec = Record::decode(bytes).ok()?;
    let body = rec.field(abi::TAG_BODY).ok()?;
    match rec.kind {
        RecordKind::ResultSet => {
            let rs = abi::decode_result_set::<Real>(body).ok()?;
            Some(serde_json::json!({
                "kind": "result_set",
                "top": rs.top().map(|r| r.speaker_id.clone()),
                "ranking": rs.ranking,
            }))
        }
        RecordKind::TrainingSet => {
            let ts = abi::decode_training_set::<Real>(body).ok()?;
            Some(serde_json::json!({
                "kind": "training_set",
                "file": ts.meta.filename(),
                "speakers": ts.speakers.iter().map(|(id, m)| (id.clone(), m.count)).collect::<std::collections::BTreeMap<_, _>>(),
            }))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobList {
    pub jobs: Vec<JobJson>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyJson {
    pub key: String,
    pub kind: String,
    pub description: String,
    pub default: Option<String>,
    pub required: bool,
}

impl PropertyJson {
    pub fn from_spec(p: &PropertySpec, tier: TierIdentity) -> Self {
        PropertyJson {
            key: p.key.to_owned(),
            kind: serde_json::to_value(p.kind)
                .ok()
                .and_then(|k| k.as_str().map(str::to_owned))
                .unwrap_or_default(),
            description: p.description.to_owned(),
            default: p.default.map(str::to_owned),
            required: p.required_for.contains(&tier),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaJson {
    pub tier: TierIdentity,
    pub properties: Vec<PropertyJson>,
    /// Identities a tier can be added or removed for.
    pub tier_identities: Vec<TierIdentity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRequest {
    pub file: String,
}
