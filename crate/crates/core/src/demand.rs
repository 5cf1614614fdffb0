//! Demands: the unit of work, their identifiers, signatures and lifecycle.
//!
//! Nothing executes without a demand. A demand is identified twice: by a
//! random [`DemandId`] that is unique per request, and by a
//! [`DemandSignature`] derived from what is being computed. Two demands for
//! the same computation share a signature and therefore share a cached
//! result.
//!
//! # Signature layout
//!
//! The signature digest is SHA-256 over the following bytes, with every
//! length a big-endian `u64`:
//!
//! ```text
//! len(workload_id) || workload_id (UTF-8)
//! len(stage_id)    || stage_id    (UTF-8)
//! len(payload)     || payload
//! ```
//!
//! The content-kind tag of the payload is not part of the digest.
//!
//! # Canonical encoding
//!
//! [`Demand::encode`] produces the form used on the wire and in the store
//! (see [`crate::codec`] for primitive layout):
//!
//! ```text
//! id              16 bytes (UUID, big-endian)
//! workload_id     str
//! stage_id        str
//! digest          32 bytes
//! dtype           u8   (0 Intensional, 1 Procedural, 2 Resource, 3 System)
//! state           u8   (0 Pending, 1 InProcess, 2 Completed, 3 Failed)
//! content_kind    u8
//! payload         bytes
//! attempts        u32
//! created_at      u64  (monotonic ms of the creating process)
//! created_wall    u64  (unix ms, display only)
//! leased_at       opt<u64>
//! lease_deadline  opt<u64>
//! result          opt<bytes>
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::{wall_clock_ms, Clock, MonotonicClock};
use crate::codec::{CodecError, Reader, Writer};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandId(Uuid);

impl DemandId {
    pub fn generate() -> Self {
        DemandId(Uuid::new_v4())
    }

    pub fn from_bytes(b: [u8; 16]) -> Self {
        DemandId(Uuid::from_bytes(b))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        self.0.as_bytes()
    }
}

impl fmt::Display for DemandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.hyphenated().fmt(f)
    }
}

impl fmt::Debug for DemandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DemandId({})", self.0.hyphenated())
    }
}

impl FromStr for DemandId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(DemandId)
    }
}

impl Serialize for DemandId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DemandId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of a computation: which stage of which workload, over which input.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSignature {
    pub workload_id: String,
    pub stage_id: String,
    pub digest: [u8; 32],
}

impl DemandSignature {
    pub fn compute(workload_id: &str, stage_id: &str, payload: &[u8]) -> Self {
        let mut h = Sha256::new();
        for part in [workload_id.as_bytes(), stage_id.as_bytes(), payload] {
            h.update((part.len() as u64).to_be_bytes());
            h.update(part);
        }
        DemandSignature {
            workload_id: workload_id.to_owned(),
            stage_id: stage_id.to_owned(),
            digest: h.finalize().into(),
        }
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.str(&self.workload_id).str(&self.stage_id).raw(&self.digest);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(DemandSignature {
            workload_id: r.string()?,
            stage_id: r.string()?,
            digest: r.array()?,
        })
    }
}

/// `workload/stage/hex-digest`
impl fmt::Display for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.workload_id, self.stage_id, self.digest_hex())
    }
}

impl fmt::Debug for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DemandSignature({self})")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed signature text: {0}")]
pub struct SignatureParseError(pub String);

impl FromStr for DemandSignature {
    type Err = SignatureParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SignatureParseError(s.to_owned());
        let (rest, hexpart) = s.rsplit_once('/').ok_or_else(err)?;
        let (workload, stage) = rest.split_once('/').ok_or_else(err)?;
        let mut digest = [0u8; 32];
        hex::decode_to_slice(hexpart, &mut digest).map_err(|_| err())?;
        Ok(DemandSignature {
            workload_id: workload.to_owned(),
            stage_id: stage.to_owned(),
            digest,
        })
    }
}

pub fn compute_signature(workload_id: &str, stage_id: &str, payload: &[u8]) -> DemandSignature {
    DemandSignature::compute(workload_id, stage_id, payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemandType {
    Intensional,
    Procedural,
    Resource,
    System,
}

impl DemandType {
    pub const ALL: [DemandType; 4] = [
        DemandType::Intensional,
        DemandType::Procedural,
        DemandType::Resource,
        DemandType::System,
    ];

    pub fn code(self) -> u8 {
        match self {
            DemandType::Intensional => 0,
            DemandType::Procedural => 1,
            DemandType::Resource => 2,
            DemandType::System => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemandState {
    Pending,
    InProcess,
    Completed,
    Failed,
}

impl DemandState {
    pub const ALL: [DemandState; 4] = [
        DemandState::Pending,
        DemandState::InProcess,
        DemandState::Completed,
        DemandState::Failed,
    ];

    pub fn code(self) -> u8 {
        match self {
            DemandState::Pending => 0,
            DemandState::InProcess => 1,
            DemandState::Completed => 2,
            DemandState::Failed => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// Upper-case label used in management output.
    pub fn label(self) -> &'static str {
        match self {
            DemandState::Pending => "PENDING",
            DemandState::InProcess => "INPROCESS",
            DemandState::Completed => "COMPLETED",
            DemandState::Failed => "FAILED",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.label().eq_ignore_ascii_case(s))
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, DemandState::Completed | DemandState::Failed)
    }

    pub fn is_live(self) -> bool {
        !self.is_terminal()
    }
}

impl fmt::Display for DemandState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Tag describing how payload bytes are to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ContentKind(pub u8);

impl ContentKind {
    pub const RAW: ContentKind = ContentKind(0);
    /// A stage-ABI record (see `pipeline::abi`).
    pub const RECORD: ContentKind = ContentKind(1);
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Payload {
    pub kind: ContentKind,
    pub bytes: Vec<u8>,
}

impl Payload {
    pub fn raw(bytes: impl Into<Vec<u8>>) -> Self {
        Payload {
            kind: ContentKind::RAW,
            bytes: bytes.into(),
        }
    }

    pub fn record(bytes: impl Into<Vec<u8>>) -> Self {
        Payload {
            kind: ContentKind::RECORD,
            bytes: bytes.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DemandEvent {
    Withdraw { leased_at: u64, deadline: u64 },
    DepositResult(Vec<u8>),
    LeaseExpire,
    Exhaust,
}

impl DemandEvent {
    pub fn name(&self) -> &'static str {
        match self {
            DemandEvent::Withdraw { .. } => "Withdraw",
            DemandEvent::DepositResult(_) => "DepositResult",
            DemandEvent::LeaseExpire => "LeaseExpire",
            DemandEvent::Exhaust => "Exhaust",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DemandError {
    #[error("illegal transition: {event} in state {state}")]
    IllegalTransition { state: DemandState, event: &'static str },
    #[error("lease deadline {deadline} is not after lease start {leased_at}")]
    InvalidLease { leased_at: u64, deadline: u64 },
}

/// Immutable snapshot of a demand. [`Demand::transition`] returns a new value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demand {
    id: DemandId,
    signature: DemandSignature,
    dtype: DemandType,
    state: DemandState,
    payload: Payload,
    attempts: u32,
    created_at: u64,
    created_wall: u64,
    leased_at: Option<u64>,
    lease_deadline: Option<u64>,
    result: Option<Vec<u8>>,
}

impl Demand {
    pub fn new(workload_id: &str, stage_id: &str, dtype: DemandType, payload: Payload) -> Self {
        Self::new_at(workload_id, stage_id, dtype, payload, &MonotonicClock)
    }

    pub fn new_at(
        workload_id: &str,
        stage_id: &str,
        dtype: DemandType,
        payload: Payload,
        clock: &dyn Clock,
    ) -> Self {
        Demand {
            id: DemandId::generate(),
            signature: DemandSignature::compute(workload_id, stage_id, &payload.bytes),
            dtype,
            state: DemandState::Pending,
            payload,
            attempts: 0,
            created_at: clock.now_ms(),
            created_wall: wall_clock_ms(),
            leased_at: None,
            lease_deadline: None,
            result: None,
        }
    }

    pub fn id(&self) -> DemandId {
        self.id
    }

    pub fn signature(&self) -> &DemandSignature {
        &self.signature
    }

    pub fn workload_id(&self) -> &str {
        &self.signature.workload_id
    }

    pub fn stage_id(&self) -> &str {
        &self.signature.stage_id
    }

    pub fn dtype(&self) -> DemandType {
        self.dtype
    }

    pub fn state(&self) -> DemandState {
        self.state
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn created_wall(&self) -> u64 {
        self.created_wall
    }

    pub fn leased_at(&self) -> Option<u64> {
        self.leased_at
    }

    pub fn lease_deadline(&self) -> Option<u64> {
        self.lease_deadline
    }

    pub fn result(&self) -> Option<&[u8]> {
        self.result.as_deref()
    }

    pub fn transition(&self, event: DemandEvent) -> Result<Demand, DemandError> {
        use DemandState::*;
        let illegal = || DemandError::IllegalTransition {
            state: self.state,
            event: event.name(),
        };
        let mut next = self.clone();
        match (self.state, &event) {
            (Pending, DemandEvent::Withdraw { leased_at, deadline }) => {
                if deadline <= leased_at {
                    return Err(DemandError::InvalidLease {
                        leased_at: *leased_at,
                        deadline: *deadline,
                    });
                }
                next.state = InProcess;
                next.attempts += 1;
                next.leased_at = Some(*leased_at);
                next.lease_deadline = Some(*deadline);
            }
            (InProcess, DemandEvent::DepositResult(bytes)) => {
                next.state = Completed;
                next.result = Some(bytes.clone());
                next.lease_deadline = None;
            }
            (InProcess, DemandEvent::LeaseExpire) => {
                next.state = Pending;
                next.lease_deadline = None;
            }
            (Pending | InProcess, DemandEvent::Exhaust) => {
                next.state = Failed;
                next.lease_deadline = None;
            }
            _ => return Err(illegal()),
        }
        Ok(next)
    }

    /// Checks the field invariants tied to `state`.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.result.is_some() != (self.state == DemandState::Completed) {
            return Err(format!("result presence does not match state {}", self.state));
        }
        if self.lease_deadline.is_some() != (self.state == DemandState::InProcess) {
            return Err(format!("lease presence does not match state {}", self.state));
        }
        if let (Some(at), Some(dl)) = (self.leased_at, self.lease_deadline) {
            if dl <= at {
                return Err(format!("lease deadline {dl} not after {at}"));
            }
        }
        if self.state == DemandState::InProcess && self.attempts == 0 {
            return Err("in-process demand with zero attempts".into());
        }
        Ok(())
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.raw(self.id.as_bytes());
        self.signature.encode_into(w);
        w.u8(self.dtype.code())
            .u8(self.state.code())
            .u8(self.payload.kind.0)
            .bytes(&self.payload.bytes)
            .u32(self.attempts)
            .u64(self.created_at)
            .u64(self.created_wall)
            .opt_u64(self.leased_at)
            .opt_u64(self.lease_deadline)
            .opt_bytes(self.result.as_deref());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(96 + self.payload.bytes.len());
        self.encode_into(&mut w);
        w.into_inner()
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let id = DemandId::from_bytes(r.array()?);
        let signature = DemandSignature::decode_from(r)?;
        let at = r.offset();
        let dtype = DemandType::from_code(r.u8()?)
            .ok_or_else(|| CodecError::invalid(at, "demand type"))?;
        let at = r.offset();
        let state = DemandState::from_code(r.u8()?)
            .ok_or_else(|| CodecError::invalid(at, "demand state"))?;
        let kind = ContentKind(r.u8()?);
        let bytes = r.bytes()?.to_vec();
        let demand = Demand {
            id,
            signature,
            dtype,
            state,
            payload: Payload { kind, bytes },
            attempts: r.u32()?,
            created_at: r.u64()?,
            created_wall: r.u64()?,
            leased_at: r.opt_u64()?,
            lease_deadline: r.opt_u64()?,
            result: r.opt_bytes()?.map(<[u8]>::to_vec),
        };
        demand
            .check_invariants()
            .map_err(|e| CodecError::invalid(r.offset(), e))?;
        Ok(demand)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf);
        let d = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(d)
    }
}

/// Convenience constructor mirroring the operation name used across the crate.
pub fn new_demand(workload_id: &str, stage_id: &str, dtype: DemandType, payload: &[u8]) -> Demand {
    Demand::new(workload_id, stage_id, dtype, Payload::raw(payload))
}
