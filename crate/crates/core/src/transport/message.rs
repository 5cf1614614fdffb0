use crate::codec::{CodecError, Reader, Writer};
use crate::demand::{Demand, DemandId, DemandSignature};
use crate::store::{RequeueReport, StoreStats};

/// One-byte message kind carried in the frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    DepositDemand = 0x01,
    WithdrawDemand = 0x02,
    DepositResult = 0x03,
    WithdrawResult = 0x04,
    RequeueExpired = 0x05,
    StoreStats = 0x06,
    Ack = 0x80,
    Err = 0x81,
    Cached = 0x82,
    Coalesced = 0x83,
    NotReady = 0x84,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::DepositDemand,
        MessageKind::WithdrawDemand,
        MessageKind::DepositResult,
        MessageKind::WithdrawResult,
        MessageKind::RequeueExpired,
        MessageKind::StoreStats,
        MessageKind::Ack,
        MessageKind::Err,
        MessageKind::Cached,
        MessageKind::Coalesced,
        MessageKind::NotReady,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == code)
    }

    pub fn is_request(self) -> bool {
        (self as u8) < 0x80
    }
}

/// Error codes carried by `Err` responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    UnknownStage = 1,
    UnknownDemand = 2,
    NotPending = 3,
    Busy = 4,
    IllegalTransition = 5,
    DemandFailed = 6,
    BadRequest = 7,
}

impl ErrorCode {
    pub fn from_code(c: u16) -> Option<Self> {
        use ErrorCode::*;
        [UnknownStage, UnknownDemand, NotPending, Busy, IllegalTransition, DemandFailed, BadRequest]
            .into_iter()
            .find(|e| *e as u16 == c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ack {
    Queued(DemandId),
    Demand(Option<Demand>),
    Deposited,
    Result(Vec<u8>),
    Requeued(RequeueReport),
    Stats(StoreStats),
}

impl Ack {
    fn tag(&self) -> u8 {
        match self {
            Ack::Queued(_) => 1,
            Ack::Demand(_) => 2,
            Ack::Deposited => 3,
            Ack::Result(_) => 4,
            Ack::Requeued(_) => 5,
            Ack::Stats(_) => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    DepositDemand(Demand),
    WithdrawDemand {
        workload: String,
        stages: Option<Vec<String>>,
        /// How long the store may hold the request open waiting for work.
        wait_ms: u32,
    },
    DepositResult {
        id: DemandId,
        result: Vec<u8>,
    },
    WithdrawResult {
        signature: DemandSignature,
        wait: bool,
        timeout_ms: u64,
    },
    RequeueExpired,
    StoreStats,
    Ack(Ack),
    Err {
        code: u16,
        message: String,
    },
    Cached(Vec<u8>),
    Coalesced(DemandId),
    NotReady {
        timed_out: bool,
    },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::DepositDemand(_) => MessageKind::DepositDemand,
            Body::WithdrawDemand { .. } => MessageKind::WithdrawDemand,
            Body::DepositResult { .. } => MessageKind::DepositResult,
            Body::WithdrawResult { .. } => MessageKind::WithdrawResult,
            Body::RequeueExpired => MessageKind::RequeueExpired,
            Body::StoreStats => MessageKind::StoreStats,
            Body::Ack(_) => MessageKind::Ack,
            Body::Err { .. } => MessageKind::Err,
            Body::Cached(_) => MessageKind::Cached,
            Body::Coalesced(_) => MessageKind::Coalesced,
            Body::NotReady { .. } => MessageKind::NotReady,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Body::Err {
            code: code as u16,
            message: message.into(),
        }
    }

    /// Whether `self` is an allowed response to `request`.
    pub fn is_legal_response_to(&self, request: &Body) -> bool {
        if matches!(self, Body::Err { .. }) {
            return request.kind().is_request();
        }
        match request {
            Body::DepositDemand(_) => {
                matches!(self, Body::Ack(Ack::Queued(_)) | Body::Cached(_) | Body::Coalesced(_))
            }
            Body::WithdrawDemand { .. } => matches!(self, Body::Ack(Ack::Demand(_))),
            Body::DepositResult { .. } => matches!(self, Body::Ack(Ack::Deposited)),
            Body::WithdrawResult { .. } => {
                matches!(self, Body::Ack(Ack::Result(_)) | Body::NotReady { .. })
            }
            Body::RequeueExpired => matches!(self, Body::Ack(Ack::Requeued(_))),
            Body::StoreStats => matches!(self, Body::Ack(Ack::Stats(_))),
            _ => false,
        }
    }

    pub fn encode_into(&self, w: &mut Writer) {
        match self {
            Body::DepositDemand(d) => d.encode_into(w),
            Body::WithdrawDemand {
                workload,
                stages,
                wait_ms,
            } => {
                w.str(workload);
                match stages {
                    Some(list) => {
                        w.u8(1).u32(list.len() as u32);
                        for s in list {
                            w.str(s);
                        }
                    }
                    None => {
                        w.u8(0);
                    }
                }
                w.u32(*wait_ms);
            }
            Body::DepositResult { id, result } => {
                w.raw(id.as_bytes()).bytes(result);
            }
            Body::WithdrawResult {
                signature,
                wait,
                timeout_ms,
            } => {
                signature.encode_into(w);
                w.bool(*wait).u64(*timeout_ms);
            }
            Body::RequeueExpired | Body::StoreStats => {}
            Body::Ack(ack) => {
                w.u8(ack.tag());
                match ack {
                    Ack::Queued(id) => {
                        w.raw(id.as_bytes());
                    }
                    Ack::Demand(None) => {
                        w.u8(0);
                    }
                    Ack::Demand(Some(d)) => {
                        w.u8(1);
                        d.encode_into(w);
                    }
                    Ack::Deposited => {}
                    Ack::Result(r) => {
                        w.bytes(r);
                    }
                    Ack::Requeued(rep) => {
                        w.u64(rep.requeued).u64(rep.failed);
                    }
                    Ack::Stats(s) => s.encode_into(w),
                }
            }
            Body::Err { code, message } => {
                w.u16(*code).str(message);
            }
            Body::Cached(r) => {
                w.bytes(r);
            }
            Body::Coalesced(id) => {
                w.raw(id.as_bytes());
            }
            Body::NotReady { timed_out } => {
                w.bool(*timed_out);
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.into_inner()
    }

    pub fn decode(kind: MessageKind, buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf);
        let body = match kind {
            MessageKind::DepositDemand => Body::DepositDemand(Demand::decode_from(&mut r)?),
            MessageKind::WithdrawDemand => {
                let workload = r.string()?;
                let at = r.offset();
                let stages = match r.u8()? {
                    0 => None,
                    1 => {
                        let n = r.u32()?;
                        let mut v = Vec::new();
                        for _ in 0..n {
                            v.push(r.string()?);
                        }
                        Some(v)
                    }
                    f => return Err(CodecError::invalid(at, format!("stage filter flag {f}"))),
                };
                Body::WithdrawDemand {
                    workload,
                    stages,
                    wait_ms: r.u32()?,
                }
            }
            MessageKind::DepositResult => Body::DepositResult {
                id: DemandId::from_bytes(r.array()?),
                result: r.bytes()?.to_vec(),
            },
            MessageKind::WithdrawResult => Body::WithdrawResult {
                signature: DemandSignature::decode_from(&mut r)?,
                wait: r.bool()?,
                timeout_ms: r.u64()?,
            },
            MessageKind::RequeueExpired => Body::RequeueExpired,
            MessageKind::StoreStats => Body::StoreStats,
            MessageKind::Ack => {
                let at = r.offset();
                let ack = match r.u8()? {
                    1 => Ack::Queued(DemandId::from_bytes(r.array()?)),
                    2 => {
                        let at = r.offset();
                        match r.u8()? {
                            0 => Ack::Demand(None),
                            1 => Ack::Demand(Some(Demand::decode_from(&mut r)?)),
                            f => return Err(CodecError::invalid(at, format!("demand flag {f}"))),
                        }
                    }
                    3 => Ack::Deposited,
                    4 => Ack::Result(r.bytes()?.to_vec()),
                    5 => Ack::Requeued(RequeueReport {
                        requeued: r.u64()?,
                        failed: r.u64()?,
                    }),
                    6 => Ack::Stats(StoreStats::decode_from(&mut r)?),
                    t => return Err(CodecError::invalid(at, format!("ack tag {t}"))),
                };
                Body::Ack(ack)
            }
            MessageKind::Err => Body::Err {
                code: r.u16()?,
                message: r.string()?,
            },
            MessageKind::Cached => Body::Cached(r.bytes()?.to_vec()),
            MessageKind::Coalesced => Body::Coalesced(DemandId::from_bytes(r.array()?)),
            MessageKind::NotReady => Body::NotReady { timed_out: r.bool()? },
        };
        r.finish()?;
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub correlation_id: u64,
    pub body: Body,
}

impl WireMessage {
    pub fn new(correlation_id: u64, body: Body) -> Self {
        WireMessage { correlation_id, body }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}
