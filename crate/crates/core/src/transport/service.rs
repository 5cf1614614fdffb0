use std::sync::Arc;
use std::time::Duration;

use super::message::{Ack, Body, ErrorCode, WireMessage};
use crate::store::{DemandStore, DepositOutcome, ResultOutcome, StoreError};

/// Upper bound on how long one request may park inside the store.
pub const MAX_WAIT_MS: u64 = 60_000;

/// Maps wire requests onto store operations. Shared by every agent and by
/// the TCP server, so all transports observe the same semantics.
#[derive(Debug, Clone)]
pub struct StoreService {
    store: Arc<DemandStore>,
}

fn store_error(e: StoreError) -> Body {
    let code = match &e {
        StoreError::UnknownStage { .. } => ErrorCode::UnknownStage,
        StoreError::UnknownDemand(_) => ErrorCode::UnknownDemand,
        StoreError::NotPending(..) => ErrorCode::NotPending,
        StoreError::Busy(_) => ErrorCode::Busy,
        StoreError::Transition(_) => ErrorCode::IllegalTransition,
    };
    Body::error(code, e.to_string())
}

impl StoreService {
    pub fn new(store: Arc<DemandStore>) -> Self {
        StoreService { store }
    }

    pub fn store(&self) -> &Arc<DemandStore> {
        &self.store
    }

    pub fn handle(&self, request: WireMessage) -> WireMessage {
        let body = match request.body {
            Body::DepositDemand(d) => match self.store.deposit_demand(d) {
                Ok(DepositOutcome::Queued(id)) => Body::Ack(Ack::Queued(id)),
                Ok(DepositOutcome::Coalesced(id)) => Body::Coalesced(id),
                Ok(DepositOutcome::CachedResult(r)) => Body::Cached(r),
                Err(e) => store_error(e),
            },
            Body::WithdrawDemand {
                workload,
                stages,
                wait_ms,
            } => {
                let wait = Duration::from_millis((wait_ms as u64).min(MAX_WAIT_MS));
                Body::Ack(Ack::Demand(self.store.withdraw_demand_wait(
                    &workload,
                    stages.as_deref(),
                    wait,
                )))
            }
            Body::DepositResult { id, result } => match self.store.deposit_result(id, result) {
                Ok(()) => Body::Ack(Ack::Deposited),
                Err(e) => store_error(e),
            },
            Body::WithdrawResult {
                signature,
                wait,
                timeout_ms,
            } => {
                let timeout = Duration::from_millis(timeout_ms.min(MAX_WAIT_MS));
                match self.store.withdraw_result(&signature, wait, timeout) {
                    ResultOutcome::Result(r) => Body::Ack(Ack::Result(r)),
                    ResultOutcome::NotReady => Body::NotReady { timed_out: false },
                    ResultOutcome::TimedOut => Body::NotReady { timed_out: true },
                    ResultOutcome::Failed(reason) => Body::error(ErrorCode::DemandFailed, reason),
                }
            }
            Body::RequeueExpired => Body::Ack(Ack::Requeued(self.store.requeue_expired_now())),
            Body::StoreStats => Body::Ack(Ack::Stats(self.store.stats())),
            other => Body::error(
                ErrorCode::BadRequest,
                format!("{:?} is not a request", other.kind()),
            ),
        };
        WireMessage::new(request.correlation_id, body)
    }
}
