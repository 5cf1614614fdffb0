use std::time::Duration;

use thiserror::Error;

use super::agent::{TransportAgent, TransportError};
use super::message::{Ack, Body, ErrorCode, WireMessage};
use crate::demand::{Demand, DemandId, DemandSignature};
use crate::store::{DepositOutcome, RequeueReport, ResultOutcome, StoreStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 50,
            multiplier: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryDecision {
    Retry(Duration),
    Escalate,
}

type EscalationSink = Box<dyn FnMut(&TransportError) + Send>;

/// Counts consecutive transport failures, paces retries with exponential
/// backoff and escalates to the controller once retries are used up.
pub struct TAExceptionHandler {
    policy: RetryPolicy,
    consecutive: u32,
    escalations: u64,
    sink: Option<EscalationSink>,
}

impl std::fmt::Debug for TAExceptionHandler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TAExceptionHandler")
            .field("policy", &self.policy)
            .field("consecutive", &self.consecutive)
            .field("escalations", &self.escalations)
            .finish()
    }
}

impl TAExceptionHandler {
    pub fn new(policy: RetryPolicy) -> Self {
        TAExceptionHandler {
            policy,
            consecutive: 0,
            escalations: 0,
            sink: None,
        }
    }

    pub fn with_escalation(mut self, sink: impl FnMut(&TransportError) + Send + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive
    }

    pub fn escalations(&self) -> u64 {
        self.escalations
    }

    pub fn on_failure(&mut self, err: &TransportError) -> RetryDecision {
        self.consecutive += 1;
        if self.consecutive > self.policy.max_retries || !err.is_retryable() {
            self.consecutive = 0;
            self.escalations += 1;
            if let Some(sink) = self.sink.as_mut() {
                sink(err);
            }
            return RetryDecision::Escalate;
        }
        let factor = (self.policy.multiplier as u64).saturating_pow(self.consecutive - 1);
        RetryDecision::Retry(Duration::from_millis(self.policy.backoff_ms.saturating_mul(factor)))
    }

    pub fn on_success(&mut self) {
        self.consecutive = 0;
    }
}

impl Default for TAExceptionHandler {
    fn default() -> Self {
        Self::new(RetryPolicy::default())
    }
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("transport down: {0}")]
    TransportDown(TransportError),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("store error {code:?}: {message}")]
    Remote { code: Option<ErrorCode>, message: String },
}

impl DispatchError {
    pub fn remote_code(&self) -> Option<ErrorCode> {
        match self {
            DispatchError::Remote { code, .. } => *code,
            _ => None,
        }
    }
}

/// Forwards demands and results to the store through a [`TransportAgent`].
pub struct DemandDispatcher {
    agent: Box<dyn TransportAgent>,
    handler: TAExceptionHandler,
    next_correlation: u64,
}

impl std::fmt::Debug for DemandDispatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemandDispatcher")
            .field("endpoint", &self.agent.endpoint())
            .field("handler", &self.handler)
            .finish()
    }
}

impl DemandDispatcher {
    pub fn new(agent: Box<dyn TransportAgent>) -> Self {
        DemandDispatcher {
            agent,
            handler: TAExceptionHandler::default(),
            next_correlation: 1,
        }
    }

    pub fn set_transport_agent(&mut self, agent: Box<dyn TransportAgent>) {
        self.agent = agent;
    }

    pub fn set_ta_exception_handler(&mut self, handler: TAExceptionHandler) {
        self.handler = handler;
    }

    pub fn exception_handler(&self) -> &TAExceptionHandler {
        &self.handler
    }

    pub fn endpoint(&self) -> String {
        self.agent.endpoint()
    }

    /// Sends `body`, retrying transport failures per the exception handler,
    /// and returns the validated response.
    pub fn dispatch(&mut self, body: Body) -> Result<WireMessage, DispatchError> {
        let correlation_id = self.next_correlation;
        self.next_correlation = self.next_correlation.wrapping_add(1);
        let request = WireMessage::new(correlation_id, body);
        let response = loop {
            match self.agent.exchange(&request) {
                Ok(resp) => {
                    self.handler.on_success();
                    break resp;
                }
                Err(TransportError::Frame(e)) => {
                    return Err(DispatchError::ProtocolViolation(format!("undecodable response: {e}")));
                }
                Err(e) => match self.handler.on_failure(&e) {
                    RetryDecision::Retry(delay) => {
                        log::debug!("transport failure to {}: {e}; retry in {delay:?}", self.agent.endpoint());
                        std::thread::sleep(delay);
                    }
                    RetryDecision::Escalate => return Err(DispatchError::TransportDown(e)),
                },
            }
        };
        if response.correlation_id != correlation_id {
            return Err(DispatchError::ProtocolViolation(format!(
                "correlation id {} does not match request {}",
                response.correlation_id, correlation_id
            )));
        }
        if !response.body.is_legal_response_to(&request.body) {
            return Err(DispatchError::ProtocolViolation(format!(
                "{:?} is not a valid response to {:?}",
                response.kind(),
                request.kind()
            )));
        }
        if let Body::Err { code, message } = response.body {
            return Err(DispatchError::Remote {
                code: ErrorCode::from_code(code),
                message,
            });
        }
        Ok(response)
    }

    pub fn deposit_demand(&mut self, demand: &Demand) -> Result<DepositOutcome, DispatchError> {
        match self.dispatch(Body::DepositDemand(demand.clone()))?.body {
            Body::Ack(Ack::Queued(id)) => Ok(DepositOutcome::Queued(id)),
            Body::Coalesced(id) => Ok(DepositOutcome::Coalesced(id)),
            Body::Cached(r) => Ok(DepositOutcome::CachedResult(r)),
            _ => unreachable!("validated by dispatch"),
        }
    }

    pub fn withdraw_demand(
        &mut self,
        workload: &str,
        stages: Option<&[String]>,
        wait: Duration,
    ) -> Result<Option<Demand>, DispatchError> {
        let body = Body::WithdrawDemand {
            workload: workload.to_owned(),
            stages: stages.map(<[String]>::to_vec),
            wait_ms: wait.as_millis().min(u32::MAX as u128) as u32,
        };
        match self.dispatch(body)?.body {
            Body::Ack(Ack::Demand(d)) => Ok(d),
            _ => unreachable!("validated by dispatch"),
        }
    }

    pub fn deposit_result(&mut self, id: DemandId, result: Vec<u8>) -> Result<(), DispatchError> {
        self.dispatch(Body::DepositResult { id, result }).map(|_| ())
    }

    pub fn withdraw_result(
        &mut self,
        signature: &DemandSignature,
        wait: bool,
        timeout: Duration,
    ) -> Result<ResultOutcome, DispatchError> {
        let body = Body::WithdrawResult {
            signature: signature.clone(),
            wait,
            timeout_ms: timeout.as_millis() as u64,
        };
        match self.dispatch(body) {
            Ok(resp) => match resp.body {
                Body::Ack(Ack::Result(r)) => Ok(ResultOutcome::Result(r)),
                Body::NotReady { timed_out: false } => Ok(ResultOutcome::NotReady),
                Body::NotReady { timed_out: true } => Ok(ResultOutcome::TimedOut),
                _ => unreachable!("validated by dispatch"),
            },
            Err(DispatchError::Remote {
                code: Some(ErrorCode::DemandFailed),
                message,
            }) => Ok(ResultOutcome::Failed(message)),
            Err(e) => Err(e),
        }
    }

    pub fn requeue_expired(&mut self) -> Result<RequeueReport, DispatchError> {
        match self.dispatch(Body::RequeueExpired)?.body {
            Body::Ack(Ack::Requeued(r)) => Ok(r),
            _ => unreachable!("validated by dispatch"),
        }
    }

    pub fn store_stats(&mut self) -> Result<StoreStats, DispatchError> {
        match self.dispatch(Body::StoreStats)?.body {
            Body::Ack(Ack::Stats(s)) => Ok(s),
            _ => unreachable!("validated by dispatch"),
        }
    }
}
