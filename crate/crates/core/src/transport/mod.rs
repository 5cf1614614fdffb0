//! Transport agents and the demand dispatcher.
//!
//! Generators and workers never touch the store directly; they talk to it
//! through a [`DemandDispatcher`] wrapping a pluggable [`TransportAgent`].
//! Two agents ship: [`InProcessAgent`] for a store in the same process and
//! [`TcpAgent`] speaking the framed protocol in [`frame`] to a
//! [`StoreServer`].

mod agent;
mod dispatcher;
pub mod frame;
mod message;
mod server;
mod service;

pub use agent::{InProcessAgent, TcpAgent, TransportAgent, TransportError};
pub use dispatcher::{DemandDispatcher, DispatchError, RetryDecision, RetryPolicy, TAExceptionHandler};
pub use frame::{decode_frame, encode_frame, FrameDecoder, FrameError};
pub use message::{Ack, Body, ErrorCode, MessageKind, WireMessage};
pub use server::StoreServer;
pub use service::StoreService;

#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;
    use std::sync::Arc;
    use std::time::Duration;

    use super::*;
    use crate::demand::{new_demand, DemandType};
    use crate::store::{DemandStore, DepositOutcome, StoreConfig};

    fn store() -> Arc<DemandStore> {
        let s = Arc::new(DemandStore::new(StoreConfig::default()));
        s.register_stage("w", "a");
        s
    }

    #[test]
    fn frame_header_layout() {
        let msg = WireMessage::new(0x0102030405060708, Body::StoreStats);
        let f = encode_frame(&msg);
        assert_eq!(
            f,
            [0x47, 0x44, 0x4D, 0x53, 0x01, 0x06, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 0]
        );
        assert_eq!(decode_frame(&f).unwrap(), msg);
    }

    #[test]
    fn bad_magic_and_kind() {
        let mut f = encode_frame(&WireMessage::new(1, Body::RequeueExpired));
        f[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_frame(&f), Err(FrameError::BadMagic(*b"XXXX")));
        let mut f = encode_frame(&WireMessage::new(1, Body::RequeueExpired));
        f[4] = 2;
        assert_eq!(decode_frame(&f), Err(FrameError::UnsupportedVersion(2)));
        f[4] = 1;
        f[5] = 0x42;
        assert_eq!(decode_frame(&f), Err(FrameError::UnknownKind(0x42)));
    }

    #[test]
    fn truncated_body() {
        let f = encode_frame(&WireMessage::new(9, Body::Cached(vec![1, 2, 3, 4])));
        assert!(matches!(
            decode_frame(&f[..f.len() - 2]),
            Err(FrameError::TruncatedFrame { .. })
        ));
    }

    #[test]
    fn streaming_decoder_waits_for_partial_frames() {
        let msgs = [
            WireMessage::new(1, Body::Cached(vec![9; 40])),
            WireMessage::new(2, Body::NotReady { timed_out: true }),
        ];
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_frame).collect();
        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        for b in bytes {
            dec.feed(&[b]);
            if let Some(m) = dec.next_message().unwrap() {
                out.push(m);
            }
        }
        assert_eq!(out, msgs);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn exception_handler_escalates_once_and_resets() {
        let escalated = Arc::new(std::sync::atomic::AtomicU32::new(0));
        let e2 = escalated.clone();
        let mut h = TAExceptionHandler::new(RetryPolicy {
            max_retries: 2,
            backoff_ms: 10,
            multiplier: 3,
        })
        .with_escalation(move |_| {
            e2.fetch_add(1, Ordering::SeqCst);
        });
        let err = || TransportError::Closed;
        assert_eq!(h.on_failure(&err()), RetryDecision::Retry(Duration::from_millis(10)));
        assert_eq!(h.on_failure(&err()), RetryDecision::Retry(Duration::from_millis(30)));
        assert_eq!(h.on_failure(&err()), RetryDecision::Escalate);
        assert_eq!(escalated.load(Ordering::SeqCst), 1);
        assert_eq!(h.on_failure(&err()), RetryDecision::Retry(Duration::from_millis(10)));
        h.on_success();
        assert_eq!(h.consecutive_failures(), 0);
        assert_eq!(escalated.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn absent_endpoint_gives_transport_down_after_retries() {
        // Reserve a port, then free it so nothing listens there.
        let addr = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let agent = TcpAgent::new(addr.to_string());
        let attempts = agent.connect_attempts();
        let mut d = DemandDispatcher::new(Box::new(agent));
        d.set_ta_exception_handler(TAExceptionHandler::new(RetryPolicy {
            max_retries: 2,
            backoff_ms: 5,
            multiplier: 2,
        }));
        let err = d.store_stats().unwrap_err();
        assert!(matches!(err, DispatchError::TransportDown(_)), "{err}");
        assert_eq!(attempts.load(Ordering::SeqCst), 3);
        assert_eq!(d.exception_handler().escalations(), 1);
    }

    #[test]
    fn in_process_happy_path() {
        let s = store();
        let mut d = DemandDispatcher::new(Box::new(InProcessAgent::new(StoreService::new(s.clone()))));
        let dem = new_demand("w", "a", DemandType::Procedural, b"x");
        assert_eq!(d.deposit_demand(&dem).unwrap(), DepositOutcome::Queued(dem.id()));
        let got = d.withdraw_demand("w", None, Duration::ZERO).unwrap().unwrap();
        d.deposit_result(got.id(), b"r".to_vec()).unwrap();
        assert_eq!(
            d.deposit_result(got.id(), b"r".to_vec()).unwrap_err().remote_code(),
            Some(ErrorCode::UnknownDemand)
        );
        assert_eq!(d.store_stats().unwrap().warehouse_size, 1);
    }

    #[test]
    fn tcp_happy_path() {
        let s = store();
        let server = StoreServer::start("127.0.0.1:0", StoreService::new(s.clone())).unwrap();
        let mut d = DemandDispatcher::new(Box::new(TcpAgent::new(server.local_addr().to_string())));
        let dem = new_demand("w", "a", DemandType::Procedural, b"x");
        assert_eq!(d.deposit_demand(&dem).unwrap(), DepositOutcome::Queued(dem.id()));
        assert_eq!(s.stats().pending, 1);
    }
}
