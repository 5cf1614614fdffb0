mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use common::fixed_demand;
use edurt::clock::ManualClock;
use edurt::demand::{DemandId, DemandSignature, DemandState};
use edurt::store::{DemandStore, RequeueReport, StoreConfig, StoreCounters, StoreStats};
use edurt::transport::{
    decode_frame, encode_frame, Ack, Body, ErrorCode, FrameDecoder, InProcessAgent, MessageKind, StoreServer,
    StoreService, TcpAgent, TransportAgent, WireMessage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn sample_stats() -> StoreStats {
    StoreStats {
        counters: StoreCounters {
            deposits: 7,
            withdrawals: 6,
            cache_hits: 1,
            requeues: 2,
            failures: 0,
            coalesced: 3,
            completed: 5,
        },
        pending: 1,
        in_process: 1,
        warehouse_size: 5,
        queue_depths: BTreeMap::from([("wl/st".to_owned(), 1)]),
        withdraw_polls: 12,
        last_withdraw_poll_ms: Some(4_000),
        now_ms: 4_200,
    }
}

/// One message per kind and per acknowledgement variant.
fn golden_messages() -> Vec<(&'static str, WireMessage)> {
    let id = DemandId::from_bytes([0xAB; 16]);
    let sig = DemandSignature::compute("wl", "st", b"payload");
    let m = |c: u64, b: Body| WireMessage::new(c, b);
    vec![
        ("deposit_demand", m(1, Body::DepositDemand(fixed_demand(0x11, DemandState::Pending, b"payload")))),
        (
            "withdraw_demand",
            m(
                2,
                Body::WithdrawDemand {
                    workload: "wl".into(),
                    stages: Some(vec!["st".into()]),
                    wait_ms: 100,
                },
            ),
        ),
        (
            "deposit_result",
            m(
                3,
                Body::DepositResult {
                    id,
                    result: b"result".to_vec(),
                },
            ),
        ),
        (
            "withdraw_result",
            m(
                4,
                Body::WithdrawResult {
                    signature: sig,
                    wait: true,
                    timeout_ms: 2_000,
                },
            ),
        ),
        ("requeue_expired", m(5, Body::RequeueExpired)),
        ("store_stats", m(6, Body::StoreStats)),
        ("ack_queued", m(1, Body::Ack(Ack::Queued(id)))),
        ("ack_demand_none", m(2, Body::Ack(Ack::Demand(None)))),
        (
            "ack_demand_some",
            m(2, Body::Ack(Ack::Demand(Some(fixed_demand(0x22, DemandState::InProcess, b"payload"))))),
        ),
        ("ack_deposited", m(3, Body::Ack(Ack::Deposited))),
        ("ack_result", m(4, Body::Ack(Ack::Result(b"result".to_vec())))),
        (
            "ack_requeued",
            m(
                5,
                Body::Ack(Ack::Requeued(RequeueReport {
                    requeued: 2,
                    failed: 1,
                })),
            ),
        ),
        ("ack_stats", m(6, Body::Ack(Ack::Stats(sample_stats())))),
        ("err", m(7, Body::error(ErrorCode::UnknownStage, "unknown stage wl/zz"))),
        ("cached", m(8, Body::Cached(b"result".to_vec()))),
        ("coalesced", m(9, Body::Coalesced(id))),
        ("not_ready", m(10, Body::NotReady { timed_out: true })),
    ]
}

pub fn golden_frames_match_checked_in_bytes() {
    let bless = std::env::var_os("EDURT_BLESS").is_some();
    let msgs = golden_messages();
    let kinds: std::collections::HashSet<MessageKind> = msgs.iter().map(|(_, m)| m.kind()).collect();
    assert_eq!(kinds.len(), MessageKind::ALL.len(), "every kind has a golden frame");
    for (name, msg) in msgs {
        let path = golden_dir().join(format!("{name}.bin"));
        let bytes = encode_frame(&msg);
        if bless {
            std::fs::write(&path, &bytes).unwrap();
        }
        let golden = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(bytes, golden, "{name}: encoding drifted from golden bytes");
        assert_eq!(decode_frame(&golden).unwrap(), msg, "{name}: golden bytes decode differently");
        assert_eq!(&golden[..4], b"GDMS");
        assert_eq!(golden[4], 1);
        assert_eq!(golden[5], msg.kind() as u8);
        assert_eq!(u64::from_be_bytes(golden[6..14].try_into().unwrap()), msg.correlation_id);
        assert_eq!(u32::from_be_bytes(golden[14..18].try_into().unwrap()) as usize, golden.len() - 18);
    }
}

fn rand_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn rand_string(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..12);
    (0..n).map(|_| rng.gen_range('a'..='z')).collect()
}

fn rand_body(rng: &mut ChaCha8Rng) -> Body {
    let id = DemandId::from_bytes(rng.gen());
    let state = DemandState::ALL[rng.gen_range(0..4)];
    match rng.gen_range(0..17) {
        0 => Body::DepositDemand(fixed_demand(rng.gen(), state, &rand_bytes(rng, 64))),
        1 => Body::WithdrawDemand {
            workload: rand_string(rng),
            stages: rng
                .gen_bool(0.5)
                .then(|| (0..rng.gen_range(0..4)).map(|_| rand_string(rng)).collect()),
            wait_ms: rng.gen(),
        },
        2 => Body::DepositResult {
            id,
            result: rand_bytes(rng, 64),
        },
        3 => Body::WithdrawResult {
            signature: DemandSignature::compute(&rand_string(rng), &rand_string(rng), &rand_bytes(rng, 16)),
            wait: rng.gen(),
            timeout_ms: rng.gen(),
        },
        4 => Body::RequeueExpired,
        5 => Body::StoreStats,
        6 => Body::Ack(Ack::Queued(id)),
        7 => Body::Ack(Ack::Demand(None)),
        8 => Body::Ack(Ack::Demand(Some(fixed_demand(rng.gen(), state, &rand_bytes(rng, 32))))),
        9 => Body::Ack(Ack::Deposited),
        10 => Body::Ack(Ack::Result(rand_bytes(rng, 64))),
        11 => Body::Ack(Ack::Requeued(RequeueReport {
            requeued: rng.gen(),
            failed: rng.gen(),
        })),
        12 => {
            let mut s = sample_stats();
            s.counters.deposits = rng.gen();
            s.last_withdraw_poll_ms = rng.gen_bool(0.5).then(|| rng.gen());
            s.queue_depths.insert(rand_string(rng), rng.gen());
            Body::Ack(Ack::Stats(s))
        }
        13 => Body::Err {
            code: rng.gen(),
            message: rand_string(rng),
        },
        14 => Body::Cached(rand_bytes(rng, 64)),
        15 => Body::Coalesced(id),
        _ => Body::NotReady { timed_out: rng.gen() },
    }
}

pub fn fuzzed_round_trip_ten_thousand_messages() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF4A3E);
    let mut stream = Vec::new();
    let mut sent = Vec::new();
    for _ in 0..10_000 {
        let msg = WireMessage::new(rng.gen(), rand_body(&mut rng));
        let frame = encode_frame(&msg);
        assert_eq!(decode_frame(&frame).unwrap(), msg);
        if sent.len() < 2_000 {
            stream.extend_from_slice(&frame);
            sent.push(msg);
        }
    }
    // The same frames survive arbitrary chunking.
    let mut dec = FrameDecoder::new();
    let mut got = Vec::new();
    let mut at = 0;
    while at < stream.len() {
        let n = rng.gen_range(1..=97).min(stream.len() - at);
        dec.feed(&stream[at..at + n]);
        at += n;
        while let Some(m) = dec.next_message().unwrap() {
            got.push(m);
        }
    }
    assert_eq!(got, sent);
}

#[test]
fn corrupted_frames_are_rejected_not_misread() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2_000 {
        let msg = WireMessage::new(rng.gen(), rand_body(&mut rng));
        let mut f = encode_frame(&msg);
        let cut = rng.gen_range(0..f.len());
        assert!(decode_frame(&f[..cut]).is_err());
        let i = rng.gen_range(0..f.len());
        f[i] ^= 1 << rng.gen_range(0..8);
        if let Ok(m) = decode_frame(&f) {
            // A flip inside a free-form field can still decode; it must not
            // decode back to the original.
            assert_ne!(m, msg);
        }
    }
}

/// Runs a fixed request script and returns every response.
fn script(agent: &mut dyn TransportAgent) -> Vec<WireMessage> {
    let d = fixed_demand(0x31, DemandState::Pending, b"payload");
    let sig = d.signature().clone();
    let requests = vec![
        Body::StoreStats,
        Body::DepositDemand(d.clone()),
        Body::DepositDemand(fixed_demand(0x32, DemandState::Pending, b"payload")),
        Body::WithdrawResult {
            signature: sig.clone(),
            wait: false,
            timeout_ms: 0,
        },
        Body::WithdrawDemand {
            workload: "wl".into(),
            stages: None,
            wait_ms: 0,
        },
        Body::DepositResult {
            id: d.id(),
            result: b"out".to_vec(),
        },
        Body::DepositResult {
            id: d.id(),
            result: b"again".to_vec(),
        },
        Body::WithdrawResult {
            signature: sig,
            wait: true,
            timeout_ms: 10,
        },
        Body::DepositDemand(fixed_demand(0x33, DemandState::Pending, b"payload")),
        Body::WithdrawDemand {
            workload: "zz".into(),
            stages: None,
            wait_ms: 0,
        },
        Body::RequeueExpired,
        Body::StoreStats,
    ];
    requests
        .into_iter()
        .enumerate()
        .map(|(i, body)| agent.exchange(&WireMessage::new(i as u64 + 1, body)).unwrap())
        .collect()
}

fn fresh_store() -> Arc<DemandStore> {
    let s = Arc::new(DemandStore::with_clock(StoreConfig::default(), Arc::new(ManualClock::new(1_000))));
    s.register_stage("wl", "st");
    s
}

pub fn in_process_and_tcp_agents_agree() {
    let mut local = InProcessAgent::new(StoreService::new(fresh_store()));
    let server = StoreServer::start("127.0.0.1:0", StoreService::new(fresh_store())).unwrap();
    let mut remote = TcpAgent::new(server.local_addr().to_string());
    let a = script(&mut local);
    let b = script(&mut remote);
    assert_eq!(a, b);
    assert!(matches!(a[2].body, Body::Coalesced(_)));
    assert!(matches!(a[8].body, Body::Cached(_)));
    assert!(matches!(a[6].body, Body::Err { .. }));
}

/// Harness entry points for the checks shared with the acceptance runner.
mod checks {
    #[test]
    fn golden_frames_match_checked_in_bytes() {
        super::golden_frames_match_checked_in_bytes();
    }

    #[test]
    fn fuzzed_round_trip_ten_thousand_messages() {
        super::fuzzed_round_trip_ten_thousand_messages();
    }

    #[test]
    fn in_process_and_tcp_agents_agree() {
        super::in_process_and_tcp_agents_agree();
    }
}
