//! Helpers shared by the integration suites and the acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use edurt::codec::Writer;
use edurt::demand::{Demand, DemandSignature, DemandState, DemandType};
use edurt::pipeline::classify::DISTANCE;
use edurt::pipeline::features::FFT;
use edurt::pipeline::ModuleParams;
use edurt::tiers::node::NodeBuilder;
use edurt::tiers::{FaultHook, GipsyNode, NodeConfiguration};

/// Parameters used for every recognition run: noise and silence removal,
/// FFT features, nearest-mean classification.
pub fn recognition_params() -> ModuleParams {
    ModuleParams::for_job(true, true, FFT, DISTANCE)
}

pub fn gmt_config(node_id: &str, tiers: &str, lease_ms: u64) -> NodeConfiguration {
    let lease = lease_ms.to_string();
    NodeConfiguration::from_pairs([
        ("node.id", node_id),
        ("tiers.initial", tiers),
        ("dst.listen", "127.0.0.1:0"),
        ("manage.listen", "127.0.0.1:0"),
        ("lease.ms", lease.as_str()),
    ])
    .expect("valid config")
}

pub fn start_gmt(tiers: &str, lease_ms: u64) -> GipsyNode {
    NodeBuilder::new(gmt_config("gmt", tiers, lease_ms)).start().expect("GMT starts")
}

pub fn start_gmt_with_hook(tiers: &str, lease_ms: u64, hook: FaultHook) -> GipsyNode {
    NodeBuilder::new(gmt_config("gmt", tiers, lease_ms))
        .fault_hook(hook)
        .start()
        .expect("GMT starts")
}

/// Starts a worker-only node registered with `gmt`.
pub fn start_worker_node(gmt: &GipsyNode, node_id: &str, tiers: &str) -> GipsyNode {
    let gaddr = gmt.manage_address().expect("manage address").to_string();
    let cfg = NodeConfiguration::from_pairs([
        ("node.id", node_id),
        ("tiers.initial", tiers),
        ("gmt.address", gaddr.as_str()),
        ("manage.listen", "127.0.0.1:0"),
    ])
    .expect("valid config");
    NodeBuilder::new(cfg).start().expect("worker node starts")
}

/// A demand with fixed id and timestamps, so its encoding is stable.
pub fn fixed_demand(id_byte: u8, state: DemandState, payload: &[u8]) -> Demand {
    let mut w = Writer::new();
    w.raw(&[id_byte; 16]);
    DemandSignature::compute("wl", "st", payload).encode_into(&mut w);
    w.u8(DemandType::Procedural.code()).u8(state.code()).u8(0).bytes(payload);
    match state {
        DemandState::Pending => {
            w.u32(0).u64(1_000).u64(1_700_000_000_000).opt_u64(None).opt_u64(None).opt_bytes(None);
        }
        DemandState::InProcess => {
            w.u32(1)
                .u64(1_000)
                .u64(1_700_000_000_000)
                .opt_u64(Some(1_500))
                .opt_u64(Some(6_500))
                .opt_bytes(None);
        }
        DemandState::Completed => {
            w.u32(1)
                .u64(1_000)
                .u64(1_700_000_000_000)
                .opt_u64(Some(1_500))
                .opt_u64(None)
                .opt_bytes(Some(b"result"));
        }
        DemandState::Failed => {
            w.u32(3).u64(1_000).u64(1_700_000_000_000).opt_u64(Some(1_500)).opt_u64(None).opt_bytes(None);
        }
    }
    Demand::decode(&w.into_inner()).expect("fixed demand decodes")
}

pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + timeout;
    while std::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    f()
}

pub fn shared<T>(v: T) -> Arc<T> {
    Arc::new(v)
}

/// Trains on `corpus.training` one job at a time, then classifies every
/// held-out utterance, all through `node`'s tiers. Returns the final
/// result records in held-out order.
pub fn distributed_run(
    node: &GipsyNode,
    corpus: &edurt::pipeline::corpus::Corpus,
    params: &ModuleParams,
) -> Result<Vec<Vec<u8>>, String> {
    use edurt::pipeline::{JobMode, SourceFormat};
    use edurt::tiers::{JobSpec, JobState};
    let wait = Duration::from_secs(60);
    for u in &corpus.training {
        let spec = JobSpec::dmarf(JobMode::Train, u.wav.clone(), SourceFormat::Wav, params.clone(), Some(&u.speaker));
        let id = node.submit_job(spec).map_err(|e| e.to_string())?;
        let v = node.wait_job(&id, wait).map_err(|e| e.to_string())?;
        if v.state != JobState::Done {
            return Err(format!("train job {id}: {:?} {:?}", v.state, v.error));
        }
    }
    let ids = corpus
        .held_out
        .iter()
        .map(|u| {
            let spec = JobSpec::dmarf(JobMode::Classify, u.wav.clone(), SourceFormat::Wav, params.clone(), None);
            node.submit_job(spec).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    ids.iter()
        .map(|id| {
            let v = node.wait_job(id, wait).map_err(|e| e.to_string())?;
            match (v.state, v.result) {
                (JobState::Done, Some(r)) => Ok(r),
                (s, _) => Err(format!("classify job {id}: {s:?} {:?}", v.error)),
            }
        })
        .collect()
}

/// Held-out accuracy of a list of result-set records.
pub fn accuracy(corpus: &edurt::pipeline::corpus::Corpus, results: &[Vec<u8>]) -> (usize, usize) {
    use edurt::pipeline::abi::{self, Record, RecordKind};
    let correct = corpus
        .held_out
        .iter()
        .zip(results)
        .filter(|(u, r)| {
            Record::decode(r)
                .and_then(|rec| rec.expect(RecordKind::ResultSet))
                .and_then(|rec| abi::decode_result_set::<f64>(rec.field(abi::TAG_BODY)?))
                .ok()
                .and_then(|rs| rs.top().map(|t| t.speaker_id == u.speaker))
                .unwrap_or(false)
        })
        .count();
    (correct, corpus.held_out.len())
}

/// Outcome of one fault-injection run.
#[derive(Debug)]
pub struct FaultRun {
    pub latency: Duration,
    pub oracle: Duration,
    pub attempts: u32,
    pub result_matches: bool,
}

/// Two workers; the first to pick up the extract demand dies holding its
/// lease. Returns timings and the crashed demand's attempt count.
pub fn fault_recovery_run(seed: u64, lease_ms: u64) -> Result<FaultRun, String> {
    use std::sync::atomic::{AtomicBool, Ordering};
    use edurt::pipeline::{run_local, JobMode, Outcome, SourceFormat};
    use edurt::tiers::{FaultAction, JobSpec, JobState};

    let corpus = edurt::pipeline::corpus::synthetic_corpus(seed);
    let u = &corpus.training[0];
    let params = recognition_params();

    let t0 = std::time::Instant::now();
    let oracle = run_local::<f64>(&u.wav, SourceFormat::Wav, &params, JobMode::Train, Some(&u.speaker), None)
        .map_err(|e| e.to_string())?;
    let oracle_time = t0.elapsed();
    let oracle_bytes = match oracle {
        Outcome::Trained(ts) => edurt::pipeline::abi::training_set_record(&ts),
        Outcome::Classified(_) => return Err("oracle classified".into()),
    };

    let fired = Arc::new(AtomicBool::new(false));
    let victim = Arc::new(parking_lot::Mutex::new(None));
    let (f, v) = (fired.clone(), victim.clone());
    let hook: FaultHook = Arc::new(move |d: &Demand| {
        if d.stage_id() == "extract" && !f.swap(true, Ordering::SeqCst) {
            *v.lock() = Some(d.id());
            FaultAction::Crash
        } else {
            FaultAction::Proceed
        }
    });
    let node = start_gmt_with_hook("GMT,DST,DGT,DWT,DWT", lease_ms, hook);
    let start = std::time::Instant::now();
    let id = node
        .submit_job(JobSpec::dmarf(JobMode::Train, u.wav.clone(), SourceFormat::Wav, params, Some(&u.speaker)))
        .map_err(|e| e.to_string())?;
    let view = node.wait_job(&id, Duration::from_secs(30)).map_err(|e| e.to_string())?;
    let latency = start.elapsed();
    if view.state != JobState::Done {
        return Err(format!("job ended {:?}: {:?}", view.state, view.error));
    }
    let crashed = victim.lock().ok_or("fault hook never fired")?;
    let attempts = node
        .store()
        .and_then(|s| s.demand(crashed))
        .ok_or("crashed demand not tracked")?
        .attempts();
    Ok(FaultRun {
        latency,
        oracle: oracle_time,
        attempts,
        result_matches: view.result.as_deref() == Some(&oracle_bytes[..]),
    })
}
