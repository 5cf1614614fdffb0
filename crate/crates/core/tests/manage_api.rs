mod common;

use std::time::Duration;

use common::{start_gmt, start_worker_node, wait_until};
use edurt::demand::{new_demand, DemandType};
use edurt::manage::types::{JobRequest, ParamsJson};
use edurt::manage::{ClientError, DemandQuery, ManageClient};
use edurt::tiers::{GipsyNode, TierIdentity};
use serde_json::{json, Value};

fn client(node: &GipsyNode) -> ManageClient {
    ManageClient::new(&node.manage_address().unwrap().to_string())
}

fn status(r: Result<(u16, Value), ClientError>) -> u16 {
    match r {
        Ok((s, _)) => s,
        Err(e) => e.status().unwrap_or_else(|| panic!("transport error {e}")),
    }
}

/// Registry and store, as seen through the API.
fn snapshot(c: &ManageClient) -> (Value, Value, Value) {
    let nodes = c.raw("GET", "/v1/nodes", None).unwrap().1;
    let mut stats = c.raw("GET", "/v1/store/stats", None).unwrap().1;
    // Clock and poll counters move on their own.
    for k in ["now_ms", "withdraw_polls", "last_withdraw_poll_ms"] {
        stats.as_object_mut().unwrap().remove(k);
    }
    let demands = c.raw("GET", "/v1/demands?limit=1000", None).unwrap().1;
    (nodes, stats, demands)
}

#[test]
fn fresh_gmt_lists_only_itself() {
    let gmt = start_gmt("GMT,DST,DGT,DWT", 5_000);
    let nodes = client(&gmt).nodes().unwrap();
    assert_eq!(nodes.len(), 1);
    assert_eq!(nodes[0].node_id, "gmt");
    let count = |id| nodes[0].tiers.iter().find(|t| t.identity == id).map_or(0, |t| t.count);
    assert_eq!(count(TierIdentity::DST), 1);
    assert_eq!(count(TierIdentity::DGT), 1);
    assert_eq!(count(TierIdentity::DWT), 1);

    let idle = client(&gmt)
        .demands(&DemandQuery {
            state: Some("PENDING".into()),
            ..Default::default()
        })
        .unwrap();
    assert!(idle.demands.is_empty() && idle.next_cursor.is_none());
}

#[test]
fn tier_add_and_remove_on_a_remote_node() {
    let gmt = start_gmt("GMT,DST,DGT,DWT", 5_000);
    let _w1 = start_worker_node(&gmt, "w1", "DWT");
    let c = client(&gmt);
    assert_eq!(c.nodes().unwrap().len(), 2);

    let (s, body) = c.raw("POST", "/v1/nodes/w1/tiers", Some(&json!({"identity": "DWT"}))).unwrap();
    assert_eq!(s, 201);
    assert_eq!(body["count"], 2);
    let dwt = |c: &ManageClient| {
        c.node("w1").unwrap().tiers.iter().find(|t| t.identity == TierIdentity::DWT).map_or(0, |t| t.count)
    };
    assert!(wait_until(Duration::from_secs(5), || dwt(&c) == 2));

    let before = snapshot(&c);
    assert_eq!(status(c.raw("POST", "/v1/nodes/w1/tiers", Some(&json!({"identity": "GMT"})))), 422);
    assert_eq!(status(c.raw("POST", "/v1/nodes/nope/tiers", Some(&json!({"identity": "DWT"})))), 404);
    assert_eq!(status(c.raw("DELETE", "/v1/nodes/w1/tiers/DGT", None)), 409);
    assert_eq!(status(c.raw("POST", "/v1/nodes/w1/tiers", Some(&json!({"identity": 7})))), 422);
    assert_eq!(before, snapshot(&c), "4xx responses must not change state");

    assert_eq!(c.remove_tier("w1", "DWT").unwrap().count, 1);
    assert_eq!(c.remove_tier("w1", "DWT").unwrap().count, 0);
    let err = c.remove_tier("w1", "DWT").unwrap_err();
    assert_eq!(err.status(), Some(409));
}

#[test]
fn job_validation_happens_before_any_deposit() {
    let gmt = start_gmt("GMT,DST,DGT,DWT", 5_000);
    let c = client(&gmt);
    let before = snapshot(&c);
    let train = JobRequest {
        workload: "dmarf".into(),
        mode: Some("train".into()),
        input_base64: None,
        input_text: Some("0.1 0.2 0.3".into()),
        format: Some("text".into()),
        speaker: None,
        params: ParamsJson::default(),
    };
    let err = c.submit_job(&train).unwrap_err();
    assert_eq!(err.status(), Some(422), "{err}");
    let unknown = JobRequest {
        workload: "nope".into(),
        speaker: Some("s".into()),
        ..train.clone()
    };
    assert_eq!(c.submit_job(&unknown).unwrap_err().status(), Some(404));
    assert_eq!(status(c.raw("POST", "/v1/jobs", Some(&json!({"workload": "dmarf", "extra": 1})))), 422);
    assert_eq!(status(c.raw("GET", "/v1/jobs/does-not-exist", None)), 404);
    assert_eq!(before, snapshot(&c));
    assert!(c.jobs().unwrap().is_empty());
}

#[test]
fn jobs_run_through_the_api() {
    let gmt = start_gmt("GMT,DST,DGT,DWT", 5_000);
    let c = client(&gmt);
    let req = JobRequest {
        workload: "dmarf".into(),
        mode: Some("train".into()),
        input_base64: None,
        input_text: Some((0..800).map(|i| format!("{:.4}", (i as f64 * 0.3).sin())).collect::<Vec<_>>().join(" ")),
        format: Some("text".into()),
        speaker: Some("alice".into()),
        params: ParamsJson::default(),
    };
    let (s, accepted) = c.raw("POST", "/v1/jobs", Some(&serde_json::to_value(&req).unwrap())).unwrap();
    assert_eq!(s, 202);
    let id = accepted["job_id"].as_str().unwrap().to_owned();
    let job = c.wait_job(&id, Duration::from_secs(30)).unwrap();
    assert_eq!(job.state, "done", "{job:?}");
    assert_eq!(job.result.as_ref().unwrap()["kind"], "training_set");
    assert!(job.result_ready);
    assert_eq!(c.job(&id).unwrap(), job, "result is repeatable");
    assert_eq!(c.jobs().unwrap().len(), 1);
    let page = c
        .demands(&DemandQuery {
            state: Some("completed".into()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(page.demands.len(), 4);
}

#[test]
fn demand_pagination_over_the_api() {
    let gmt = start_gmt("GMT,DST", 5_000);
    let store = gmt.store().unwrap().clone();
    store.register_stage("w", "s");
    let mut ids = Vec::new();
    for i in 0..250 {
        let d = new_demand("w", "s", DemandType::Procedural, format!("{i}").as_bytes());
        ids.push(d.id());
        store.deposit_demand(d).unwrap();
    }
    let c = client(&gmt);
    let mut seen = Vec::new();
    let mut q = DemandQuery {
        state: Some("PENDING".into()),
        workload: Some("w".into()),
        ..Default::default()
    };
    let mut pages = 0;
    loop {
        let page = c.demands(&q).unwrap();
        pages += 1;
        assert!(page.demands.len() <= 100);
        seen.extend(page.demands.iter().map(|d| d.id));
        match page.next_cursor {
            Some(cur) => q.cursor = Some(cur),
            None => break,
        }
    }
    assert_eq!(pages, 3);
    assert_eq!(seen, ids);
    let big = c.demands(&DemandQuery { limit: Some(1000), ..Default::default() }).unwrap();
    assert_eq!(big.demands.len(), 250);
    assert_eq!(status(c.raw("GET", "/v1/demands?limit=1001", None)), 422);
    assert_eq!(status(c.raw("GET", "/v1/demands?limit=0", None)), 422);
    assert_eq!(status(c.raw("GET", "/v1/demands?colour=red", None)), 422);
    assert_eq!(status(c.raw("GET", "/v1/demands?state=sleeping", None)), 422);
    let stats = c.store_stats().unwrap();
    assert_eq!(stats.queue_depths.get("w/s"), Some(&250));
}

#[test]
fn schema_endpoint_describes_tier_properties() {
    let gmt = start_gmt("GMT,DST", 5_000);
    let c = client(&gmt);
    let dwt = c.schema(TierIdentity::DWT).unwrap();
    let keys: Vec<_> = dwt.properties.iter().map(|p| p.key.as_str()).collect();
    assert!(keys.contains(&"worker.stages"), "{keys:?}");
    assert!(keys.contains(&"node.id"));
    assert_eq!(status(c.raw("GET", "/v1/schema/XYZ", None)), 404);
}
