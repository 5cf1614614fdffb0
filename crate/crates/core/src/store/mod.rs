//! The demand store tier: pending queues, in-process leases and the
//! warehouse of completed results keyed by signature.
//!
//! All operations take one store-wide lock and are atomic with respect to
//! each other. Blocking result requests park on a per-request slot and never
//! hold the store lock while waiting.

mod snapshot;
mod sweeper;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock};
use crate::codec::{CodecError, Reader, Writer};
use crate::demand::{Demand, DemandError, DemandEvent, DemandId, DemandSignature, DemandState};

pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use sweeper::Sweeper;

pub const DEFAULT_LEASE_MS: u64 = 5000;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    pub max_attempts: u32,
    pub lease_ms: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            lease_ms: DEFAULT_LEASE_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown stage {workload}/{stage}")]
    UnknownStage { workload: String, stage: String },
    #[error("unknown demand {0}: not in process")]
    UnknownDemand(DemandId),
    #[error("demand {0} is {1}, expected PENDING")]
    NotPending(DemandId, DemandState),
    #[error("store busy: {0} live demands")]
    Busy(usize),
    #[error(transparent)]
    Transition(#[from] DemandError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepositOutcome {
    Queued(DemandId),
    /// A live demand with the same signature already exists.
    Coalesced(DemandId),
    CachedResult(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResultOutcome {
    Result(Vec<u8>),
    NotReady,
    TimedOut,
    /// The demand for this signature exhausted its attempts.
    Failed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequeueReport {
    pub requeued: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreCounters {
    pub deposits: u64,
    pub withdrawals: u64,
    pub cache_hits: u64,
    pub requeues: u64,
    pub failures: u64,
    pub coalesced: u64,
    pub completed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub counters: StoreCounters,
    pub pending: u64,
    pub in_process: u64,
    pub warehouse_size: u64,
    /// `workload/stage` → pending queue depth.
    pub queue_depths: BTreeMap<String, u64>,
    /// Number of withdraw requests seen, including empty ones.
    pub withdraw_polls: u64,
    /// Store clock at the most recent withdraw request.
    pub last_withdraw_poll_ms: Option<u64>,
    pub now_ms: u64,
}

impl StoreStats {
    pub fn encode_into(&self, w: &mut Writer) {
        let c = &self.counters;
        for v in [
            c.deposits,
            c.withdrawals,
            c.cache_hits,
            c.requeues,
            c.failures,
            c.coalesced,
            c.completed,
            self.pending,
            self.in_process,
            self.warehouse_size,
        ] {
            w.u64(v);
        }
        w.u32(self.queue_depths.len() as u32);
        for (k, v) in &self.queue_depths {
            w.str(k).u64(*v);
        }
        w.u64(self.withdraw_polls)
            .opt_u64(self.last_withdraw_poll_ms)
            .u64(self.now_ms);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let counters = StoreCounters {
            deposits: r.u64()?,
            withdrawals: r.u64()?,
            cache_hits: r.u64()?,
            requeues: r.u64()?,
            failures: r.u64()?,
            coalesced: r.u64()?,
            completed: r.u64()?,
        };
        let pending = r.u64()?;
        let in_process = r.u64()?;
        let warehouse_size = r.u64()?;
        let n = r.u32()?;
        let mut queue_depths = BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            queue_depths.insert(k, r.u64()?);
        }
        Ok(StoreStats {
            counters,
            pending,
            in_process,
            warehouse_size,
            queue_depths,
            withdraw_polls: r.u64()?,
            last_withdraw_poll_ms: r.opt_u64()?,
            now_ms: r.u64()?,
        })
    }
}

/// Row of the demand listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandSummary {
    pub seq: u64,
    pub id: DemandId,
    pub signature: String,
    pub workload: String,
    pub stage: String,
    pub state: String,
    pub attempts: u32,
    pub created_wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandFilter {
    pub state: Option<DemandState>,
    pub workload: Option<String>,
    pub stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandPage {
    pub demands: Vec<DemandSummary>,
    /// Pass back as `cursor` to fetch the next page; absent on the last page.
    pub next_cursor: Option<u64>,
}

/// Store operations as observed at their linearization point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreOp {
    DepositDemand {
        demand: Demand,
        outcome: Result<DepositOutcome, StoreError>,
    },
    WithdrawDemand {
        workload: String,
        stages: Option<Vec<String>>,
        now: u64,
        delivered: Option<DemandId>,
    },
    DepositResult {
        id: DemandId,
        result: Vec<u8>,
        outcome: Result<(), StoreError>,
    },
    WithdrawResult {
        signature: DemandSignature,
        outcome: ResultOutcome,
    },
    RequeueExpired {
        now: u64,
        report: RequeueReport,
    },
}

/// Receives every operation while the store lock is held.
pub trait StoreObserver: Send + Sync {
    fn observe(&self, op: &StoreOp);
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    ticket: i64,
    id: DemandId,
}

#[derive(Default)]
struct Waiter {
    slot: Mutex<Option<ResultOutcome>>,
    cv: Condvar,
}

impl Waiter {
    fn fulfil(&self, outcome: ResultOutcome) {
        let mut slot = self.slot.lock();
        if slot.is_none() {
            *slot = Some(outcome);
            self.cv.notify_all();
        }
    }
}

struct Tracked {
    seq: u64,
    demand: Demand,
}

struct WarehouseEntry {
    result: Vec<u8>,
    completed_by: Option<DemandId>,
}

#[derive(Default)]
struct Inner {
    workloads: HashMap<String, IndexMap<String, VecDeque<QueueEntry>>>,
    demands: HashMap<DemandId, Tracked>,
    order: BTreeMap<u64, DemandId>,
    in_process: HashSet<DemandId>,
    live: HashMap<DemandSignature, DemandId>,
    warehouse: HashMap<DemandSignature, WarehouseEntry>,
    failures: HashMap<DemandSignature, String>,
    waiters: HashMap<DemandSignature, Vec<Arc<Waiter>>>,
    counters: StoreCounters,
    next_seq: u64,
    back_ticket: i64,
    front_ticket: i64,
    withdraw_polls: u64,
    last_withdraw_poll: Option<u64>,
}

impl Inner {
    fn queue_mut(&mut self, workload: &str, stage: &str) -> Option<&mut VecDeque<QueueEntry>> {
        self.workloads.get_mut(workload)?.get_mut(stage)
    }

    fn wake(&mut self, sig: &DemandSignature, outcome: ResultOutcome) {
        if let Some(ws) = self.waiters.remove(sig) {
            for w in ws {
                w.fulfil(outcome.clone());
            }
        }
    }

    fn replace(&mut self, demand: Demand) {
        if let Some(t) = self.demands.get_mut(&demand.id()) {
            t.demand = demand;
        }
    }

    fn pending_count(&self) -> u64 {
        self.workloads
            .values()
            .flat_map(|stages| stages.values())
            .map(|q| q.len() as u64)
            .sum()
    }
}

pub struct DemandStore {
    inner: Mutex<Inner>,
    pending_cv: Condvar,
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    observer: Option<Arc<dyn StoreObserver>>,
}

impl std::fmt::Debug for DemandStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemandStore").field("config", &self.config).finish_non_exhaustive()
    }
}

impl DemandStore {
    pub fn new(config: StoreConfig) -> Self {
        Self::with_clock(config, Arc::new(MonotonicClock))
    }

    pub fn with_clock(config: StoreConfig, clock: Arc<dyn Clock>) -> Self {
        DemandStore {
            inner: Mutex::new(Inner::default()),
            pending_cv: Condvar::new(),
            config,
            clock,
            observer: None,
        }
    }

    pub fn with_observer(mut self, observer: Arc<dyn StoreObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn observe(&self, op: impl FnOnce() -> StoreOp) {
        if let Some(o) = &self.observer {
            o.observe(&op());
        }
    }

    /// Makes `(workload, stage)` acceptable to [`deposit_demand`](Self::deposit_demand).
    pub fn register_stage(&self, workload: &str, stage: &str) {
        let mut inner = self.inner.lock();
        inner
            .workloads
            .entry(workload.to_owned())
            .or_default()
            .entry(stage.to_owned())
            .or_default();
    }

    pub fn has_stage(&self, workload: &str, stage: &str) -> bool {
        let inner = self.inner.lock();
        inner
            .workloads
            .get(workload)
            .is_some_and(|s| s.contains_key(stage))
    }

    pub fn deposit_demand(&self, demand: Demand) -> Result<DepositOutcome, StoreError> {
        let mut inner = self.inner.lock();
        let outcome = self.deposit_locked(&mut inner, &demand);
        self.observe(|| StoreOp::DepositDemand {
            demand: demand.clone(),
            outcome: outcome.clone(),
        });
        drop(inner);
        if matches!(outcome, Ok(DepositOutcome::Queued(_))) {
            self.pending_cv.notify_all();
        }
        outcome
    }

    fn deposit_locked(&self, inner: &mut Inner, demand: &Demand) -> Result<DepositOutcome, StoreError> {
        if demand.state() != DemandState::Pending {
            return Err(StoreError::NotPending(demand.id(), demand.state()));
        }
        let sig = demand.signature().clone();
        if inner.queue_mut(&sig.workload_id, &sig.stage_id).is_none() {
            return Err(StoreError::UnknownStage {
                workload: sig.workload_id,
                stage: sig.stage_id,
            });
        }
        if let Some(entry) = inner.warehouse.get(&sig) {
            let result = entry.result.clone();
            inner.counters.deposits += 1;
            inner.counters.cache_hits += 1;
            return Ok(DepositOutcome::CachedResult(result));
        }
        if let Some(twin) = inner.live.get(&sig).copied() {
            inner.counters.deposits += 1;
            inner.counters.coalesced += 1;
            return Ok(DepositOutcome::Coalesced(twin));
        }
        if inner.demands.contains_key(&demand.id()) {
            // Same id deposited twice after the first terminated.
            return Err(StoreError::NotPending(demand.id(), inner.demands[&demand.id()].demand.state()));
        }
        inner.failures.remove(&sig);
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.back_ticket += 1;
        let entry = QueueEntry {
            ticket: inner.back_ticket,
            id: demand.id(),
        };
        inner
            .queue_mut(&sig.workload_id, &sig.stage_id)
            .expect("checked above")
            .push_back(entry);
        inner.order.insert(seq, demand.id());
        inner.live.insert(sig, demand.id());
        inner.demands.insert(
            demand.id(),
            Tracked {
                seq,
                demand: demand.clone(),
            },
        );
        inner.counters.deposits += 1;
        Ok(DepositOutcome::Queued(demand.id()))
    }

    /// Pops the oldest pending demand of `workload` whose stage passes the filter.
    pub fn withdraw_demand(&self, workload: &str, stages: Option<&[String]>) -> Option<Demand> {
        self.withdraw_demand_wait(workload, stages, Duration::ZERO)
    }

    /// Like [`withdraw_demand`](Self::withdraw_demand) but waits up to `wait`
    /// for a matching demand to arrive.
    pub fn withdraw_demand_wait(
        &self,
        workload: &str,
        stages: Option<&[String]>,
        wait: Duration,
    ) -> Option<Demand> {
        let deadline = Instant::now() + wait;
        let mut inner = self.inner.lock();
        loop {
            let now = self.clock.now_ms();
            inner.withdraw_polls += 1;
            inner.last_withdraw_poll = Some(now);
            let got = self.withdraw_locked(&mut inner, workload, stages, now);
            if got.is_some() || Instant::now() >= deadline {
                self.observe(|| StoreOp::WithdrawDemand {
                    workload: workload.to_owned(),
                    stages: stages.map(<[String]>::to_vec),
                    now,
                    delivered: got.as_ref().map(Demand::id),
                });
                return got;
            }
            self.pending_cv.wait_until(&mut inner, deadline);
        }
    }

    fn withdraw_locked(
        &self,
        inner: &mut Inner,
        workload: &str,
        stages: Option<&[String]>,
        now: u64,
    ) -> Option<Demand> {
        let queues = inner.workloads.get_mut(workload)?;
        let best = queues
            .iter()
            .filter(|(stage, _)| stages.is_none_or(|f| f.iter().any(|s| s == *stage)))
            .filter_map(|(stage, q)| q.front().map(|e| (e.ticket, stage.clone())))
            .min_by_key(|(ticket, _)| *ticket)?;
        let entry = queues.get_mut(&best.1)?.pop_front()?;
        let current = inner.demands.get(&entry.id)?.demand.clone();
        let leased = current
            .transition(DemandEvent::Withdraw {
                leased_at: now,
                deadline: now + self.config.lease_ms.max(1),
            })
            .expect("queued demands are pending");
        inner.replace(leased.clone());
        inner.in_process.insert(entry.id);
        inner.counters.withdrawals += 1;
        Some(leased)
    }

    /// Stores `result` for an in-process demand. First writer wins: a
    /// deposit for a demand that is no longer in process is rejected.
    pub fn deposit_result(&self, id: DemandId, result: Vec<u8>) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let outcome = self.deposit_result_locked(&mut inner, id, &result);
        self.observe(|| StoreOp::DepositResult {
            id,
            result: result.clone(),
            outcome: outcome.clone(),
        });
        outcome
    }

    fn deposit_result_locked(&self, inner: &mut Inner, id: DemandId, result: &[u8]) -> Result<(), StoreError> {
        if !inner.in_process.contains(&id) {
            return Err(StoreError::UnknownDemand(id));
        }
        let current = inner.demands[&id].demand.clone();
        let done = current.transition(DemandEvent::DepositResult(result.to_vec()))?;
        let sig = done.signature().clone();
        inner.in_process.remove(&id);
        inner.replace(done);
        inner.live.remove(&sig);
        debug_assert!(!inner.warehouse.contains_key(&sig));
        inner.warehouse.insert(
            sig.clone(),
            WarehouseEntry {
                result: result.to_vec(),
                completed_by: Some(id),
            },
        );
        inner.counters.completed += 1;
        inner.wake(&sig, ResultOutcome::Result(result.to_vec()));
        Ok(())
    }

    pub fn withdraw_result(&self, sig: &DemandSignature, wait: bool, timeout: Duration) -> ResultOutcome {
        let waiter = {
            let mut inner = self.inner.lock();
            let immediate = if let Some(e) = inner.warehouse.get(sig) {
                Some(ResultOutcome::Result(e.result.clone()))
            } else if let (Some(reason), false) = (inner.failures.get(sig), inner.live.contains_key(sig)) {
                Some(ResultOutcome::Failed(reason.clone()))
            } else if !wait {
                Some(ResultOutcome::NotReady)
            } else {
                None
            };
            if let Some(out) = immediate {
                if !wait {
                    self.observe(|| StoreOp::WithdrawResult {
                        signature: sig.clone(),
                        outcome: out.clone(),
                    });
                }
                return out;
            }
            let w = Arc::new(Waiter::default());
            inner.waiters.entry(sig.clone()).or_default().push(w.clone());
            w
        };

        let deadline = Instant::now() + timeout;
        {
            let mut slot = waiter.slot.lock();
            while slot.is_none() {
                if waiter.cv.wait_until(&mut slot, deadline).timed_out() {
                    break;
                }
            }
            if let Some(out) = slot.take() {
                return out;
            }
        }
        let mut inner = self.inner.lock();
        if let Some(ws) = inner.waiters.get_mut(sig) {
            ws.retain(|w| !Arc::ptr_eq(w, &waiter));
            if ws.is_empty() {
                inner.waiters.remove(sig);
            }
        }
        drop(inner);
        // Fulfilled between the timeout and the deregistration.
        let late = waiter.slot.lock().take();
        late.unwrap_or(ResultOutcome::TimedOut)
    }

    /// Returns expired leases to the front of their queue, or fails them
    /// once `max_attempts` is reached.
    pub fn requeue_expired(&self, now: u64) -> RequeueReport {
        let mut inner = self.inner.lock();
        let mut expired: Vec<Demand> = inner
            .in_process
            .iter()
            .map(|id| inner.demands[id].demand.clone())
            .filter(|d| d.lease_deadline().is_some_and(|dl| dl < now))
            .collect();
        // Pushed to the front one by one, so the oldest must go last.
        expired.sort_by_key(|d| std::cmp::Reverse((d.created_at(), inner.demands[&d.id()].seq)));
        let mut report = RequeueReport::default();
        for d in expired {
            let id = d.id();
            inner.in_process.remove(&id);
            if d.attempts() < self.config.max_attempts {
                let back = d.transition(DemandEvent::LeaseExpire).expect("in-process demand");
                inner.front_ticket -= 1;
                let ticket = inner.front_ticket;
                if let Some(q) = inner.queue_mut(back.workload_id(), back.stage_id()) {
                    q.push_front(QueueEntry { ticket, id });
                }
                inner.replace(back);
                inner.counters.requeues += 1;
                report.requeued += 1;
            } else {
                let failed = d.transition(DemandEvent::Exhaust).expect("in-process demand");
                let sig = failed.signature().clone();
                let reason = format!("demand {id} exhausted {} attempts", failed.attempts());
                inner.replace(failed);
                inner.live.remove(&sig);
                inner.failures.insert(sig.clone(), reason.clone());
                inner.counters.failures += 1;
                inner.wake(&sig, ResultOutcome::Failed(reason));
                report.failed += 1;
            }
        }
        self.observe(|| StoreOp::RequeueExpired { now, report });
        drop(inner);
        if report.requeued > 0 {
            self.pending_cv.notify_all();
        }
        report
    }

    /// [`requeue_expired`](Self::requeue_expired) at the store's own clock.
    pub fn requeue_expired_now(&self) -> RequeueReport {
        self.requeue_expired(self.clock.now_ms())
    }

    pub fn stats(&self) -> StoreStats {
        let inner = self.inner.lock();
        let mut queue_depths = BTreeMap::new();
        for (w, stages) in &inner.workloads {
            for (s, q) in stages {
                queue_depths.insert(format!("{w}/{s}"), q.len() as u64);
            }
        }
        StoreStats {
            counters: inner.counters.clone(),
            pending: inner.pending_count(),
            in_process: inner.in_process.len() as u64,
            warehouse_size: inner.warehouse.len() as u64,
            queue_depths,
            withdraw_polls: inner.withdraw_polls,
            last_withdraw_poll_ms: inner.last_withdraw_poll,
            now_ms: self.clock.now_ms(),
        }
    }

    pub fn demand(&self, id: DemandId) -> Option<Demand> {
        self.inner.lock().demands.get(&id).map(|t| t.demand.clone())
    }

    /// Live demand (pending or in process) holding `sig`, if any.
    pub fn live_demand(&self, sig: &DemandSignature) -> Option<Demand> {
        let inner = self.inner.lock();
        let id = inner.live.get(sig)?;
        inner.demands.get(id).map(|t| t.demand.clone())
    }

    /// Id of the demand whose result populated the warehouse entry for `sig`.
    pub fn completed_by(&self, sig: &DemandSignature) -> Option<DemandId> {
        self.inner.lock().warehouse.get(sig).and_then(|e| e.completed_by)
    }

    pub fn list_demands(&self, filter: &DemandFilter, cursor: Option<u64>, limit: usize) -> DemandPage {
        let inner = self.inner.lock();
        let start = cursor.map_or(0, |c| c + 1);
        let mut demands = Vec::new();
        let mut more = false;
        for (&seq, id) in inner.order.range(start..) {
            let d = &inner.demands[id].demand;
            if filter.state.is_some_and(|s| s != d.state())
                || filter.workload.as_deref().is_some_and(|w| w != d.workload_id())
                || filter.stage.as_deref().is_some_and(|s| s != d.stage_id())
            {
                continue;
            }
            if demands.len() == limit {
                more = true;
                break;
            }
            demands.push(DemandSummary {
                seq,
                id: d.id(),
                signature: d.signature().to_string(),
                workload: d.workload_id().to_owned(),
                stage: d.stage_id().to_owned(),
                state: d.state().label().to_owned(),
                attempts: d.attempts(),
                created_wall_ms: d.created_wall(),
            });
        }
        let next_cursor = if more { demands.last().map(|d| d.seq) } else { None };
        DemandPage { demands, next_cursor }
    }

    /// Copy of the warehouse, sorted by signature.
    pub fn warehouse_entries(&self) -> Vec<(DemandSignature, Vec<u8>)> {
        let inner = self.inner.lock();
        let mut out: Vec<_> = inner
            .warehouse
            .iter()
            .map(|(s, e)| (s.clone(), e.result.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Loads warehouse entries. Refused while any demand is live, so a
    /// restored signature can never also be pending.
    pub fn restore_warehouse(&self, entries: Vec<(DemandSignature, Vec<u8>)>) -> Result<usize, StoreError> {
        let mut inner = self.inner.lock();
        if !inner.live.is_empty() {
            return Err(StoreError::Busy(inner.live.len()));
        }
        let mut added = 0;
        for (sig, result) in entries {
            if let std::collections::hash_map::Entry::Vacant(v) = inner.warehouse.entry(sig.clone()) {
                v.insert(WarehouseEntry {
                    result,
                    completed_by: None,
                });
                inner.failures.remove(&sig);
                added += 1;
            }
        }
        Ok(added)
    }
}
