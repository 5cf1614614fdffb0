//! Worker loop: withdraw a demand, run its executor, deposit the result.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, info, warn};

use super::workload::WorkloadCatalog;
use super::{StoreLink, TierError};
use crate::demand::{Demand, DemandType};
use crate::executor::ExecutorRegistry;
use crate::transport::{DemandDispatcher, DispatchError};

/// Poll interval when no demand is pending.
pub const WORKER_POLL: Duration = Duration::from_millis(100);

/// What a worker does with a demand it has just withdrawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultAction {
    Proceed,
    /// The worker dies holding the lease.
    Crash,
    /// The executor is treated as having thrown.
    Fail(String),
}

pub type FaultHook = Arc<dyn Fn(&Demand) -> FaultAction + Send + Sync>;

#[derive(Clone)]
pub struct WorkerSpec {
    pub link: StoreLink,
    pub executors: Arc<ExecutorRegistry>,
    pub catalog: Arc<WorkloadCatalog>,
    /// `workload` or `workload/stage` entries; empty serves every workload.
    pub filter: Vec<String>,
    pub poll: Duration,
    pub fault: Option<FaultHook>,
}

impl WorkerSpec {
    pub fn new(link: StoreLink, executors: Arc<ExecutorRegistry>, catalog: Arc<WorkloadCatalog>) -> Self {
        WorkerSpec {
            link,
            executors,
            catalog,
            filter: Vec::new(),
            poll: WORKER_POLL,
            fault: None,
        }
    }

    /// `(workload, stage filter)` pairs to poll, limited to stages this
    /// node has executors for.
    fn targets(&self) -> Vec<(String, Option<Vec<String>>)> {
        let mut wanted: BTreeMap<String, Option<Vec<String>>> = BTreeMap::new();
        if self.filter.is_empty() {
            for w in self.catalog.all() {
                wanted.insert(w.workload_id, None);
            }
        }
        for entry in &self.filter {
            match entry.split_once('/') {
                None => {
                    wanted.insert(entry.clone(), None);
                }
                Some((w, s)) => {
                    if let Some(stages) = wanted.entry(w.to_owned()).or_insert_with(|| Some(Vec::new())) {
                        stages.push(s.to_owned());
                    }
                }
            }
        }
        wanted
            .into_iter()
            .filter_map(|(w, stages)| {
                let def = self.catalog.get(&w)?;
                let runnable: Vec<String> = def
                    .stages
                    .iter()
                    .filter(|s| self.executors.contains(&s.executor_id))
                    .filter(|s| stages.as_ref().is_none_or(|f| f.contains(&s.stage_id)))
                    .map(|s| s.stage_id.clone())
                    .collect();
                if runnable.is_empty() {
                    None
                } else if stages.is_none() && runnable.len() == def.stages.len() {
                    Some((w, None))
                } else {
                    Some((w, Some(runnable)))
                }
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct WorkerCounters {
    pub completed: AtomicU64,
    pub abandoned: AtomicU64,
    pub discarded: AtomicU64,
}

/// One worker tier instance.
pub struct DemandWorker {
    name: String,
    spec: WorkerSpec,
    stop: Arc<AtomicBool>,
    working: Arc<AtomicBool>,
    counters: Arc<WorkerCounters>,
    handle: Option<JoinHandle<()>>,
}

impl DemandWorker {
    pub fn new(name: impl Into<String>, spec: WorkerSpec) -> Self {
        DemandWorker {
            name: name.into(),
            spec,
            stop: Arc::new(AtomicBool::new(false)),
            working: Arc::new(AtomicBool::new(false)),
            counters: Arc::default(),
            handle: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start_worker(&mut self) {
        if self.is_working() {
            return;
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.stop.store(false, Ordering::SeqCst);
        self.working.store(true, Ordering::SeqCst);
        let ctx = Loop {
            name: self.name.clone(),
            spec: self.spec.clone(),
            stop: self.stop.clone(),
            counters: self.counters.clone(),
        };
        let working = self.working.clone();
        self.handle = Some(
            std::thread::Builder::new()
                .name(self.name.clone())
                .spawn(move || {
                    ctx.run();
                    working.store(false, Ordering::SeqCst);
                })
                .expect("spawn worker thread"),
        );
    }

    /// Lets the in-flight demand finish, then joins the loop.
    pub fn stop_worker(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.working.store(false, Ordering::SeqCst);
    }

    pub fn is_working(&self) -> bool {
        self.working.load(Ordering::SeqCst)
    }

    pub fn counters(&self) -> &WorkerCounters {
        &self.counters
    }
}

impl Drop for DemandWorker {
    fn drop(&mut self) {
        self.stop_worker();
    }
}

struct Loop {
    name: String,
    spec: WorkerSpec,
    stop: Arc<AtomicBool>,
    counters: Arc<WorkerCounters>,
}

enum Step {
    Idle,
    Handled,
    Crashed,
}

impl Loop {
    fn run(&self) {
        info!("{}: started against {}", self.name, self.spec.link.describe());
        let mut dispatcher = self.spec.link.dispatcher();
        while !self.stop.load(Ordering::SeqCst) {
            match self.poll_once(&mut dispatcher) {
                Step::Crashed => {
                    warn!("{}: crashed by fault hook", self.name);
                    return;
                }
                Step::Handled | Step::Idle => {}
            }
        }
        info!("{}: stopped", self.name);
    }

    fn poll_once(&self, dispatcher: &mut DemandDispatcher) -> Step {
        let targets = self.spec.targets();
        if targets.is_empty() {
            std::thread::sleep(self.spec.poll);
            return Step::Idle;
        }
        let wait = self.spec.poll / targets.len() as u32;
        for (workload, stages) in &targets {
            match dispatcher.withdraw_demand(workload, stages.as_deref(), wait) {
                Ok(Some(d)) => return self.handle(dispatcher, d),
                Ok(None) => {}
                Err(e) => {
                    warn!("{}: withdraw failed: {e}", self.name);
                    std::thread::sleep(self.spec.poll);
                    return Step::Idle;
                }
            }
        }
        Step::Idle
    }

    fn handle(&self, dispatcher: &mut DemandDispatcher, d: Demand) -> Step {
        match self.execute(&d) {
            Ok(None) => Step::Crashed,
            Ok(Some(result)) => {
                match dispatcher.deposit_result(d.id(), result) {
                    Ok(()) => {
                        self.counters.completed.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(DispatchError::Remote { message, .. }) => {
                        self.counters.discarded.fetch_add(1, Ordering::SeqCst);
                        info!("{}: result for {} discarded: {message}", self.name, d.id());
                    }
                    Err(e) => warn!("{}: deposit_result for {} failed: {e}", self.name, d.id()),
                }
                Step::Handled
            }
            Err(e) => {
                self.counters.abandoned.fetch_add(1, Ordering::SeqCst);
                warn!("{}: abandoning {} ({}): {e}", self.name, d.id(), d.signature());
                Step::Handled
            }
        }
    }

    /// `Ok(None)` means the fault hook crashed the worker.
    fn execute(&self, d: &Demand) -> Result<Option<Vec<u8>>, TierError> {
        if let Some(hook) = &self.spec.fault {
            match hook(d) {
                FaultAction::Proceed => {}
                FaultAction::Crash => return Ok(None),
                FaultAction::Fail(m) => return Err(TierError::Validation(m)),
            }
        }
        if d.dtype() != DemandType::Procedural {
            return Err(TierError::UnsupportedDemandType(d.dtype()));
        }
        let sig = d.signature();
        let exec = self
            .spec
            .catalog
            .executor_for(&sig.workload_id, &sig.stage_id)
            .ok_or_else(|| TierError::UnknownWorkload(format!("{}/{}", sig.workload_id, sig.stage_id)))?;
        debug!("{}: running {exec} for {}", self.name, d.id());
        self.spec
            .executors
            .execute(&exec, &d.payload().bytes)
            .map(Some)
            .map_err(|e| TierError::StageFailed {
                stage: sig.stage_id.clone(),
                cause: e.to_string(),
            })
    }
}
