//! Generator tier: turns a job into a chain of demands, one stage at a
//! time, feeding each stage's result to the next.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use log::{info, warn};
use parking_lot::{Condvar, Mutex};
use serde::Serialize;

use super::workload::WorkloadCatalog;
use super::{StoreLink, TierError};
use crate::clock::wall_clock_ms;
use crate::demand::{ContentKind, Demand, DemandId, DemandType, Payload};
use crate::pipeline::abi::{self, JobMode, Record, RecordKind};
use crate::pipeline::classify::{training_set_filename, TrainingMeta};
use crate::pipeline::executors::WORKLOAD as DMARF;
use crate::pipeline::{load_sample, training_meta, ModuleParams, SourceFormat};
use crate::store::{DepositOutcome, ResultOutcome};
use crate::transport::DemandDispatcher;
use crate::{Real, TrainingSet};

pub type JobId = String;

/// How long a generator blocks on one result request before re-depositing.
pub const RESULT_WAIT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub workload: String,
    pub mode: Option<JobMode>,
    pub input: Vec<u8>,
    pub format: Option<SourceFormat>,
    pub params: ModuleParams,
    pub speaker: Option<String>,
}

impl JobSpec {
    pub fn raw(workload: &str, input: Vec<u8>) -> Self {
        JobSpec {
            workload: workload.to_owned(),
            mode: None,
            input,
            format: None,
            params: ModuleParams::default(),
            speaker: None,
        }
    }

    pub fn dmarf(mode: JobMode, input: Vec<u8>, format: SourceFormat, params: ModuleParams, speaker: Option<&str>) -> Self {
        JobSpec {
            workload: DMARF.to_owned(),
            mode: Some(mode),
            input,
            format: Some(format),
            params,
            speaker: speaker.map(str::to_owned),
        }
    }

    /// Declared format, else a guess from the bytes.
    pub fn effective_format(&self) -> SourceFormat {
        self.format.unwrap_or_else(|| {
            if self.input.starts_with(b"RIFF") {
                SourceFormat::Wav
            } else if std::str::from_utf8(&self.input).is_ok() {
                SourceFormat::Text
            } else {
                SourceFormat::Pcm16le
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobView {
    pub job_id: JobId,
    pub workload: String,
    pub mode: Option<JobMode>,
    pub state: JobState,
    /// Last stage entered, if any.
    pub stage: Option<String>,
    pub stages_done: usize,
    pub stages_total: usize,
    pub demands: Vec<DemandId>,
    pub result: Option<Vec<u8>>,
    pub error: Option<String>,
    pub submitted_wall_ms: u64,
    pub finished_wall_ms: Option<u64>,
}

struct JobEntry {
    spec: JobSpec,
    view: JobView,
}

#[derive(Default)]
struct BoardInner {
    jobs: IndexMap<JobId, JobEntry>,
    queue: VecDeque<JobId>,
}

/// Jobs submitted to a node, queued for its generator instances.
#[derive(Default)]
pub struct JobBoard {
    inner: Mutex<BoardInner>,
    queued: Condvar,
    finished: Condvar,
}

impl JobBoard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&self, spec: JobSpec, stages_total: usize) -> JobId {
        let id = uuid::Uuid::new_v4().hyphenated().to_string();
        let view = JobView {
            job_id: id.clone(),
            workload: spec.workload.clone(),
            mode: spec.mode,
            state: JobState::Queued,
            stage: None,
            stages_done: 0,
            stages_total,
            demands: Vec::new(),
            result: None,
            error: None,
            submitted_wall_ms: wall_clock_ms(),
            finished_wall_ms: None,
        };
        let mut inner = self.inner.lock();
        inner.jobs.insert(id.clone(), JobEntry { spec, view });
        inner.queue.push_back(id.clone());
        drop(inner);
        self.queued.notify_one();
        id
    }

    /// Next queued job, marked running.
    pub fn take(&self, wait: Duration) -> Option<(JobId, JobSpec)> {
        let deadline = Instant::now() + wait;
        let mut inner = self.inner.lock();
        loop {
            if let Some(id) = inner.queue.pop_front() {
                let entry = inner.jobs.get_mut(&id).expect("queued jobs exist");
                entry.view.state = JobState::Running;
                return Some((id, entry.spec.clone()));
            }
            if self.queued.wait_until(&mut inner, deadline).timed_out() {
                return None;
            }
        }
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobView)) {
        if let Some(e) = self.inner.lock().jobs.get_mut(id) {
            f(&mut e.view);
        }
    }

    fn finish(&self, id: &str, outcome: Result<Vec<u8>, TierError>) {
        self.update(id, |v| {
            match outcome {
                Ok(r) => {
                    v.state = JobState::Done;
                    v.stages_done = v.stages_total;
                    v.result = Some(r);
                }
                Err(e) => {
                    v.state = JobState::Failed;
                    v.error = Some(e.to_string());
                }
            }
            v.finished_wall_ms = Some(wall_clock_ms());
        });
        self.finished.notify_all();
    }

    /// Puts a running job back at the head of the queue.
    pub fn requeue(&self, id: &str) {
        let mut inner = self.inner.lock();
        if let Some(e) = inner.jobs.get_mut(id) {
            if e.view.state == JobState::Running {
                e.view.state = JobState::Queued;
                inner.queue.push_front(id.to_owned());
                drop(inner);
                self.queued.notify_one();
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<JobView> {
        self.inner.lock().jobs.get(id).map(|e| e.view.clone())
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<JobView> {
        self.inner.lock().jobs.values().map(|e| e.view.clone()).collect()
    }

    /// Blocks until the job is done or failed, or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Option<JobView> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.inner.lock();
        loop {
            let view = inner.jobs.get(id)?.view.clone();
            if view.state.is_terminal() || Instant::now() >= deadline {
                return Some(view);
            }
            self.finished.wait_until(&mut inner, deadline);
        }
    }
}

/// Per-workload hooks around the generic chain.
pub trait JobDriver: Send + Sync {
    /// Rejects a job before any demand is deposited.
    fn validate(&self, job: &JobSpec) -> Result<(), TierError>;

    fn initial_payload(&self, job: &JobSpec) -> Result<Payload, TierError>;

    /// Wraps the final stage; `exec` deposits the payload and waits for the result.
    fn run_final(
        &self,
        job: &JobSpec,
        payload: Vec<u8>,
        exec: &mut dyn FnMut(Vec<u8>) -> Result<Vec<u8>, TierError>,
    ) -> Result<Vec<u8>, TierError> {
        let _ = job;
        exec(payload)
    }

    fn content_kind(&self) -> ContentKind {
        ContentKind::RAW
    }
}

/// Feeds the job input to the first stage unchanged.
pub struct PassThrough;

impl JobDriver for PassThrough {
    fn validate(&self, _job: &JobSpec) -> Result<(), TierError> {
        Ok(())
    }

    fn initial_payload(&self, job: &JobSpec) -> Result<Payload, TierError> {
        Ok(Payload::raw(job.input.clone()))
    }
}

/// Training sets by file name. Training on one set is serialized by its
/// own lock, held for the whole final stage.
#[derive(Default)]
pub struct TrainingSets {
    sets: Mutex<BTreeMap<String, Arc<Mutex<TrainingSet>>>>,
}

impl TrainingSets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, meta: TrainingMeta) -> Arc<Mutex<TrainingSet>> {
        self.sets
            .lock()
            .entry(meta.filename())
            .or_insert_with(|| Arc::new(Mutex::new(TrainingSet::new(meta))))
            .clone()
    }

    pub fn get(&self, name: &str) -> Option<TrainingSet> {
        let set = self.sets.lock().get(name).cloned()?;
        let ts = set.lock().clone();
        Some(ts)
    }

    pub fn names(&self) -> Vec<String> {
        self.sets.lock().keys().cloned().collect()
    }

    /// `(file name, training-set record)` for each set.
    pub fn export(&self) -> Vec<(String, Vec<u8>)> {
        let sets: Vec<_> = self.sets.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        sets.into_iter()
            .map(|(k, v)| (k, abi::training_set_record(&*v.lock())))
            .collect()
    }

    pub fn import(&self, entries: &[(String, Vec<u8>)]) -> Result<(), TierError> {
        let mut decoded = Vec::new();
        for (name, rec) in entries {
            let ts = Record::decode(rec)
                .and_then(|r| r.expect(RecordKind::TrainingSet))
                .and_then(|r| abi::decode_training_set::<Real>(r.field(abi::TAG_BODY)?))
                .map_err(|e| TierError::BadInput(format!("training set {name}: {e}")))?;
            decoded.push((name.clone(), ts));
        }
        let mut sets = self.sets.lock();
        for (name, ts) in decoded {
            sets.insert(name, Arc::new(Mutex::new(ts)));
        }
        Ok(())
    }
}

pub struct DmarfDriver {
    pub training: Arc<TrainingSets>,
}

impl DmarfDriver {
    fn mode(job: &JobSpec) -> Result<JobMode, TierError> {
        job.mode
            .ok_or_else(|| TierError::Validation("mode is required (train or classify)".into()))
    }
}

impl JobDriver for DmarfDriver {
    fn validate(&self, job: &JobSpec) -> Result<(), TierError> {
        let mode = Self::mode(job)?;
        if mode == JobMode::Train && job.speaker.as_deref().is_none_or(str::is_empty) {
            return Err(TierError::Validation("train requires a speaker id".into()));
        }
        load_sample::<Real>(&job.input, job.effective_format()).map_err(|e| TierError::BadInput(e.to_string()))?;
        Ok(())
    }

    fn initial_payload(&self, job: &JobSpec) -> Result<Payload, TierError> {
        Ok(Payload::record(abi::job_input_record(
            &job.input,
            job.effective_format(),
            &job.params,
        )))
    }

    fn run_final(
        &self,
        job: &JobSpec,
        features: Vec<u8>,
        exec: &mut dyn FnMut(Vec<u8>) -> Result<Vec<u8>, TierError>,
    ) -> Result<Vec<u8>, TierError> {
        let mode = Self::mode(job)?;
        let set = self.training.entry(training_meta(&job.params));
        let bad = |e: crate::pipeline::PipelineError| TierError::StageFailed {
            stage: "classify_or_train".into(),
            cause: e.to_string(),
        };
        match mode {
            JobMode::Classify => {
                let ts = set.lock().clone();
                if ts.is_empty() {
                    return Err(TierError::Validation(format!(
                        "training set {} is empty; train first",
                        ts.meta.filename()
                    )));
                }
                exec(abi::final_request(&features, mode, None, &ts).map_err(bad)?)
            }
            JobMode::Train => {
                let mut ts = set.lock();
                let out = exec(abi::final_request(&features, mode, job.speaker.as_deref(), &*ts).map_err(bad)?)?;
                let rec = Record::decode(&out)
                    .and_then(|r| r.expect(RecordKind::TrainingSet))
                    .map_err(bad)?;
                *ts = abi::decode_training_set(rec.field(abi::TAG_BODY).map_err(bad)?).map_err(bad)?;
                Ok(out)
            }
        }
    }

    fn content_kind(&self) -> ContentKind {
        ContentKind::RECORD
    }
}

/// Snapshot file name of the training set a parameter set trains.
pub fn training_set_name(params: &ModuleParams) -> String {
    let m = training_meta(params);
    training_set_filename(
        crate::pipeline::classify::classifier_name(m.classifier).unwrap_or("Unknown"),
        m.preprocessing,
        m.feature_method,
        (m.noise_removed, m.silence_removed),
    )
}

#[derive(Clone)]
pub struct GeneratorSpec {
    pub link: StoreLink,
    pub board: Arc<JobBoard>,
    pub catalog: Arc<WorkloadCatalog>,
    pub training: Arc<TrainingSets>,
}

impl GeneratorSpec {
    pub fn driver_for(&self, workload: &str) -> Box<dyn JobDriver> {
        if workload == DMARF {
            Box::new(DmarfDriver {
                training: self.training.clone(),
            })
        } else {
            Box::new(PassThrough)
        }
    }
}

/// One generator tier instance.
pub struct DemandGenerator {
    name: String,
    spec: GeneratorSpec,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl DemandGenerator {
    pub fn new(name: impl Into<String>, spec: GeneratorSpec) -> Self {
        DemandGenerator {
            name: name.into(),
            spec,
            stop: Arc::new(AtomicBool::new(false)),
            handle: None,
        }
    }

    pub fn start(&mut self) {
        if self.handle.is_some() {
            return;
        }
        self.stop.store(false, Ordering::SeqCst);
        let (name, spec, stop) = (self.name.clone(), self.spec.clone(), self.stop.clone());
        self.handle = Some(
            std::thread::Builder::new()
                .name(name.clone())
                .spawn(move || generator_loop(&name, &spec, &stop))
                .expect("spawn generator thread"),
        );
    }

    /// Finishes the job in hand, then joins.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn is_running(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }
}

impl Drop for DemandGenerator {
    fn drop(&mut self) {
        self.stop();
    }
}

fn generator_loop(name: &str, spec: &GeneratorSpec, stop: &AtomicBool) {
    info!("{name}: started against {}", spec.link.describe());
    let mut dispatcher = spec.link.dispatcher();
    while !stop.load(Ordering::SeqCst) {
        if let Some((id, job)) = spec.board.take(Duration::from_millis(100)) {
            let outcome = run_job(spec, &mut dispatcher, &id, &job, stop);
            if let Err(TierError::Interrupted) = outcome {
                info!("{name}: stopping; job {id} returned to the queue");
                spec.board.requeue(&id);
                break;
            }
            if let Err(e) = &outcome {
                warn!("{name}: job {id} failed: {e}");
            }
            spec.board.finish(&id, outcome);
        }
    }
    info!("{name}: stopped");
}

/// Runs every stage of `job` through the store and returns the final output.
pub fn run_job(
    spec: &GeneratorSpec,
    dispatcher: &mut DemandDispatcher,
    id: &str,
    job: &JobSpec,
    stop: &AtomicBool,
) -> Result<Vec<u8>, TierError> {
    let workload = spec
        .catalog
        .get(&job.workload)
        .ok_or_else(|| TierError::UnknownWorkload(job.workload.clone()))?;
    let driver = spec.driver_for(&job.workload);
    let stages: Vec<String> = workload.ordered()?.iter().map(|s| s.stage_id.clone()).collect();
    let kind = driver.content_kind();
    let mut payload = driver.initial_payload(job)?.bytes;
    for (i, stage) in stages.iter().enumerate() {
        spec.board.update(id, |v| {
            v.stage = Some(stage.clone());
            v.stages_done = i;
        });
        let target = StageTarget {
            job_id: id,
            workload: &job.workload,
            stage,
            kind,
        };
        let mut exec = |p: Vec<u8>| run_stage(dispatcher, &spec.board, &target, p, stop);
        payload = if i + 1 == stages.len() {
            driver.run_final(job, payload, &mut exec)?
        } else {
            exec(payload)?
        };
    }
    Ok(payload)
}

/// Where a stage's demand goes and which job it belongs to.
struct StageTarget<'a> {
    job_id: &'a str,
    workload: &'a str,
    stage: &'a str,
    kind: ContentKind,
}

fn run_stage(
    dispatcher: &mut DemandDispatcher,
    board: &JobBoard,
    target: &StageTarget<'_>,
    payload: Vec<u8>,
    stop: &AtomicBool,
) -> Result<Vec<u8>, TierError> {
    let StageTarget {
        job_id,
        workload,
        stage,
        kind,
    } = *target;
    let failed = |cause: String| TierError::StageFailed {
        stage: stage.to_owned(),
        cause,
    };
    loop {
        let demand = Demand::new(
            workload,
            stage,
            DemandType::Procedural,
            Payload {
                kind,
                bytes: payload.clone(),
            },
        );
        let sig = demand.signature().clone();
        match dispatcher.deposit_demand(&demand).map_err(|e| failed(e.to_string()))? {
            DepositOutcome::CachedResult(r) => return Ok(r),
            DepositOutcome::Queued(d) | DepositOutcome::Coalesced(d) => board.update(job_id, |v| {
                if !v.demands.contains(&d) {
                    v.demands.push(d);
                }
            }),
        }
        match dispatcher
            .withdraw_result(&sig, true, RESULT_WAIT)
            .map_err(|e| failed(e.to_string()))?
        {
            ResultOutcome::Result(r) => return Ok(r),
            ResultOutcome::Failed(m) => return Err(failed(m)),
            // Re-depositing is harmless (it coalesces or hits the cache)
            // and recovers a demand lost by a store restart.
            ResultOutcome::TimedOut | ResultOutcome::NotReady => {}
        }
        if stop.load(Ordering::SeqCst) {
            return Err(TierError::Interrupted);
        }
    }
}
