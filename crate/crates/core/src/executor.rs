//! Named stage executors: pure `bytes -> bytes` functions run by workers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub type ExecutorFn = dyn Fn(&[u8]) -> Result<Vec<u8>, ExecutorError> + Send + Sync;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutorError(pub String);

impl fmt::Display for ExecutorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ExecutorError {}

impl From<crate::pipeline::PipelineError> for ExecutorError {
    fn from(e: crate::pipeline::PipelineError) -> Self {
        ExecutorError(e.to_string())
    }
}

struct Entry {
    run: Arc<ExecutorFn>,
    calls: AtomicU64,
}

/// Executors by id, each with an invocation counter.
#[derive(Default)]
pub struct ExecutorRegistry {
    entries: BTreeMap<String, Entry>,
}

impl ExecutorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `echo` plus the speaker-recognition stages.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register("echo", |b| Ok(b.to_vec()));
        crate::pipeline::executors::register_pipeline_executors(&mut r);
        r
    }

    /// Adds or replaces an executor. Replacing resets its counter.
    pub fn register<F>(&mut self, id: &str, f: F)
    where
        F: Fn(&[u8]) -> Result<Vec<u8>, ExecutorError> + Send + Sync + 'static,
    {
        self.entries.insert(
            id.to_owned(),
            Entry {
                run: Arc::new(f),
                calls: AtomicU64::new(0),
            },
        );
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn execute(&self, id: &str, payload: &[u8]) -> Result<Vec<u8>, ExecutorError> {
        let e = self
            .entries
            .get(id)
            .ok_or_else(|| ExecutorError(format!("no executor named {id:?}")))?;
        e.calls.fetch_add(1, Ordering::SeqCst);
        (e.run)(payload)
    }

    pub fn invocations(&self, id: &str) -> u64 {
        self.entries.get(id).map_or(0, |e| e.calls.load(Ordering::SeqCst))
    }

    pub fn total_invocations(&self) -> u64 {
        self.entries.values().map(|e| e.calls.load(Ordering::SeqCst)).sum()
    }
}

impl fmt::Debug for ExecutorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, e)| (k, e.calls.load(Ordering::SeqCst))))
            .finish()
    }
}
