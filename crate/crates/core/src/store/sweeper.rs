use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use super::DemandStore;

/// Background thread calling [`DemandStore::requeue_expired_now`] on a fixed period.
pub struct Sweeper {
    stop: Arc<(Mutex<bool>, Condvar)>,
    handle: Option<JoinHandle<()>>,
}

impl Sweeper {
    /// Sweeps every `lease_ms / 2` of the store's configuration.
    pub fn spawn(store: Arc<DemandStore>) -> Self {
        let period = Duration::from_millis((store.config().lease_ms / 2).max(1));
        Self::spawn_with_period(store, period)
    }

    pub fn spawn_with_period(store: Arc<DemandStore>, period: Duration) -> Self {
        let stop = Arc::new((Mutex::new(false), Condvar::new()));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("dst-sweeper".into())
            .spawn(move || {
                let (lock, cv) = &*flag;
                let mut stopped = lock.lock();
                while !*stopped {
                    cv.wait_for(&mut stopped, period);
                    if *stopped {
                        break;
                    }
                    let report = store.requeue_expired_now();
                    if report.requeued + report.failed > 0 {
                        log::info!(
                            "lease sweep: requeued {} failed {}",
                            report.requeued,
                            report.failed
                        );
                    }
                }
            })
            .expect("spawn sweeper thread");
        Sweeper {
            stop,
            handle: Some(handle),
        }
    }

    pub fn stop(&mut self) {
        *self.stop.0.lock() = true;
        self.stop.1.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        self.stop();
    }
}
