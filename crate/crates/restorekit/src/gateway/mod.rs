//! HTTP service over sessions, images and event streams, all under `/v1`.
//!
//! Every session transition runs on the blocking pool while holding that
//! session's lock, is appended to its event log, and only then fanned out
//! to stream subscribers. On start-up the sessions are rebuilt from the
//! logs and the auto-advancing ones that were still running resume.

pub mod api;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock};

use restorekit_core::degrade::Degrader;
use restorekit_core::orchestrator::{Engine, EngineError, Event, SessionConfig, SessionLog, Status};
use tokio::sync::broadcast;

use crate::blobstore::PngBlobStore;
use crate::config::Config;
use crate::eventstore::{EventStore, SessionMeta};
use crate::profile::{Backends, SystemClock};
use api::{project, ApiError, ApiSession};

pub use routes::router;

pub struct Slot {
    id: String,
    log: Mutex<SessionLog>,
    meta: SessionMeta,
    tx: broadcast::Sender<Event>,
    driving: AtomicBool,
}

impl Slot {
    fn new(log: SessionLog, meta: SessionMeta) -> Self {
        let (tx, _) = broadcast::channel(256);
        Slot { id: log.session.id.clone(), log: Mutex::new(log), meta, tx, driving: AtomicBool::new(false) }
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionLog> {
        self.log.lock().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn project(&self) -> ApiSession {
        project(&self.lock().session, &self.meta)
    }

    /// History so far plus a receiver for everything after it, taken
    /// under the session lock so nothing falls in between.
    pub fn subscribe(&self) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let log = self.lock();
        (log.events.clone(), self.tx.subscribe())
    }
}

pub struct Gateway {
    engine: Engine,
    degrader: Degrader,
    blobs: PngBlobStore,
    events: EventStore,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    defaults: SessionConfig,
    auto_advance: bool,
    max_upload: usize,
    profile: String,
    fingerprint: String,
}

impl Gateway {
    /// Opens the stores under `cfg.data_dir` and replays every session log.
    pub fn open(cfg: &Config, backends: &Backends) -> anyhow::Result<Self> {
        let root = PathBuf::from(&cfg.data_dir);
        let blobs = PngBlobStore::open(root.join("images"))?;
        let events = EventStore::open(root.join("sessions"))?;
        let engine = backends.engine(Arc::new(blobs.clone()), Arc::new(SystemClock::default()));
        let mut sessions = BTreeMap::new();
        for (log, meta) in events.load_all()? {
            sessions.insert(log.session.id.clone(), Arc::new(Slot::new(log, meta)));
        }
        log::info!("recovered {} session(s) from {}", sessions.len(), root.display());
        Ok(Gateway {
            engine,
            degrader: backends.degrader.clone(),
            blobs,
            events,
            sessions: RwLock::new(sessions),
            defaults: cfg.session_config(),
            auto_advance: cfg.server.auto_advance,
            max_upload: cfg.max_upload_bytes(),
            profile: format!("{:?}", backends.resolved.profile).to_lowercase(),
            fingerprint: backends.resolved.fingerprint(),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sessions.read().unwrap_or_else(PoisonError::into_inner).get(id).cloned()
    }

    pub fn projections(&self) -> Vec<ApiSession> {
        let slots: Vec<Arc<Slot>> = self.sessions.read().unwrap_or_else(PoisonError::into_inner).values().cloned().collect();
        slots.iter().map(|s| s.project()).collect()
    }

    fn insert(&self, log: SessionLog, meta: SessionMeta) -> Result<Arc<Slot>, ApiError> {
        let id = log.session.id.clone();
        self.events.create(&id, &meta, &log.events).map_err(|e| ApiError::internal("store_error", e))?;
        let slot = Arc::new(Slot::new(log, meta));
        self.sessions.write().unwrap_or_else(PoisonError::into_inner).insert(id, slot.clone());
        Ok(slot)
    }

    /// Runs one engine operation on a session, persists whatever events it
    /// appended and only then publishes them. A failed write rolls the
    /// in-memory log back.
    fn mutate<T>(
        &self,
        slot: &Slot,
        op: impl FnOnce(&Engine, &mut SessionLog) -> Result<T, EngineError>,
    ) -> Result<(T, ApiSession), ApiError> {
        let mut log = slot.lock();
        let before = log.clone();
        let n = log.events.len();
        let out = op(&self.engine, &mut log);
        let fresh = log.events[n..].to_vec();
        if let Err(e) = self.events.append(&log.session.id, &fresh) {
            *log = before;
            return Err(ApiError::internal("store_error", e));
        }
        for e in fresh {
            let _ = slot.tx.send(e);
        }
        let out = out?;
        Ok((out, project(&log.session, &slot.meta)))
    }

    /// Advances an auto-advancing session on the blocking pool until it
    /// stops running. At most one driver per session.
    pub fn drive(self: &Arc<Self>, slot: Arc<Slot>) {
        if !slot.meta.auto_advance || slot.driving.swap(true, Ordering::AcqRel) {
            return;
        }
        let gw = self.clone();
        tokio::task::spawn_blocking(move || loop {
            while slot.lock().session.status == Status::Running {
                if let Err(e) = gw.mutate(&slot, |engine, log| engine.advance(log)) {
                    log::warn!("session {}: {}", slot.id, e.message);
                    break;
                }
            }
            slot.driving.store(false, Ordering::Release);
            // an override may have resumed the session after the check above
            let running = slot.lock().session.status == Status::Running;
            if !running || slot.driving.swap(true, Ordering::AcqRel) {
                break;
            }
        });
    }

    /// Restarts drivers for recovered sessions that were mid-run.
    pub fn resume(self: &Arc<Self>) {
        let slots: Vec<Arc<Slot>> = self.sessions.read().unwrap_or_else(PoisonError::into_inner).values().cloned().collect();
        for slot in slots {
            if slot.lock().session.status == Status::Running {
                self.drive(slot);
            }
        }
    }
}

/// A server on its own runtime thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Drops the runtime with every connection on it and waits for the
    /// thread. Sessions being driven finish on the blocking pool.
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Binds `bind` and serves `gw` from a fresh multi-threaded runtime on a
/// background thread.
pub fn spawn(gw: Arc<Gateway>, bind: &str) -> std::io::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener converts");
            gw.resume();
            let app = router(gw.clone());
            // no graceful drain: open event streams would hold it up forever
            tokio::select! {
                served = axum::serve(listener, app) => {
                    if let Err(e) = served {
                        log::error!("server stopped: {e}");
                    }
                }
                _ = rx => {}
            }
        });
        rt.shutdown_background();
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
