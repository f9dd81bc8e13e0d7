//! Session registry. Each live session is owned by one worker thread that
//! runs training and applies selections in arrival order; every other path
//! reads the last persisted snapshot from disk.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use icpl_core::envkit::EnvId;
use icpl_core::icpl::store::to_report_json;
use icpl_core::icpl::{
    apply_final_pick, apply_human_selection, run_iteration, session_report, AblationFlags, IcplConfig, IcplError, Mode,
    SelectionAck, SelectionSource, Session, SessionState, SessionStatus, SessionStore,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

#[derive(Debug, Error)]
pub enum StudioError {
    #[error("no session `{0}`")]
    UnknownSession(String),
    #[error("no replay {iteration}_{candidate} in session `{id}`")]
    UnknownReplay { id: String, iteration: usize, candidate: usize },
    #[error("session worker for `{0}` has stopped")]
    WorkerGone(String),
    #[error(transparent)]
    Icpl(#[from] IcplError),
}

impl From<std::io::Error> for StudioError {
    fn from(e: std::io::Error) -> Self {
        StudioError::Icpl(IcplError::Io(e))
    }
}

impl From<serde_json::Error> for StudioError {
    fn from(e: serde_json::Error) -> Self {
        StudioError::Icpl(IcplError::Json(e))
    }
}

pub type Result<T, E = StudioError> = std::result::Result<T, E>;

/// The immutable part of a session's configuration shown in listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub env: EnvId,
    pub k: usize,
    pub n: usize,
    pub mode: Mode,
    pub ablation: AblationFlags,
    pub backend_kind: String,
}

impl ConfigSnapshot {
    fn of(cfg: &IcplConfig) -> Self {
        ConfigSnapshot {
            env: cfg.env,
            k: cfg.k,
            n: cfg.n,
            mode: cfg.mode,
            ablation: cfg.ablation,
            backend_kind: cfg.backend.kind().to_string(),
        }
    }
}

/// Stored as `manifest.json`; `status` is refreshed from the state file on
/// every read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub config: ConfigSnapshot,
    pub status: SessionStatus,
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub config: IcplConfig,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// Best and worst pick for an iteration, or with `final_pick` the
/// iteration whose selected program is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub iteration: usize,
    #[serde(default)]
    pub best: Option<usize>,
    #[serde(default)]
    pub worst: Option<usize>,
    #[serde(default)]
    pub final_pick: bool,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// Session overview. Task metrics appear only for proxy sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub manifest: SessionManifest,
    pub iteration: usize,
    pub awaiting_final_pick: bool,
    pub ledger_budget: usize,
    pub ledger_used: usize,
    pub selections: Vec<Option<SelectionView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_rts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionView {
    pub best: usize,
    pub worst: usize,
    pub source: SelectionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingStage {
    Selection,
    FinalPick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub env_step: usize,
    pub component_means: BTreeMap<String, f64>,
    pub total_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEntry {
    pub iteration: usize,
    pub candidate: usize,
    pub program_id: String,
    pub replay_url: String,
    pub trace_summary: Option<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub session_id: String,
    pub stage: PendingStage,
    /// Iteration awaiting best and worst; for the final pick, the last one.
    pub iteration: usize,
    pub entries: Vec<PendingEntry>,
}

enum Command {
    Select {
        request: SelectionRequest,
        reply: oneshot::Sender<Result<SelectionAck, IcplError>>,
    },
}

struct Handle {
    manifest: SessionManifest,
    store: SessionStore,
    commands: Option<mpsc::Sender<Command>>,
    worker: Option<JoinHandle<()>>,
    error: Arc<Mutex<Option<String>>>,
}

#[derive(Default)]
struct Registry {
    sessions: BTreeMap<String, Handle>,
    keys: HashMap<String, String>,
}

pub struct Studio {
    root: PathBuf,
    registry: Mutex<Registry>,
}

const MANIFEST: &str = "manifest.json";

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn ledger_used(store: &SessionStore) -> Result<usize> {
    let path = store.ledger_path();
    if !path.exists() {
        return Ok(0);
    }
    Ok(fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()).count())
}

impl Studio {
    /// Opens the data directory and resumes every unfinished session at its
    /// last persisted status.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let sessions_dir = root.join("sessions");
        fs::create_dir_all(&sessions_dir)?;
        let mut registry = Registry::default();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&sessions_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let mut manifest: SessionManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
            manifest.dir = dir.clone();
            let store = SessionStore::new(&dir)?;
            let session = Session::open(store.clone())?;
            if let Some(k) = &manifest.idempotency_key {
                registry.keys.insert(k.clone(), manifest.id.clone());
            }
            let handle = spawn(manifest, store, session);
            registry.sessions.insert(handle.manifest.id.clone(), handle);
        }
        Ok(Studio {
            root,
            registry: Mutex::new(registry),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates a session and starts its worker. A repeated idempotency key
    /// returns the original manifest without creating anything.
    pub fn create_session(&self, request: CreateRequest) -> Result<SessionManifest> {
        let mut reg = self.registry.lock().expect("registry lock");
        if let Some(id) = request.idempotency_key.as_ref().and_then(|k| reg.keys.get(k)) {
            let id = id.clone();
            drop(reg);
            return self.manifest(&id);
        }
        request.config.validate()?;
        let mut n = reg.sessions.len() + 1;
        let id = loop {
            let id = format!("session-{n:04}");
            if !reg.sessions.contains_key(&id) && !self.root.join("sessions").join(&id).exists() {
                break id;
            }
            n += 1;
        };
        let dir = self.root.join("sessions").join(&id);
        let store = SessionStore::new(&dir)?;
        let session = Session::create(id.clone(), request.config.clone(), Some(store.clone()))?;
        let manifest = SessionManifest {
            id: id.clone(),
            created_at: now_ms(),
            config: ConfigSnapshot::of(&request.config),
            status: session.state.status,
            dir,
            idempotency_key: request.idempotency_key.clone(),
        };
        fs::write(store.root().join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        if let Some(k) = request.idempotency_key {
            reg.keys.insert(k, id.clone());
        }
        reg.sessions.insert(id, spawn(manifest.clone(), store, session));
        Ok(manifest)
    }

    fn with_handle<T>(&self, id: &str, f: impl FnOnce(&Handle) -> T) -> Result<T> {
        let reg = self.registry.lock().expect("registry lock");
        reg.sessions
            .get(id)
            .map(f)
            .ok_or_else(|| StudioError::UnknownSession(id.to_string()))
    }

    fn store(&self, id: &str) -> Result<SessionStore> {
        self.with_handle(id, |h| h.store.clone())
    }

    fn load_state(&self, id: &str) -> Result<SessionState> {
        Ok(self.store(id)?.load_state()?)
    }

    pub fn manifest(&self, id: &str) -> Result<SessionManifest> {
        let mut m = self.with_handle(id, |h| h.manifest.clone())?;
        m.status = self.load_state(id)?.status;
        Ok(m)
    }

    pub fn list(&self) -> Result<Vec<SessionManifest>> {
        let ids: Vec<String> = self
            .registry
            .lock()
            .expect("registry lock")
            .sessions
            .keys()
            .cloned()
            .collect();
        ids.iter().map(|id| self.manifest(id)).collect()
    }

    pub fn view(&self, id: &str) -> Result<SessionView> {
        let (manifest, store, error) = self.with_handle(id, |h| {
            (h.manifest.clone(), h.store.clone(), h.error.lock().expect("error lock").clone())
        })?;
        let state = store.load_state()?;
        let proxy = state.config.mode == Mode::Proxy;
        Ok(SessionView {
            manifest: SessionManifest {
                status: state.status,
                ..manifest
            },
            iteration: state.records.len(),
            awaiting_final_pick: state.awaiting_final_pick(),
            ledger_budget: state.config.query_budget()?,
            ledger_used: ledger_used(&store)?,
            selections: state
                .records
                .iter()
                .map(|r| {
                    r.selection.map(|s| SelectionView {
                        best: s.good,
                        worst: s.bad,
                        source: s.source,
                    })
                })
                .collect(),
            selected_rts: proxy.then(|| state.selected_scores()),
            error,
        })
    }

    /// Candidates awaiting a human decision.
    pub fn pending(&self, id: &str) -> Result<PendingView> {
        let state = self.load_state(id)?;
        if state.status != SessionStatus::AwaitingSelection {
            return Err(IcplError::WrongStatus {
                expected: "awaiting_selection".into(),
                actual: state.status,
            }
            .into());
        }
        let entry = |iter: usize, k: usize| -> PendingEntry {
            let rec = &state.records[iter - 1];
            PendingEntry {
                iteration: iter,
                candidate: k,
                program_id: format!("{iter}_{k}"),
                replay_url: format!("/api/sessions/{id}/replays/{iter}/{k}"),
                trace_summary: rec.traces.get(k).and_then(|t| t.checkpoints.last()).map(|c| TraceSummary {
                    env_step: c.env_step,
                    component_means: c.component_means.clone(),
                    total_mean: c.total_mean,
                }),
            }
        };
        let last = state.records.len();
        if state.awaiting_final_pick() {
            let entries = state.selected_goods().into_iter().map(|(r, g)| entry(r.index, g)).collect();
            return Ok(PendingView {
                session_id: id.to_string(),
                stage: PendingStage::FinalPick,
                iteration: last,
                entries,
            });
        }
        Ok(PendingView {
            session_id: id.to_string(),
            stage: PendingStage::Selection,
            iteration: last,
            entries: (0..state.config.k).map(|k| entry(last, k)).collect(),
        })
    }

    /// Raw bytes of a stored replay document.
    pub fn replay(&self, id: &str, iteration: usize, candidate: usize) -> Result<Vec<u8>> {
        let store = self.store(id)?;
        let path = store.replay_path(iteration, candidate);
        if !path.is_file() {
            return Err(StudioError::UnknownReplay {
                id: id.to_string(),
                iteration,
                candidate,
            });
        }
        Ok(store.read_replay_bytes(iteration, candidate)?)
    }

    /// Queues a selection on the session's worker and waits for the
    /// persisted acknowledgement. Requests that cannot apply are answered
    /// from the snapshot without queueing.
    pub async fn submit_selection(&self, id: &str, request: SelectionRequest) -> Result<SelectionAck> {
        let state = self.load_state(id)?;
        if let Some(ack) = request.idempotency_key.as_ref().and_then(|k| state.applied.get(k)) {
            return Ok(ack.clone());
        }
        if state.config.mode != Mode::Human {
            return Err(IcplError::InvalidSelection("proxy sessions select automatically".into()).into());
        }
        if state.status != SessionStatus::AwaitingSelection {
            return Err(IcplError::WrongStatus {
                expected: "awaiting_selection".into(),
                actual: state.status,
            }
            .into());
        }
        let sender = self
            .with_handle(id, |h| h.commands.clone())?
            .ok_or_else(|| StudioError::WorkerGone(id.to_string()))?;
        let (reply, rx) = oneshot::channel();
        sender
            .send(Command::Select { request, reply })
            .map_err(|_| StudioError::WorkerGone(id.to_string()))?;
        Ok(rx.await.map_err(|_| StudioError::WorkerGone(id.to_string()))??)
    }

    /// Report JSON of a finished session; also written to `report.json`.
    /// Identical bytes on every export.
    pub fn report(&self, id: &str) -> Result<String> {
        export_report(&self.store(id)?)
    }

    /// Stops accepting commands and waits for every worker to finish its
    /// current step. Later selections fail with `WorkerGone`.
    pub fn shutdown(&self) {
        let workers: Vec<JoinHandle<()>> = {
            let mut reg = self.registry.lock().expect("registry lock");
            reg.sessions
                .values_mut()
                .filter_map(|h| {
                    h.commands = None;
                    h.worker.take()
                })
                .collect()
        };
        for w in workers {
            let _ = w.join();
        }
    }
}

/// Report of the stored session in `store`, written beside it.
pub fn export_report(store: &SessionStore) -> Result<String> {
    let session = Session::open(store.clone())?;
    let json = to_report_json(&session_report(&session)?)?;
    fs::write(store.root().join("report.json"), &json)?;
    Ok(json)
}

fn spawn(manifest: SessionManifest, store: SessionStore, session: Session) -> Handle {
    let error = Arc::new(Mutex::new(None));
    if session.state.status == SessionStatus::Finished {
        return Handle {
            manifest,
            store,
            commands: None,
            worker: None,
            error,
        };
    }
    let (tx, rx) = mpsc::channel();
    let err = Arc::clone(&error);
    let worker = std::thread::Builder::new()
        .name(format!("session-{}", manifest.id))
        .spawn(move || run_worker(session, rx, err))
        .expect("spawn session worker");
    Handle {
        manifest,
        store,
        commands: Some(tx),
        worker: Some(worker),
        error,
    }
}

fn run_worker(mut session: Session, commands: mpsc::Receiver<Command>, error: Arc<Mutex<Option<String>>>) {
    drive(&mut session, &error);
    while let Ok(cmd) = commands.recv() {
        match cmd {
            Command::Select { request, reply } => {
                let result = apply(&mut session, &request);
                let _ = reply.send(result);
            }
        }
        drive(&mut session, &error);
    }
}

/// Runs iterations until a human is needed, the session ends or a step
/// fails. A failed step leaves the session resumable from its last
/// persisted status.
fn drive(session: &mut Session, error: &Mutex<Option<String>>) {
    while matches!(session.state.status, SessionStatus::Generating | SessionStatus::Training) {
        if let Err(e) = run_iteration(session) {
            *error.lock().expect("error lock") = Some(e.to_string());
            return;
        }
    }
}

fn apply(session: &mut Session, r: &SelectionRequest) -> Result<SelectionAck, IcplError> {
    let key = r.idempotency_key.as_deref();
    if r.final_pick {
        return apply_final_pick(session, r.iteration, key);
    }
    match (r.best, r.worst) {
        (Some(best), Some(worst)) => apply_human_selection(session, r.iteration, best, worst, key),
        _ => Err(IcplError::InvalidSelection("both best and worst are required".into())),
    }
}
