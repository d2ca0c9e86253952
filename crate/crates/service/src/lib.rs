//! HTTP service for human-answered elicitation sessions.
//!
//! Each session is persisted as an append-only JSON-lines event log in the
//! data directory and rebuilt on startup by replaying its answers, so a
//! restarted server resumes every session at the same pending query.

mod api;
pub mod log;
pub mod session;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use mopref_core::{BasisCache, Momdp64};
use tokio::net::TcpListener;

pub use api::router;
use log::{Event, EventLog};
use session::{replay, Session, Status};

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("data directory {path}: {source}")]
    DataDir { path: PathBuf, source: std::io::Error },
    #[error("session log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
}

/// Shared server state: known instances and live sessions.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    instances: HashMap<String, Arc<Momdp64>>,
    data_dir: PathBuf,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    cache: BasisCache<f64>,
}

impl AppState {
    /// Registers `instances` under their ids (and digests) and resumes every
    /// session found in `data_dir`. Sessions whose instance is no longer
    /// served are skipped with a warning.
    pub fn open(data_dir: &Path, instances: Vec<(String, Momdp64)>) -> Result<Self, StartupError> {
        std::fs::create_dir_all(data_dir)
            .map_err(|source| StartupError::DataDir { path: data_dir.to_path_buf(), source })?;
        let mut by_id = HashMap::new();
        for (id, mdp) in instances {
            let mdp = Arc::new(mdp);
            by_id.insert(mdp.digest().to_string(), mdp.clone());
            by_id.insert(id, mdp);
        }
        let state = AppState {
            inner: Arc::new(Inner {
                instances: by_id,
                data_dir: data_dir.to_path_buf(),
                sessions: Mutex::new(HashMap::new()),
                cache: BasisCache::new(),
            }),
        };
        state.resume_sessions()?;
        Ok(state)
    }

    fn resume_sessions(&self) -> Result<(), StartupError> {
        let dir = &self.inner.data_dir;
        let entries = std::fs::read_dir(dir).map_err(|source| StartupError::DataDir { path: dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let events = EventLog::read(&path).map_err(|source| StartupError::Log { path: path.clone(), source })?;
            match self.rebuild(&path, events) {
                Ok(Some(session)) => {
                    let id = session.id.clone();
                    self.insert(id, session);
                }
                Ok(None) => eprintln!("warning: skipping {}: instance not served", path.display()),
                Err(source) => return Err(StartupError::Log { path, source }),
            }
        }
        Ok(())
    }

    fn rebuild(&self, path: &Path, events: Vec<Event>) -> std::io::Result<Option<Session>> {
        let mut events = events.into_iter();
        let Some(Event::Created { session_id, instance_id, instance_digest, config, timestamp }) = events.next() else {
            return Err(std::io::Error::other("log does not start with a created event"));
        };
        let Some(mdp) = self.inner.instances.get(&instance_id).filter(|m| m.digest() == instance_digest).cloned()
        else {
            return Ok(None);
        };
        let mut verdicts = Vec::new();
        let mut aborted = false;
        let mut updated = timestamp;
        for event in events {
            match event {
                Event::Answered { verdict, timestamp, .. } => {
                    verdicts.push(verdict);
                    updated = timestamp;
                }
                Event::Aborted { timestamp } => {
                    aborted = true;
                    updated = timestamp;
                }
                Event::Created { .. } => return Err(std::io::Error::other("duplicate created event")),
            }
        }
        let status = if aborted { Status::Aborted } else { replay(&mdp, &config, &verdicts, &self.inner.cache) };
        Ok(Some(Session {
            id: session_id,
            instance_id,
            mdp,
            config,
            verdicts,
            status,
            log: EventLog::reopen(path.to_path_buf())?,
            created: timestamp,
            updated,
        }))
    }

    fn insert(&self, id: String, session: Session) -> SessionHandle {
        let handle = Arc::new(tokio::sync::Mutex::new(session));
        self.inner.sessions.lock().expect("session map lock").insert(id, handle.clone());
        handle
    }

    fn session(&self, id: &str) -> Option<SessionHandle> {
        self.inner.sessions.lock().expect("session map lock").get(id).cloned()
    }

    fn instance(&self, id: &str) -> Option<Arc<Momdp64>> {
        self.inner.instances.get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.lock().expect("session map lock").len()
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }
}

/// Serves the API on `listener` until the process is stopped.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
