use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use super::store::{self, EVENT_LOG_FILE, SNAPSHOT_DIR};
use super::{Registration, RegistryConfig, RegistryError, RegistryEvent, RegistryState};
use crate::codebook::Codebook;
use crate::continual::QueryAdapter;
use crate::embed::Embedder;
use crate::index::{QuerySpec, RankedResult};

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct WriterSlot {
    log: Option<File>,
}

/// Thread-safe registry. Mutations are serialized through one writer; queries
/// run lock-free against the most recently published state.
pub struct Registry {
    embedder: Embedder,
    data_dir: Option<PathBuf>,
    writer: Mutex<WriterSlot>,
    current: RwLock<Arc<RegistryState>>,
    events: RwLock<Vec<RegistryEvent>>,
}

impl Registry {
    fn assemble(
        embedder: Embedder,
        data_dir: Option<PathBuf>,
        log: Option<File>,
        state: RegistryState,
        events: Vec<RegistryEvent>,
    ) -> Self {
        Registry {
            embedder,
            data_dir,
            writer: Mutex::new(WriterSlot { log }),
            current: RwLock::new(Arc::new(state)),
            events: RwLock::new(events),
        }
    }

    fn build_embedder(config: &RegistryConfig) -> Result<Embedder, RegistryError> {
        config.validate()?;
        let embedder = Embedder::from_config(&config.embedder)?;
        if let Some(d) = embedder.dim() {
            if d != config.dim {
                return Err(RegistryError::ConfigMismatch(format!(
                    "embedder produces {d} dimensions, registry expects {}",
                    config.dim
                )));
            }
        }
        Ok(embedder)
    }

    /// A registry with no persistence.
    pub fn in_memory(config: RegistryConfig) -> Result<Self, RegistryError> {
        let embedder = Self::build_embedder(&config)?;
        Ok(Self::assemble(embedder, None, None, RegistryState::new(config), Vec::new()))
    }

    /// A non-persistent registry seeded with a pre-trained codebook.
    pub fn in_memory_with_codebook(config: RegistryConfig, codebook: Codebook) -> Result<Self, RegistryError> {
        let embedder = Self::build_embedder(&config)?;
        let state = RegistryState::with_codebook(config, codebook);
        Ok(Self::assemble(embedder, None, None, state, Vec::new()))
    }

    /// Opens (or initializes) a data directory, restoring from its snapshot
    /// and replaying the event log tail.
    pub fn open(data_dir: &Path, config: RegistryConfig) -> Result<Self, RegistryError> {
        let embedder = Self::build_embedder(&config)?;
        fs::create_dir_all(data_dir)?;
        let (state, events) = store::restore(data_dir, &config, &embedder)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(data_dir.join(EVENT_LOG_FILE))?;
        Ok(Self::assemble(embedder, Some(data_dir.to_path_buf()), Some(log), state, events))
    }

    /// Like [`open`](Self::open), but a fresh directory starts from
    /// `codebook`, which is checkpointed immediately so replay can find it.
    /// An existing directory ignores `codebook`.
    pub fn open_with_codebook(data_dir: &Path, config: RegistryConfig, codebook: Codebook) -> Result<Self, RegistryError> {
        let fresh = !data_dir.join(SNAPSHOT_DIR).exists() && !data_dir.join(EVENT_LOG_FILE).exists();
        if fresh {
            config.validate()?;
            fs::create_dir_all(data_dir)?;
            store::snapshot(&RegistryState::with_codebook(config.clone(), codebook), data_dir)?;
        } else {
            log::warn!("{} already holds a registry; ignoring the supplied codebook", data_dir.display());
        }
        Self::open(data_dir, config)
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// The currently published state. Holding it does not block writers.
    pub fn state(&self) -> Arc<RegistryState> {
        self.current.read().expect("state lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.state().len()
    }

    pub fn is_empty(&self) -> bool {
        self.state().is_empty()
    }

    /// Runs `op` against the current state under the writer lock, durably
    /// appends its event, then publishes the new state. Nothing is visible if
    /// any step fails.
    fn commit<T>(
        &self,
        op: impl FnOnce(&RegistryState, u64) -> Result<(RegistryState, RegistryEvent, T), RegistryError>,
    ) -> Result<T, RegistryError> {
        let mut slot = self.writer.lock().expect("writer lock poisoned");
        let current = self.state();
        let (next, event, out) = op(&current, now_ms())?;
        if let Some(log) = slot.log.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("event serializes");
            line.push(b'\n');
            log.write_all(&line)?;
            log.flush()?;
        }
        self.events.write().expect("event lock poisoned").push(event);
        *self.current.write().expect("state lock poisoned") = Arc::new(next);
        Ok(out)
    }

    pub fn register_agent(&self, doc: &[u8]) -> Result<Registration, RegistryError> {
        self.commit(|s, now| s.register_agent(&self.embedder, doc, now))
    }

    pub fn update_agent(&self, agent_id: &str, doc: &[u8]) -> Result<u64, RegistryError> {
        self.commit(|s, now| {
            let (next, e) = s.update_agent(&self.embedder, agent_id, doc, now)?;
            let seq = e.seq;
            Ok((next, e, seq))
        })
    }

    pub fn deregister_agent(&self, agent_id: &str) -> Result<u64, RegistryError> {
        self.commit(|s, now| {
            let (next, e) = s.deregister_agent(&self.embedder, agent_id, now)?;
            let seq = e.seq;
            Ok((next, e, seq))
        })
    }

    /// Returns the agent's updated credibility.
    pub fn record_endorsement(&self, agent_id: &str, score: f64) -> Result<f64, RegistryError> {
        self.commit(|s, now| {
            let (next, e) = s.record_endorsement(&self.embedder, agent_id, score, now)?;
            let cred = next.index().get(agent_id).map_or(0.0, |x| x.profile.credibility);
            Ok((next, e, cred))
        })
    }

    pub fn query(&self, spec: &QuerySpec) -> Result<Vec<RankedResult>, RegistryError> {
        self.state().query(&self.embedder, spec)
    }

    /// Events with `seq > since`, in order.
    pub fn event_feed(&self, since: u64) -> Vec<RegistryEvent> {
        let events = self.events.read().expect("event lock poisoned");
        let start = events.partition_point(|e| e.seq <= since);
        events[start..].to_vec()
    }

    /// Swaps in a new query adapter. Not logged: adapters are training
    /// artifacts persisted with snapshots.
    pub fn set_adapter(&self, adapter: QueryAdapter) -> Result<(), RegistryError> {
        let _slot = self.writer.lock().expect("writer lock poisoned");
        let next = self.state().with_adapter(adapter)?;
        *self.current.write().expect("state lock poisoned") = Arc::new(next);
        Ok(())
    }

    /// Checkpoints into the registry's own data directory.
    pub fn snapshot(&self) -> Result<PathBuf, RegistryError> {
        let dir = self
            .data_dir
            .clone()
            .ok_or_else(|| RegistryError::ConfigMismatch("in-memory registry has no data directory".into()))?;
        self.snapshot_to(&dir)
    }

    /// Writes a snapshot of the current state under `dir/snapshot`.
    pub fn snapshot_to(&self, dir: &Path) -> Result<PathBuf, RegistryError> {
        let _slot = self.writer.lock().expect("writer lock poisoned");
        fs::create_dir_all(dir)?;
        store::snapshot(&self.state(), dir)
    }
}
