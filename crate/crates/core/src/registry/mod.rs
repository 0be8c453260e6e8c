//! Event-sourced capability registry.
//!
//! Every mutation is expressed as a [`RegistryEvent`] and applied through
//! [`RegistryState::apply`]; live operations and log replay share that single
//! code path, so replaying a log reproduces the index exactly.
//!
//! [`RegistryState`] is an immutable value. [`Registry`] wraps it for
//! concurrent use: a single writer appends to the log and swaps in a new
//! state, while readers query whatever state was last published.

mod service;
mod store;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{train_codebook, AgentCode, Codebook, CodebookError, K_MAX_FACTOR};
use crate::continual::{ContinualConfig, QueryAdapter};
use crate::embed::{EmbedError, Embedder, EmbedderConfig, EmbeddingVector};
use crate::index::{rank, search, AgentIndex, IndexEntry, IndexError, QuerySpec, RankedResult};
use crate::profile::{
    canonical_query, canonical_text, profile_from_document, profile_from_value, profile_to_value,
    AgentProfile, ProfileError,
};

pub use service::Registry;
pub use store::{
    read_event_log, replay, restore, snapshot, write_codes, CODES_FILE, CODEBOOK_FILE, EVENT_LOG_FILE,
    SNAPSHOT_DIR, SNAPSHOT_FORMAT_VERSION,
};

/// Weight of the previous credibility in the endorsement moving average.
pub const ENDORSEMENT_RETAIN: f64 = 0.9;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(#[from] EmbedError),
    #[error("agent `{0}` is already registered")]
    DuplicateId(String),
    #[error("agent `{0}` is not registered")]
    UnknownId(String),
    #[error("value out of range for `{field}`: {reason}")]
    OutOfRangeValue { field: &'static str, reason: String },
    #[error(transparent)]
    Index(IndexError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("unsupported snapshot format version {0}")]
    VersionSkew(u32),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<IndexError> for RegistryError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::DuplicateId(id) => RegistryError::DuplicateId(id),
            IndexError::UnknownId(id) => RegistryError::UnknownId(id),
            other => RegistryError::Index(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    pub dim: usize,
    pub subspaces: usize,
    /// Anchors per subspace when a codebook is trained.
    pub anchors: usize,
    /// Growth bound for incremental updates; `None` means `4 * anchors`.
    pub k_max: Option<usize>,
    pub seed: u64,
    pub embedder: EmbedderConfig,
    /// Candidates fetched per requested result before ranking.
    pub overfetch: usize,
    pub min_candidates: usize,
    pub continual: ContinualConfig,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            dim: 64,
            subspaces: 8,
            anchors: 16,
            k_max: None,
            seed: 0,
            embedder: EmbedderConfig::default(),
            overfetch: 4,
            min_candidates: 50,
            continual: ContinualConfig::default(),
        }
    }
}

impl RegistryConfig {
    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(K_MAX_FACTOR * self.anchors)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.subspaces == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.subspaces) {
            return Err(RegistryError::ConfigMismatch(format!(
                "dim {} is not divisible into {} subspaces",
                self.dim, self.subspaces
            )));
        }
        if self.anchors == 0 || self.overfetch == 0 {
            return Err(RegistryError::ConfigMismatch("anchors and overfetch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Register,
    Update,
    Deregister,
    Endorse,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub agent_id: String,
    /// Profile document for register/update, `{"score": s}` for endorse,
    /// `null` for deregister.
    pub payload: serde_json::Value,
    /// UTC milliseconds.
    pub ts: u64,
}

/// What a registration hands back to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub agent_id: String,
    pub code: AgentCode,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct RegistryState {
    config: RegistryConfig,
    codebook: Option<Arc<Codebook>>,
    index: AgentIndex,
    adapter: Arc<QueryAdapter>,
    last_seq: u64,
    last_ts: u64,
}

fn endorsement_score(payload: &serde_json::Value) -> Result<f64, RegistryError> {
    let score = payload
        .get("score")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| RegistryError::InvalidEvent("endorsement needs a numeric score".into()))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(RegistryError::OutOfRangeValue {
            field: "score",
            reason: format!("{score} is outside [0, 1]"),
        });
    }
    Ok(score)
}

impl RegistryState {
    pub fn new(config: RegistryConfig) -> Self {
        RegistryState {
            adapter: Arc::new(QueryAdapter::identity(config.dim)),
            config,
            codebook: None,
            index: AgentIndex::new(),
            last_seq: 0,
            last_ts: 0,
        }
    }

    /// Starts from a pre-trained codebook instead of bootstrapping one from
    /// the first registration.
    pub fn with_codebook(config: RegistryConfig, codebook: Codebook) -> Self {
        let mut s = Self::new(config);
        s.codebook = Some(Arc::new(codebook));
        s
    }

    pub(crate) fn from_parts(
        config: RegistryConfig,
        codebook: Option<Codebook>,
        index: AgentIndex,
        adapter: QueryAdapter,
        last_seq: u64,
        last_ts: u64,
    ) -> Self {
        RegistryState {
            config,
            codebook: codebook.map(Arc::new),
            index,
            adapter: Arc::new(adapter),
            last_seq,
            last_ts,
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_deref()
    }

    pub fn index(&self) -> &AgentIndex {
        &self.index
    }

    pub fn adapter(&self) -> &QueryAdapter {
        &self.adapter
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn last_ts(&self) -> u64 {
        self.last_ts
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn with_adapter(&self, adapter: QueryAdapter) -> Result<RegistryState, RegistryError> {
        if adapter.dim() != self.config.dim {
            return Err(RegistryError::ConfigMismatch(format!(
                "adapter dimension {} != registry dimension {}",
                adapter.dim(),
                self.config.dim
            )));
        }
        let mut next = self.clone();
        next.adapter = Arc::new(adapter);
        Ok(next)
    }

    fn next_event(&self, kind: EventKind, agent_id: &str, payload: serde_json::Value, now_ms: u64) -> RegistryEvent {
        RegistryEvent {
            seq: self.last_seq + 1,
            kind,
            agent_id: agent_id.to_string(),
            payload,
            ts: now_ms.max(self.last_ts),
        }
    }

    pub fn embed_profile(&self, embedder: &Embedder, p: &AgentProfile) -> Result<EmbeddingVector, RegistryError> {
        let v = embedder.embed_text(canonical_text(p).as_str())?;
        if v.dim() != self.config.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.config.dim,
                got: v.dim(),
            }
            .into());
        }
        Ok(v)
    }

    /// Folds `v` into the codebook (bootstrapping one if needed) and codes it.
    fn encode(&self, v: &[f64]) -> Result<(Arc<Codebook>, AgentCode), RegistryError> {
        let current = match &self.codebook {
            Some(cb) => cb.clone(),
            None => {
                let mut cb = train_codebook(&[v], self.config.subspaces, 1, self.config.seed)?;
                cb.set_k_max(self.config.k_max());
                Arc::new(cb)
            }
        };
        let (updated, report) = current.incremental_update(&[v], self.config.k_max())?;
        let cb = if report.appended_count() > 0 { Arc::new(updated) } else { current };
        let (code, _) = cb.assign_code(v)?;
        Ok((cb, code))
    }

    /// Applies one event. Live operations and replay both go through here.
    pub fn apply(&self, embedder: &Embedder, event: &RegistryEvent) -> Result<RegistryState, RegistryError> {
        if event.seq != self.last_seq + 1 {
            return Err(RegistryError::InvalidEvent(format!(
                "expected seq {}, got {}",
                self.last_seq + 1,
                event.seq
            )));
        }
        let mut next = self.clone();
        match event.kind {
            EventKind::Register | EventKind::Update => {
                let profile = profile_from_value(event.payload.clone())?;
                if profile.agent_id != event.agent_id {
                    return Err(RegistryError::InvalidEvent("payload agent_id differs from event".into()));
                }
                let existing = self.index.get(&event.agent_id);
                match (event.kind, existing) {
                    (EventKind::Register, Some(_)) => return Err(RegistryError::DuplicateId(event.agent_id.clone())),
                    (EventKind::Update, None) => return Err(RegistryError::UnknownId(event.agent_id.clone())),
                    _ => {}
                }
                let v = self.embed_profile(embedder, &profile)?;
                let (cb, code) = self.encode(v.values())?;
                let entry = IndexEntry {
                    agent_id: profile.agent_id.clone(),
                    code,
                    profile,
                    registered_seq: existing.map_or(event.seq, |e| e.registered_seq),
                };
                if existing.is_some() {
                    next.index.replace_entry(entry)?;
                } else {
                    next.index.insert_entry(entry)?;
                }
                next.codebook = Some(cb);
            }
            EventKind::Deregister => {
                next.index.remove_entry(&event.agent_id)?;
            }
            EventKind::Endorse => {
                let score = endorsement_score(&event.payload)?;
                next.index.update_profile(&event.agent_id, |p| {
                    p.credibility = ENDORSEMENT_RETAIN * p.credibility + (1.0 - ENDORSEMENT_RETAIN) * score;
                })?;
            }
        }
        next.last_seq = event.seq;
        next.last_ts = event.ts.max(self.last_ts);
        Ok(next)
    }

    /// Validates, embeds, codes and indexes a new agent.
    pub fn register_agent(
        &self,
        embedder: &Embedder,
        doc: &[u8],
        now_ms: u64,
    ) -> Result<(RegistryState, RegistryEvent, Registration), RegistryError> {
        let profile = profile_from_document(doc)?;
        if self.index.contains(&profile.agent_id) {
            return Err(RegistryError::DuplicateId(profile.agent_id));
        }
        let event = self.next_event(EventKind::Register, &profile.agent_id, profile_to_value(&profile), now_ms);
        let next = self.apply(embedder, &event)?;
        let code = next.index.get(&profile.agent_id).expect("just inserted").code.clone();
        let reg = Registration {
            agent_id: profile.agent_id,
            code,
            seq: event.seq,
        };
        Ok((next, event, reg))
    }

    /// Re-runs the embedding pipeline for an existing agent. The document's
    /// `agent_id`, when present, must match `agent_id`.
    pub fn update_agent(
        &self,
        embedder: &Embedder,
        agent_id: &str,
        doc: &[u8],
        now_ms: u64,
    ) -> Result<(RegistryState, RegistryEvent), RegistryError> {
        let mut value: serde_json::Value =
            serde_json::from_slice(doc).map_err(|e| ProfileError::Parse(e.to_string()))?;
        let existing = self
            .index
            .get(agent_id)
            .ok_or_else(|| RegistryError::UnknownId(agent_id.to_string()))?;
        if let Some(obj) = value.as_object_mut() {
            // Endorsement history survives an update unless overridden.
            obj.entry("credibility").or_insert(existing.profile.credibility.into());
            match obj.get("agent_id").and_then(|v| v.as_str()) {
                Some(id) if id != agent_id => {
                    return Err(RegistryError::InvalidEvent(format!(
                        "document agent_id `{id}` does not match `{agent_id}`"
                    )))
                }
                Some(_) => {}
                None => {
                    obj.insert("agent_id".into(), agent_id.into());
                }
            }
        }
        let profile = profile_from_value(value)?;
        let event = self.next_event(EventKind::Update, agent_id, profile_to_value(&profile), now_ms);
        Ok((self.apply(embedder, &event)?, event))
    }

    pub fn deregister_agent(
        &self,
        embedder: &Embedder,
        agent_id: &str,
        now_ms: u64,
    ) -> Result<(RegistryState, RegistryEvent), RegistryError> {
        if !self.index.contains(agent_id) {
            return Err(RegistryError::UnknownId(agent_id.to_string()));
        }
        let event = self.next_event(EventKind::Deregister, agent_id, serde_json::Value::Null, now_ms);
        Ok((self.apply(embedder, &event)?, event))
    }

    /// `credibility ← 0.9 · credibility + 0.1 · score`.
    pub fn record_endorsement(
        &self,
        embedder: &Embedder,
        agent_id: &str,
        score: f64,
        now_ms: u64,
    ) -> Result<(RegistryState, RegistryEvent), RegistryError> {
        if !self.index.contains(agent_id) {
            return Err(RegistryError::UnknownId(agent_id.to_string()));
        }
        let payload = serde_json::json!({ "score": score });
        endorsement_score(&payload)?;
        let event = self.next_event(EventKind::Endorse, agent_id, payload, now_ms);
        Ok((self.apply(embedder, &event)?, event))
    }

    /// Embeds and adapts the task text, scans `max(top_k · overfetch,
    /// min_candidates)` candidates and ranks them.
    pub fn query(&self, embedder: &Embedder, spec: &QuerySpec) -> Result<Vec<RankedResult>, RegistryError> {
        spec.validate()?;
        let Some(cb) = self.codebook.as_deref() else {
            return Ok(Vec::new());
        };
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let q = embedder.embed_text(&canonical_query(&spec.task_text))?;
        self.query_vector(cb, q.values(), spec)
    }

    /// Same as [`query`](Self::query) for an already-embedded task.
    pub fn query_embedded(&self, q: &[f64], spec: &QuerySpec) -> Result<Vec<RankedResult>, RegistryError> {
        spec.validate()?;
        match self.codebook.as_deref() {
            Some(cb) if !self.index.is_empty() => self.query_vector(cb, q, spec),
            _ => Ok(Vec::new()),
        }
    }

    fn query_vector(&self, cb: &Codebook, q: &[f64], spec: &QuerySpec) -> Result<Vec<RankedResult>, RegistryError> {
        if q.len() != self.config.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.config.dim,
                got: q.len(),
            }
            .into());
        }
        let adapted = self
            .adapter
            .adapt_query(q)
            .map_err(|e| RegistryError::InvalidEvent(format!("adapter: {e}")))?;
        let n = (spec.top_k * self.config.overfetch).max(self.config.min_candidates);
        let candidates = search(&self.index, cb, &adapted, n)?;
        Ok(rank(&candidates, |id| self.index.get(id).map(|e| &e.profile), spec))
    }
}

#[cfg(test)]
mod tests;
