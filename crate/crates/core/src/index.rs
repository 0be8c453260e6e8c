//! Agent table, asymmetric-distance search and multi-criteria ranking.
//!
//! Search never quantizes the query: for every subspace it precomputes the
//! inner product of the query's sub-vector with each anchor ([`AdcTable`]),
//! after which scoring a code is `M` table lookups. The score of a code is
//! exactly the inner product of the query with the code's reconstruction.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{AgentCode, Codebook, CodebookError};
use crate::embed::{dot, l2_norm};
use crate::profile::{AgentProfile, Placement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("agent `{0}` is already registered")]
    DuplicateId(String),
    #[error("agent `{0}` is not registered")]
    UnknownId(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub agent_id: String,
    pub code: AgentCode,
    pub profile: AgentProfile,
    pub registered_seq: u64,
}

/// Id-ordered table of registered agents. Cloning is cheap: entries are shared.
#[derive(Debug, Clone, Default)]
pub struct AgentIndex {
    entries: BTreeMap<String, Arc<IndexEntry>>,
}

impl AgentIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, agent_id: &str) -> Option<&IndexEntry> {
        self.entries.get(agent_id).map(Arc::as_ref)
    }

    pub fn contains(&self, agent_id: &str) -> bool {
        self.entries.contains_key(agent_id)
    }

    /// Entries in agent-id order.
    pub fn iter(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values().map(Arc::as_ref)
    }

    pub fn insert_entry(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if self.entries.contains_key(&entry.agent_id) {
            return Err(IndexError::DuplicateId(entry.agent_id));
        }
        self.entries.insert(entry.agent_id.clone(), Arc::new(entry));
        Ok(())
    }

    pub fn remove_entry(&mut self, agent_id: &str) -> Result<IndexEntry, IndexError> {
        self.entries
            .remove(agent_id)
            .map(Arc::unwrap_or_clone)
            .ok_or_else(|| IndexError::UnknownId(agent_id.to_string()))
    }

    /// Replaces an existing entry, returning the old one.
    pub fn replace_entry(&mut self, entry: IndexEntry) -> Result<IndexEntry, IndexError> {
        match self.entries.get_mut(&entry.agent_id) {
            Some(slot) => Ok(Arc::unwrap_or_clone(std::mem::replace(slot, Arc::new(entry)))),
            None => Err(IndexError::UnknownId(entry.agent_id)),
        }
    }

    pub fn update_profile(&mut self, agent_id: &str, f: impl FnOnce(&mut AgentProfile)) -> Result<(), IndexError> {
        let slot = self
            .entries
            .get_mut(agent_id)
            .ok_or_else(|| IndexError::UnknownId(agent_id.to_string()))?;
        f(&mut Arc::make_mut(slot).profile);
        Ok(())
    }
}

/// Per-subspace lookup tables for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTable {
    /// `inner[m][j]` = ⟨q_m, anchor_{m,j}⟩.
    inner: Vec<Vec<f64>>,
    /// Squared norm of each anchor, for reconstruction norms.
    sq_norm: Vec<Vec<f64>>,
    query_norm: f64,
}

impl AdcTable {
    pub fn new(cb: &Codebook, q: &[f64]) -> Result<Self, IndexError> {
        if q.len() != cb.dim() {
            return Err(CodebookError::DimensionMismatch {
                expected: cb.dim(),
                got: q.len(),
            }
            .into());
        }
        let d = cb.sub_dim();
        let mut inner = Vec::with_capacity(cb.subspaces());
        let mut sq_norm = Vec::with_capacity(cb.subspaces());
        for (m, sub) in q.chunks_exact(d).enumerate() {
            let anchors = cb.subspace_anchors(m);
            inner.push(anchors.chunks_exact(d).map(|a| dot(sub, a)).collect());
            sq_norm.push(anchors.chunks_exact(d).map(|a| dot(a, a)).collect());
        }
        Ok(AdcTable {
            inner,
            sq_norm,
            query_norm: l2_norm(q),
        })
    }

    pub fn table(&self, subspace: usize) -> &[f64] {
        &self.inner[subspace]
    }

    pub fn query_norm(&self) -> f64 {
        self.query_norm
    }

    /// ⟨q, reconstruct(code)⟩. The code must be valid for the codebook.
    pub fn score(&self, code: &AgentCode) -> f64 {
        code.indices
            .iter()
            .zip(&self.inner)
            .map(|(&j, t)| t[j as usize])
            .sum()
    }

    pub fn reconstruction_norm(&self, code: &AgentCode) -> f64 {
        code.indices
            .iter()
            .zip(&self.sq_norm)
            .map(|(&j, t)| t[j as usize])
            .sum::<f64>()
            .sqrt()
    }
}

/// Free-function form of [`AdcTable::new`].
pub fn adc_tables(cb: &Codebook, q: &[f64]) -> Result<AdcTable, IndexError> {
    AdcTable::new(cb, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent_id: String,
    /// Raw inner product of the query with the reconstruction.
    pub sem: f64,
    pub query_norm: f64,
}

fn by_score_then_id(a: &(f64, &str), b: &(f64, &str)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Exact top-`n` entries by ADC score; ties go to the smaller agent id.
/// An empty index yields an empty list.
pub fn search(index: &AgentIndex, cb: &Codebook, q: &[f64], n: usize) -> Result<Vec<Candidate>, IndexError> {
    if n == 0 {
        return Err(IndexError::InvalidQuery("n must be at least 1".into()));
    }
    let table = AdcTable::new(cb, q)?;
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(index.len());
    for entry in index.iter() {
        cb.check_code(&entry.code)?;
        scored.push((table.score(&entry.code), entry.agent_id.as_str()));
    }
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, by_score_then_id);
        scored.truncate(n);
    }
    scored.sort_by(by_score_then_id);
    Ok(scored
        .into_iter()
        .map(|(sem, id)| Candidate {
            agent_id: id.to_string(),
            sem,
            query_norm: table.query_norm(),
        })
        .collect())
}

/// Constraints a query may require. Unset fields are not evaluated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RequiredConstraints {
    /// Agent's latency tolerance must not exceed this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    /// Capacity times `(1 - load)` must reach this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_free_memory_mb: Option<f64>,
}

impl RequiredConstraints {
    /// `(satisfied, specified)` counts for one profile.
    pub fn check(&self, p: &AgentProfile) -> (usize, usize) {
        let c = &p.constraints;
        let checks = [
            self.max_latency_ms.map(|max| c.latency_tolerance_ms <= max),
            self.placement.map(|pl| c.placement == pl),
            self.min_free_memory_mb.map(|min| c.free_memory_mb() >= min),
        ];
        checks.iter().flatten().fold((0, 0), |(ok, n), &pass| (ok + pass as usize, n + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct RankWeights {
    sem: f64,
    cred: f64,
    ctx: f64,
    avail: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    w_sem: f64,
    w_cred: f64,
    w_ctx: f64,
    w_avail: f64,
}

impl TryFrom<RawWeights> for RankWeights {
    type Error = IndexError;

    fn try_from(w: RawWeights) -> Result<Self, IndexError> {
        RankWeights::new(w.w_sem, w.w_cred, w.w_ctx, w.w_avail)
    }
}

impl From<RankWeights> for RawWeights {
    fn from(w: RankWeights) -> Self {
        RawWeights {
            w_sem: w.sem,
            w_cred: w.cred,
            w_ctx: w.ctx,
            w_avail: w.avail,
        }
    }
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights {
            sem: 0.7,
            cred: 0.1,
            ctx: 0.1,
            avail: 0.1,
        }
    }
}

impl RankWeights {
    /// Non-negative weights summing to 1 (within 1e-9).
    pub fn new(sem: f64, cred: f64, ctx: f64, avail: f64) -> Result<Self, IndexError> {
        let ws = [sem, cred, ctx, avail];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(IndexError::InvalidQuery("weights must be non-negative".into()));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IndexError::InvalidQuery(format!("weights sum to {sum}, expected 1")));
        }
        Ok(RankWeights { sem, cred, ctx, avail })
    }

    pub fn semantic_only() -> Self {
        RankWeights {
            sem: 1.0,
            cred: 0.0,
            ctx: 0.0,
            avail: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.sem, self.cred, self.ctx, self.avail]
    }
}

fn default_top_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub task_text: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub strict_constraints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<RequiredConstraints>,
    #[serde(default)]
    pub weights: RankWeights,
}

impl QuerySpec {
    pub fn new(task_text: impl Into<String>, top_k: usize) -> Self {
        QuerySpec {
            task_text: task_text.into(),
            top_k,
            strict_constraints: false,
            required: None,
            weights: RankWeights::default(),
        }
    }

    pub fn with_weights(mut self, weights: RankWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_required(mut self, required: RequiredConstraints, strict: bool) -> Self {
        self.required = Some(required);
        self.strict_constraints = strict;
        self
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.top_k == 0 {
            return Err(IndexError::InvalidQuery("top_k must be at least 1".into()));
        }
        if self.task_text.trim().is_empty() {
            return Err(IndexError::InvalidQuery("task_text is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub agent_id: String,
    pub sem_score: f64,
    pub cred_score: f64,
    pub ctx_score: f64,
    pub avail_score: f64,
    pub fused: f64,
}

/// Maps a raw ADC score into `[0, 1]`: `(1 + sem / |q|) / 2`, clamped.
/// Monotone in `sem`, so semantic-only ranking preserves search order.
pub fn semantic_score(sem: f64, query_norm: f64) -> f64 {
    if query_norm == 0.0 {
        return 0.5;
    }
    ((1.0 + sem / query_norm) / 2.0).clamp(0.0, 1.0)
}

pub fn fuse(weights: &RankWeights, scores: [f64; 4]) -> f64 {
    weights.as_array().iter().zip(scores).map(|(w, s)| w * s).sum()
}

/// Scores candidates on four criteria, fuses them and keeps the best `top_k`.
/// Candidates whose profile cannot be found are skipped.
pub fn rank<'a>(
    candidates: &[Candidate],
    profiles: impl Fn(&str) -> Option<&'a AgentProfile>,
    spec: &QuerySpec,
) -> Vec<RankedResult> {
    let mut out: Vec<RankedResult> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let Some(p) = profiles(&c.agent_id) else { continue };
        let (ok, specified) = spec.required.as_ref().map_or((0, 0), |r| r.check(p));
        if spec.strict_constraints && ok < specified {
            continue;
        }
        let scores = [
            semantic_score(c.sem, c.query_norm),
            p.credibility,
            if specified == 0 { 1.0 } else { ok as f64 / specified as f64 },
            p.availability.score(),
        ];
        out.push(RankedResult {
            agent_id: c.agent_id.clone(),
            sem_score: scores[0],
            cred_score: scores[1],
            ctx_score: scores[2],
            avail_score: scores[3],
            fused: fuse(&spec.weights, scores),
        });
    }
    out.sort_by(|a, b| b.fused.total_cmp(&a.fused).then_with(|| a.agent_id.cmp(&b.agent_id)));
    out.truncate(spec.top_k);
    out
}
