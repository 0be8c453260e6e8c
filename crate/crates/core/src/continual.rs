//! Continual adaptation of the query side of retrieval.
//!
//! A [`QueryAdapter`] applies `q' = normalize(A q + b)` before the ADC scan.
//! It is trained with a softmax contrastive loss whose classes are agent
//! reconstructions: the query's target is the positive, other agents in the
//! batch are negatives. Two mechanisms keep older agents retrievable while
//! the population drifts:
//!
//! * a bounded [`ReplayBuffer`] of past `(query, target)` records, of which
//!   the ones nearest to each new query are mixed into every round, and
//! * a per-parameter [`ImportanceVector`] of accumulated squared gradients
//!   that damps updates: `θ ← θ − η g / (1 + λ Ω)`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::embed::{cosine, dot, l2_norm};

const MAGIC: &[u8; 4] = b"AGAD";
const FORMAT_VERSION: u32 = 1;
const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinualError {
    #[error("adapted query has near-zero norm")]
    DegenerateOutput,
    #[error("training sample {0} has no negatives")]
    NoNegatives(usize),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training samples")]
    EmptyBatch,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    pub learning_rate: f64,
    pub temperature: f64,
    /// Nearest buffer entries replayed per new sample.
    pub replay_m: usize,
    /// λ in the damping rule.
    pub damping: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Passes over the round's batch.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig {
            learning_rate: 1e-2,
            temperature: 0.1,
            replay_m: 4,
            damping: 1.0,
            buffer_capacity: 512,
            batch_size: 32,
            epochs: 1,
            seed: 0,
        }
    }
}

/// Flat parameter-shaped storage: `a` is row-major `D x D`, `b` has length `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(dim: usize) -> Self {
        ParamTensor {
            a: vec![0.0; dim * dim],
            b: vec![0.0; dim],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.a.iter().chain(&self.b)
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.a.iter_mut().chain(self.b.iter_mut())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn add_scaled(&mut self, other: &ParamTensor, scale: f64) {
        for (x, y) in self.iter_mut().zip(other.iter()) {
            *x += scale * y;
        }
    }
}

pub type Gradients = ParamTensor;

/// Per-parameter protection weights. Never negative, only ever grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector(ParamTensor);

impl ImportanceVector {
    pub fn zeros(dim: usize) -> Self {
        ImportanceVector(ParamTensor::zeros(dim))
    }

    /// Fails if any weight is negative or non-finite.
    pub fn from_tensor(t: ParamTensor) -> Option<Self> {
        let valid = t.iter().all(|x| x.is_finite() && *x >= 0.0);
        valid.then_some(ImportanceVector(t))
    }

    pub fn tensor(&self) -> &ParamTensor {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAdapter {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    version: u64,
}

impl QueryAdapter {
    pub fn identity(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        (0..dim).for_each(|i| a[i * dim + i] = 1.0);
        QueryAdapter {
            dim,
            a,
            b: vec![0.0; dim],
            version: 0,
        }
    }

    pub fn from_parts(dim: usize, a: Vec<f64>, b: Vec<f64>, version: u64) -> Result<Self, ContinualError> {
        if a.len() != dim * dim || b.len() != dim {
            return Err(ContinualError::DimensionMismatch {
                expected: dim,
                got: b.len(),
            });
        }
        Ok(QueryAdapter { dim, a, b, version })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn params(&self) -> ParamTensor {
        ParamTensor {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.b.iter().all(|&x| x == 0.0)
            && self
                .a
                .iter()
                .enumerate()
                .all(|(i, &x)| x == if i / self.dim == i % self.dim { 1.0 } else { 0.0 })
    }

    fn affine(&self, q: &[f64]) -> Vec<f64> {
        self.a
            .chunks_exact(self.dim)
            .zip(&self.b)
            .map(|(row, bias)| dot(row, q) + bias)
            .collect()
    }

    /// `normalize(A q + b)`. An identity adapter returns `q` untouched.
    pub fn adapt_query(&self, q: &[f64]) -> Result<Vec<f64>, ContinualError> {
        if q.len() != self.dim {
            return Err(ContinualError::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if self.is_identity() {
            return Ok(q.to_vec());
        }
        let z = self.affine(q);
        let n = l2_norm(&z);
        if n < DEGENERATE_NORM {
            return Err(ContinualError::DegenerateOutput);
        }
        Ok(z.into_iter().map(|x| x / n).collect())
    }

    /// `θ ← θ − η g / (1 + λ Ω)` elementwise. A zero importance leaves the
    /// plain gradient step, even for infinite λ.
    pub fn apply_update(&mut self, grad: &Gradients, importance: &ImportanceVector, lr: f64, damping: f64) {
        let omega = importance.tensor();
        let params = self.a.iter_mut().chain(self.b.iter_mut());
        for ((p, g), w) in params.zip(grad.iter()).zip(omega.iter()) {
            let scale = if *w == 0.0 { 1.0 } else { 1.0 + damping * w };
            *p -= lr * g / scale;
        }
    }

    /// Binary snapshot: `{D, version, cfg}` header, row-major `A`, then `b`.
    pub fn to_bytes(&self, cfg: &ContinualConfig) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, FORMAT_VERSION);
        w.u32(self.dim as u32);
        w.u64(self.version);
        w.bytes(&serde_json::to_vec(cfg).expect("config serializes"));
        w.f64s(&self.a);
        w.f64s(&self.b);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<(QueryAdapter, ContinualConfig), ContinualError> {
        let mut r = Reader::open(data, MAGIC, FORMAT_VERSION)?;
        let dim = r.u32()? as usize;
        let version = r.u64()?;
        let cfg: ContinualConfig = serde_json::from_slice(r.bytes()?)
            .map_err(|e| FormatError::Corrupt(format!("adapter config: {e}")))?;
        let a = r.f64s(dim * dim)?;
        let b = r.f64s(dim)?;
        r.finish()?;
        Ok((QueryAdapter { dim, a, b, version }, cfg))
    }
}

/// One contrastive training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Mean softmax cross-entropy over scores `⟨adapt(q), r⟩ / T` with the
/// positive as the correct class, and its exact gradient w.r.t. `A` and `b`.
pub fn loss_and_grad(
    adapter: &QueryAdapter,
    batch: &[TrainingExample],
    temperature: f64,
) -> Result<(f64, Gradients), ContinualError> {
    if batch.is_empty() {
        return Err(ContinualError::EmptyBatch);
    }
    let d = adapter.dim;
    let mut grad = ParamTensor::zeros(d);
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        if ex.negatives.is_empty() {
            return Err(ContinualError::NoNegatives(i));
        }
        if ex.query.len() != d {
            return Err(ContinualError::DimensionMismatch {
                expected: d,
                got: ex.query.len(),
            });
        }
        let z = adapter.affine(&ex.query);
        let norm = l2_norm(&z);
        if norm < DEGENERATE_NORM {
            return Err(ContinualError::DegenerateOutput);
        }
        let u: Vec<f64> = z.iter().map(|x| x / norm).collect();

        let classes: Vec<&[f64]> = std::iter::once(ex.positive.as_slice())
            .chain(ex.negatives.iter().map(Vec::as_slice))
            .collect();
        let scores: Vec<f64> = classes.iter().map(|r| dot(&u, r) / temperature).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += max + sum.ln() - scores[0];

        // dL/du = Σ_j (p_j − y_j) r_j / T
        let mut g_u = vec![0.0; d];
        for (j, (r, e)) in classes.iter().zip(&exps).enumerate() {
            let coeff = (e / sum - if j == 0 { 1.0 } else { 0.0 }) / temperature;
            for (g, x) in g_u.iter_mut().zip(r.iter()) {
                *g += coeff * x;
            }
        }
        // Through the normalization: dL/dz = (I − u uᵀ) dL/du / |z|
        let proj = dot(&u, &g_u);
        let g_z: Vec<f64> = g_u.iter().zip(&u).map(|(g, ui)| (g - ui * proj) / norm).collect();
        for (row, gz) in g_z.iter().enumerate() {
            for (col, q) in ex.query.iter().enumerate() {
                grad.a[row * d + col] += gz * q;
            }
            grad.b[row] += gz;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// `Ω' = Ω + mean over examples of the elementwise squared per-example gradient`.
/// Examples without negatives or with a degenerate adapted query are skipped.
pub fn update_importance(
    importance: &ImportanceVector,
    adapter: &QueryAdapter,
    historical: &[TrainingExample],
    temperature: f64,
) -> ImportanceVector {
    let mut acc = ParamTensor::zeros(adapter.dim);
    let mut used = 0usize;
    for ex in historical {
        if let Ok((_, g)) = loss_and_grad(adapter, std::slice::from_ref(ex), temperature) {
            for (a, x) in acc.iter_mut().zip(g.iter()) {
                *a += x * x;
            }
            used += 1;
        }
    }
    let mut next = importance.0.clone();
    if used > 0 {
        next.add_scaled(&acc, 1.0 / used as f64);
    }
    ImportanceVector(next)
}

/// A query paired with the agent it should retrieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub query: Vec<f64>,
    pub target_id: String,
    pub target_reconstruction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub sample: TrainSample,
    pub insert_round: u64,
}

/// Bounded memory filled by reservoir sampling over every sample offered.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<ReplayEntry>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            entries: Vec::new(),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0ff),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Total samples ever offered.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn insert(&mut self, sample: TrainSample, round: u64) {
        self.seen += 1;
        let entry = ReplayEntry {
            sample,
            insert_round: round,
        };
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.entries[j as usize] = entry;
            }
        }
    }

    /// Drops entries whose target is no longer present.
    pub fn retain_targets(&mut self, keep: impl Fn(&str) -> bool) {
        self.entries.retain(|e| keep(&e.sample.target_id));
    }
}

/// For each new query, its `m` nearest buffer entries by query cosine. The
/// union is deduplicated and ordered by best similarity (descending), then
/// insertion round, then buffer position.
pub fn select_replay<Q: AsRef<[f64]>>(buffer: &ReplayBuffer, new_queries: &[Q], m: usize) -> Vec<ReplayEntry> {
    if m == 0 || buffer.is_empty() {
        return Vec::new();
    }
    let mut best: Vec<Option<f64>> = vec![None; buffer.len()];
    let mut sims: Vec<(f64, u64, usize)> = Vec::with_capacity(buffer.len());
    for q in new_queries {
        sims.clear();
        sims.extend(
            buffer
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| (cosine(q.as_ref(), &e.sample.query), e.insert_round, i)),
        );
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        let take = m.min(sims.len());
        if take < sims.len() {
            sims.select_nth_unstable_by(take - 1, order);
        }
        for &(s, _, i) in &sims[..take] {
            best[i] = Some(best[i].map_or(s, |b: f64| b.max(s)));
        }
    }
    let mut chosen: Vec<(f64, u64, usize)> = best
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (s, buffer.entries[i].insert_round, i)))
        .collect();
    chosen.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    chosen.into_iter().map(|(_, _, i)| buffer.entries[i].clone()).collect()
}

/// Builds contrastive examples from a mini-batch: every other distinct
/// target in the batch is a negative. Samples left without negatives are dropped.
pub fn in_batch_examples(samples: &[&TrainSample]) -> Vec<TrainingExample> {
    samples
        .iter()
        .filter_map(|s| {
            let mut seen: Vec<&str> = Vec::new();
            let negatives: Vec<Vec<f64>> = samples
                .iter()
                .filter(|o| o.target_id != s.target_id)
                .filter(|o| {
                    if seen.contains(&o.target_id.as_str()) {
                        false
                    } else {
                        seen.push(&o.target_id);
                        true
                    }
                })
                .map(|o| o.target_reconstruction.clone())
                .collect();
            (!negatives.is_empty()).then(|| TrainingExample {
                query: s.query.clone(),
                positive: s.target_reconstruction.clone(),
                negatives,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub new_samples: usize,
    pub replayed: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub adapter_version: u64,
}

/// Adapter, importance and replay buffer evolving together across rounds.
#[derive(Debug, Clone)]
pub struct ContinualLearner {
    pub config: ContinualConfig,
    adapter: QueryAdapter,
    importance: ImportanceVector,
    buffer: ReplayBuffer,
    round: u64,
}

impl ContinualLearner {
    pub fn new(dim: usize, config: ContinualConfig) -> Self {
        ContinualLearner {
            adapter: QueryAdapter::identity(dim),
            importance: ImportanceVector::zeros(dim),
            buffer: ReplayBuffer::new(config.buffer_capacity, config.seed),
            round: 0,
            config,
        }
    }

    pub fn adapter(&self) -> &QueryAdapter {
        &self.adapter
    }

    pub fn importance(&self) -> &ImportanceVector {
        &self.importance
    }

    pub fn set_importance(&mut self, importance: ImportanceVector) {
        self.importance = importance;
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffer
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn batches(&self, pool: &[TrainSample], rng: &mut ChaCha8Rng) -> Vec<Vec<TrainingExample>> {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        order
            .chunks(self.config.batch_size.max(2))
            .map(|chunk| {
                let samples: Vec<&TrainSample> = chunk.iter().map(|&i| &pool[i]).collect();
                in_batch_examples(&samples)
            })
            .filter(|b| !b.is_empty())
            .collect()
    }

    fn mean_loss(&self, batches: &[Vec<TrainingExample>]) -> Result<f64, ContinualError> {
        if batches.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for b in batches {
            sum += loss_and_grad(&self.adapter, b, self.config.temperature)?.0;
        }
        Ok(sum / batches.len() as f64)
    }

    /// One training round: replay selection, damped descent over the mixed
    /// batch, importance accumulation, then reservoir insertion of the new
    /// samples.
    pub fn train_round(&mut self, new_samples: &[TrainSample]) -> Result<RoundReport, ContinualError> {
        if new_samples.is_empty() {
            return Err(ContinualError::EmptyBatch);
        }
        let queries: Vec<&[f64]> = new_samples.iter().map(|s| s.query.as_slice()).collect();
        let replay = select_replay(&self.buffer, &queries, self.config.replay_m);
        let mut pool: Vec<TrainSample> = new_samples.to_vec();
        pool.extend(replay.iter().map(|e| e.sample.clone()));

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.round.wrapping_mul(0x2545_f491_4f6c_dd1d));
        let mut batches = self.batches(&pool, &mut rng);
        let loss_before = self.mean_loss(&batches)?;
        let cfg = self.config.clone();
        for epoch in 0..cfg.epochs.max(1) {
            if epoch > 0 {
                batches = self.batches(&pool, &mut rng);
            }
            for b in &batches {
                let (_, g) = loss_and_grad(&self.adapter, b, cfg.temperature)?;
                self.adapter.apply_update(&g, &self.importance, cfg.learning_rate, cfg.damping);
            }
        }
        let loss_after = self.mean_loss(&batches)?;
        let historical: Vec<TrainingExample> = batches.into_iter().flatten().collect();
        self.importance = update_importance(&self.importance, &self.adapter, &historical, cfg.temperature);

        for s in new_samples {
            self.buffer.insert(s.clone(), self.round);
        }
        self.adapter.version += 1;
        let report = RoundReport {
            round: self.round,
            new_samples: new_samples.len(),
            replayed: replay.len(),
            loss_before,
            loss_after,
            adapter_version: self.adapter.version,
        };
        self.round += 1;
        Ok(report)
    }
}

/// Appends one JSON line per round report.
pub fn append_training_log(path: &Path, report: &RoundReport) -> Result<(), ContinualError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ContinualError::Io(e.to_string()))?;
    let line = serde_json::to_string(report).expect("report serializes");
    writeln!(f, "{line}").map_err(|e| ContinualError::Io(e.to_string()))
}
