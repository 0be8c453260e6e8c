use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::{flat_dense_search, Bm25Index};
use super::corpus::{generate_corpus, generate_training_queries, CapabilityTaxonomy, LabeledQuery};
use super::metrics::{compute_metrics, MetricsReport};
use super::BenchError;
use crate::codebook::train_codebook;
use crate::continual::{ContinualConfig, ContinualLearner, RoundReport, TrainSample};
use crate::embed::{Embedder, EmbedderConfig, EmbeddingVector};
use crate::index::{QuerySpec, RankWeights};
use crate::profile::{canonical_query, canonical_text, profile_to_document, AgentProfile};
use crate::registry::{Registry, RegistryConfig};

/// Reference operating points reported alongside results. They are targets
/// to compare against, not thresholds.
pub const REFERENCE_POINTS: [(&str, f64); 4] = [
    ("ours_recall5", 0.76),
    ("n4000_top1_ours", 0.58),
    ("n4000_top1_bm25", 0.35),
    ("n4000_top1_dense", 0.36),
];

const EVAL_TOP_K: usize = 10;

/// Hash dimension for benchmark runs. At 64 buckets collisions swamp the
/// shared head words, so every method sits near chance.
pub const BENCH_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    Bm25,
    Dense,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Bm25 => "bm25",
            Method::Dense => "dense",
        }
    }
}

/// Settings of the quantized, adapted retrieval pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub subspaces: usize,
    pub anchors: usize,
    /// Training queries generated per agent; split evenly across rounds.
    pub train_queries_per_agent: f64,
    /// Adapter training rounds. Zero keeps the identity adapter.
    pub training_rounds: usize,
    pub continual: ContinualConfig,
    pub weights: RankWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            subspaces: 32,
            anchors: 16,
            train_queries_per_agent: 1.0,
            training_rounds: 5,
            continual: ContinualConfig {
                epochs: 20,
                ..ContinualConfig::default()
            },
            weights: RankWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub n_agents: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Taxonomy file; the bundled taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    pub queries_per_agent: f64,
    pub embedder: EmbedderConfig,
    pub pipeline: PipelineConfig,
    /// When false `wall_ms` is written as 0 so repeated runs are identical.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Ours, Method::Bm25, Method::Dense],
            n_agents: vec![500, 1000, 2000, 4000],
            seeds: vec![0, 1, 2, 3, 4],
            taxonomy: None,
            queries_per_agent: 0.25,
            embedder: EmbedderConfig::hash(BENCH_DIM),
            pipeline: PipelineConfig::default(),
            record_wall_time: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load_taxonomy(&self) -> Result<CapabilityTaxonomy, BenchError> {
        match &self.taxonomy {
            Some(p) => CapabilityTaxonomy::from_file(p),
            None => Ok(CapabilityTaxonomy::default_taxonomy()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub wall_ms: u64,
}

fn ids_only(ranked: Vec<(String, f64)>) -> Vec<String> {
    ranked.into_iter().map(|(id, _)| id).collect()
}

fn embed_all<S: AsRef<str>>(embedder: &Embedder, texts: &[S]) -> Result<Vec<EmbeddingVector>, BenchError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    Ok(embedder.embed_batch(texts)?)
}

/// The full pipeline: registry over a trained codebook plus a continually
/// trained query adapter.
pub(crate) struct OursPipeline {
    pub registry: Registry,
    pub learner: ContinualLearner,
    top_k: usize,
    weights: RankWeights,
}

impl OursPipeline {
    /// Trains the codebook on `agents` and registers them.
    pub fn build(
        agents: &[AgentProfile],
        embedder_cfg: &EmbedderConfig,
        cfg: &PipelineConfig,
        seed: u64,
    ) -> Result<Self, BenchError> {
        let embedder = Embedder::from_config(embedder_cfg)?;
        let texts: Vec<String> = agents.iter().map(|a| canonical_text(a).into_string()).collect();
        let vectors = embed_all(&embedder, &texts)?;
        let dim = vectors
            .first()
            .map(EmbeddingVector::dim)
            .ok_or_else(|| BenchError::InvalidConfig("pipeline needs at least one agent".into()))?;
        let refs: Vec<&[f64]> = vectors.iter().map(EmbeddingVector::values).collect();
        let codebook = train_codebook(&refs, cfg.subspaces, cfg.anchors.min(refs.len()), seed)?;
        let reg_cfg = RegistryConfig {
            dim,
            subspaces: cfg.subspaces,
            anchors: cfg.anchors,
            seed,
            embedder: embedder_cfg.clone(),
            continual: cfg.continual.clone(),
            ..RegistryConfig::default()
        };
        let registry = Registry::in_memory_with_codebook(reg_cfg, codebook)?;
        let mut continual = cfg.continual.clone();
        continual.seed = seed;
        let pipeline = OursPipeline {
            registry,
            learner: ContinualLearner::new(dim, continual),
            top_k: EVAL_TOP_K,
            weights: cfg.weights,
        };
        pipeline.register(agents)?;
        Ok(pipeline)
    }

    pub fn register(&self, agents: &[AgentProfile]) -> Result<(), BenchError> {
        for a in agents {
            self.registry.register_agent(&profile_to_document(a))?;
        }
        Ok(())
    }

    pub fn deregister(&self, ids: &[String]) -> Result<(), BenchError> {
        for id in ids {
            self.registry.deregister_agent(id)?;
        }
        Ok(())
    }

    /// Query embeddings paired with the current reconstruction of their
    /// targets. Queries whose target is not registered are skipped.
    pub fn samples(&self, queries: &[LabeledQuery]) -> Result<Vec<TrainSample>, BenchError> {
        let state = self.registry.state();
        let Some(cb) = state.codebook() else {
            return Ok(Vec::new());
        };
        let live: Vec<&LabeledQuery> = queries.iter().filter(|q| state.index().contains(&q.target_id)).collect();
        let texts: Vec<String> = live.iter().map(|q| canonical_query(&q.task_text)).collect();
        let vectors = embed_all(self.registry.embedder(), &texts)?;
        live.iter()
            .zip(vectors)
            .map(|(q, v)| {
                let entry = state.index().get(&q.target_id).expect("filtered above");
                Ok(TrainSample {
                    query: v.into_values(),
                    target_id: q.target_id.clone(),
                    target_reconstruction: cb.reconstruct(&entry.code)?,
                })
            })
            .collect()
    }

    /// Splits `queries` into `rounds` chunks and runs one training round per
    /// chunk, then publishes the adapter.
    pub fn train(&mut self, queries: &[LabeledQuery], rounds: usize) -> Result<Vec<RoundReport>, BenchError> {
        if rounds == 0 || queries.is_empty() {
            return Ok(Vec::new());
        }
        let samples = self.samples(queries)?;
        let chunk = samples.len().div_ceil(rounds).max(1);
        let mut reports = Vec::new();
        for part in samples.chunks(chunk) {
            reports.push(self.learner.train_round(part)?);
        }
        self.registry.set_adapter(self.learner.adapter().clone())?;
        Ok(reports)
    }

    pub fn rank(&self, queries: &[LabeledQuery]) -> Result<Vec<Vec<String>>, BenchError> {
        let state = self.registry.state();
        queries
            .iter()
            .map(|q| {
                let spec = QuerySpec::new(q.task_text.clone(), self.top_k).with_weights(self.weights);
                Ok(state
                    .query(self.registry.embedder(), &spec)?
                    .into_iter()
                    .map(|r| r.agent_id)
                    .collect())
            })
            .collect()
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    taxonomy: &CapabilityTaxonomy,
    method: Method,
    n_agents: usize,
    seed: u64,
) -> Result<ExperimentRow, BenchError> {
    let corpus = generate_corpus(taxonomy, n_agents, cfg.queries_per_agent, seed)?;
    let start = Instant::now();
    let rankings: Vec<Vec<String>> = match method {
        Method::Ours => {
            let mut ours = OursPipeline::build(&corpus.agents, &cfg.embedder, &cfg.pipeline, seed)?;
            let n_train = (n_agents as f64 * cfg.pipeline.train_queries_per_agent).ceil() as usize;
            let train = generate_training_queries(taxonomy, &corpus.agents, &corpus.agent_categories, n_train, seed);
            ours.train(&train, cfg.pipeline.training_rounds)?;
            ours.rank(&corpus.queries)?
        }
        Method::Bm25 => {
            let docs: Vec<(String, String)> = corpus
                .agents
                .iter()
                .map(|a| (a.agent_id.clone(), canonical_text(a).into_string()))
                .collect();
            let index = Bm25Index::new(&docs);
            corpus
                .queries
                .iter()
                .map(|q| ids_only(index.search(&q.task_text, EVAL_TOP_K)))
                .collect()
        }
        Method::Dense => {
            let embedder = Embedder::from_config(&cfg.embedder)?;
            let ids: Vec<String> = corpus.agents.iter().map(|a| a.agent_id.clone()).collect();
            let texts: Vec<String> = corpus.agents.iter().map(|a| canonical_text(a).into_string()).collect();
            let embs: Vec<Vec<f64>> = embed_all(&embedder, &texts)?.into_iter().map(|v| v.into_values()).collect();
            let qtexts: Vec<String> = corpus.queries.iter().map(|q| canonical_query(&q.task_text)).collect();
            embed_all(&embedder, &qtexts)?
                .iter()
                .map(|q| Ok(ids_only(flat_dense_search(&ids, &embs, q.values(), EVAL_TOP_K)?)))
                .collect::<Result<_, BenchError>>()?
        }
    };
    let wall_ms = if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
    let metrics = compute_metrics(method.as_str(), n_agents, &rankings, &corpus.queries)?;
    Ok(ExperimentRow { seed, metrics, wall_ms })
}

/// Every `(method, n_agents, seed)` combination, in that nesting order.
/// Combinations run on separate threads; output order does not depend on
/// scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>, BenchError> {
    let taxonomy = cfg.load_taxonomy()?;
    if cfg.methods.is_empty() || cfg.n_agents.is_empty() || cfg.seeds.is_empty() {
        return Err(BenchError::InvalidConfig("methods, n_agents and seeds must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for &m in &cfg.methods {
        for &n in &cfg.n_agents {
            for &s in &cfg.seeds {
                jobs.push((m, n, s));
            }
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<Result<ExperimentRow, BenchError>>> = (0..jobs.len()).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&(m, n, s)) = jobs.get(i) else { break };
                let r = run_one(cfg, &taxonomy, m, n, s);
                slots.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// CSV with `#` metadata lines followed by
/// `method,n_agents,seed,top1,mrr10,ndcg10,recall5,wall_ms`.
pub fn write_experiment_csv(rows: &[ExperimentRow], mut out: impl Write) -> std::io::Result<()> {
    let refs: Vec<String> = REFERENCE_POINTS.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "# reference_points: {}", refs.join(" "))?;
    writeln!(out, "# reference points are comparison targets, not pass/fail thresholds")?;
    writeln!(out, "method,n_agents,seed,top1,mrr10,ndcg10,recall5,wall_ms")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            m.method, m.n_agents, r.seed, m.top1_accuracy, m.mrr_at_10, m.ndcg_at_10, m.recall_at_5, r.wall_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus::Category;

    fn disjoint_taxonomy() -> CapabilityTaxonomy {
        let words = [
            "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
        ];
        CapabilityTaxonomy {
            categories: words
                .iter()
                .map(|w| Category {
                    name: w.to_string(),
                    phrases: (0..4).map(|i| format!("{w} {w}ing {w}{i}")).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn csv_is_deterministic_and_well_formed() {
        let cfg = ExperimentConfig {
            n_agents: vec![40],
            seeds: vec![1, 2],
            record_wall_time: false,
            pipeline: PipelineConfig {
                subspaces: 4,
                anchors: 4,
                training_rounds: 2,
                ..PipelineConfig::default()
            },
            embedder: EmbedderConfig::hash(32),
            ..ExperimentConfig::default()
        };
        let write = |rows: &[ExperimentRow]| {
            let mut buf = Vec::new();
            write_experiment_csv(rows, &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = write(&run_experiment(&cfg).unwrap());
        let b = write(&run_experiment(&cfg).unwrap());
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert!(lines[0].starts_with("# reference_points: ours_recall5=0.76"));
        assert_eq!(lines[2], "method,n_agents,seed,top1,mrr10,ndcg10,recall5,wall_ms");
        assert_eq!(lines.len(), 3 + 3 * 2);
        assert!(lines[3].starts_with("ours,40,1,"));
    }

    #[test]
    fn separable_corpus_is_solved_by_every_method() {
        // Each agent sits in a category nobody else uses, and every phrase of
        // a category shares two words, so any sound method finds it.
        let t = disjoint_taxonomy();
        let agents: Vec<AgentProfile> = (0..10)
            .map(|i| AgentProfile {
                agent_id: format!("agent-{i:02}"),
                skills: vec![t.categories[i].phrases[0].clone()],
                roles: vec!["worker".into()],
                constraints: Default::default(),
                credibility: 0.5,
                availability: Default::default(),
            })
            .collect();
        let queries: Vec<LabeledQuery> = (0..10)
            .map(|i| LabeledQuery {
                task_text: format!("find an agent for {}", t.categories[i].phrases[1]),
                target_id: agents[i].agent_id.clone(),
                relevance: [(agents[i].agent_id.clone(), 1.0)].into_iter().collect(),
            })
            .collect();
        // Wide enough that hash collisions cannot outweigh the shared head word.
        let embedder_cfg = EmbedderConfig::hash(1024);
        let pipeline = PipelineConfig {
            subspaces: 8,
            anchors: 16,
            training_rounds: 0,
            weights: RankWeights::semantic_only(),
            ..PipelineConfig::default()
        };
        let ours = OursPipeline::build(&agents, &embedder_cfg, &pipeline, 0).unwrap();
        let m = compute_metrics("ours", 10, &ours.rank(&queries).unwrap(), &queries).unwrap();
        assert_eq!(m.top1_accuracy, 1.0);

        let docs: Vec<(String, String)> =
            agents.iter().map(|a| (a.agent_id.clone(), canonical_text(a).into_string())).collect();
        let bm25 = Bm25Index::new(&docs);
        let r: Vec<Vec<String>> = queries.iter().map(|q| ids_only(bm25.search(&q.task_text, 10))).collect();
        assert_eq!(compute_metrics("bm25", 10, &r, &queries).unwrap().top1_accuracy, 1.0);

        let e = Embedder::from_config(&embedder_cfg).unwrap();
        let ids: Vec<String> = agents.iter().map(|a| a.agent_id.clone()).collect();
        let embs: Vec<Vec<f64>> =
            docs.iter().map(|(_, d)| e.embed_text(d).unwrap().into_values()).collect();
        let r: Vec<Vec<String>> = queries
            .iter()
            .map(|q| {
                let v = e.embed_text(&canonical_query(&q.task_text)).unwrap();
                ids_only(flat_dense_search(&ids, &embs, v.values(), 10).unwrap())
            })
            .collect();
        assert_eq!(compute_metrics("dense", 10, &r, &queries).unwrap().top1_accuracy, 1.0);
    }
}
