use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corpus::{generate_training_queries, stream, test_queries, AgentSampler, CapabilityTaxonomy, LabeledQuery};
use super::experiment::{OursPipeline, PipelineConfig, BENCH_DIM};
use super::metrics::compute_metrics;
use super::BenchError;
use crate::embed::EmbedderConfig;
use crate::profile::AgentProfile;

const DEPARTURE_STREAM: u64 = 0x6465_7061_7274;
const POPULATION_STREAM: u64 = 0x706f_7075_6c61;

fn top1(pipeline: &OursPipeline, queries: &[LabeledQuery]) -> Result<f64, BenchError> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let rankings = pipeline.rank(queries)?;
    Ok(compute_metrics("ours", 0, &rankings, queries)?.top1_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChurnConfig {
    /// Round 1 registers the initial cohort; later rounds apply churn.
    pub rounds: usize,
    pub initial_agents: usize,
    pub arrivals_per_round: usize,
    pub departures_per_round: usize,
    pub seeds: Vec<u64>,
    /// Training queries per newly arrived agent.
    pub train_queries_per_agent: f64,
    pub eval_queries: usize,
    /// Replay width of the replay-on arm; the other arm uses 0.
    pub replay_m: usize,
    pub taxonomy: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            rounds: 10,
            initial_agents: 200,
            arrivals_per_round: 40,
            departures_per_round: 20,
            seeds: (0..10).collect(),
            train_queries_per_agent: 2.0,
            eval_queries: 200,
            replay_m: 4,
            taxonomy: None,
            embedder: EmbedderConfig::hash(BENCH_DIM),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnRow {
    pub replay: bool,
    pub seed: u64,
    pub round: usize,
    pub n_agents: usize,
    pub population_top1: f64,
    /// Top-1 on the round-1 cohort's queries whose target is still registered.
    pub retention_top1: f64,
    pub retention_queries: usize,
}

fn churn_arm(
    cfg: &ChurnConfig,
    taxonomy: &CapabilityTaxonomy,
    seed: u64,
    replay_m: usize,
) -> Result<Vec<ChurnRow>, BenchError> {
    let sampler = AgentSampler::new(taxonomy, seed)?;
    let mut pipeline_cfg = cfg.pipeline.clone();
    pipeline_cfg.continual.replay_m = replay_m;

    let (cohort, cohort_cats) = sampler.agents(0..cfg.initial_agents as u64);
    let mut live: Vec<(AgentProfile, Vec<usize>)> = cohort.iter().cloned().zip(cohort_cats.iter().cloned()).collect();
    let mut next_id = cfg.initial_agents as u64;
    let cohort_queries = test_queries(taxonomy, &cohort, &cohort_cats, cfg.eval_queries, seed);

    let mut ours = OursPipeline::build(&cohort, &cfg.embedder, &pipeline_cfg, seed)?;
    let mut rows = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let arrivals: Vec<(AgentProfile, Vec<usize>)> = if round == 1 {
            live.clone()
        } else {
            let mut rng = stream(seed, DEPARTURE_STREAM, round as u64);
            let mut idx: Vec<usize> = (0..live.len()).collect();
            idx.shuffle(&mut rng);
            let leaving: BTreeSet<usize> = idx.into_iter().take(cfg.departures_per_round).collect();
            let gone: Vec<String> = leaving.iter().map(|&i| live[i].0.agent_id.clone()).collect();
            ours.deregister(&gone)?;
            live = live
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !leaving.contains(i))
                .map(|(_, a)| a)
                .collect();
            let range = next_id..next_id + cfg.arrivals_per_round as u64;
            next_id = range.end;
            let arrived: Vec<(AgentProfile, Vec<usize>)> = range.map(|i| sampler.agent(i)).collect();
            let profiles: Vec<AgentProfile> = arrived.iter().map(|(p, _)| p.clone()).collect();
            ours.register(&profiles)?;
            live.extend(arrived.iter().cloned());
            arrived
        };

        if !arrivals.is_empty() {
            let (profiles, cats): (Vec<AgentProfile>, Vec<Vec<usize>>) = arrivals.into_iter().unzip();
            let n_train = (profiles.len() as f64 * cfg.train_queries_per_agent).ceil() as usize;
            let train = generate_training_queries(
                taxonomy,
                &profiles,
                &cats,
                n_train,
                seed ^ (round as u64).wrapping_mul(0x9e37_79b9),
            );
            ours.train(&train, 1)?;
        }

        let state = ours.registry.state();
        let retained: Vec<LabeledQuery> = cohort_queries
            .iter()
            .filter(|q| state.index().contains(&q.target_id))
            .cloned()
            .collect();
        let (live_profiles, live_cats): (Vec<AgentProfile>, Vec<Vec<usize>>) = live.iter().cloned().unzip();
        let population_queries = test_queries(
            taxonomy,
            &live_profiles,
            &live_cats,
            cfg.eval_queries,
            stream_seed(seed, round),
        );
        rows.push(ChurnRow {
            replay: replay_m > 0,
            seed,
            round,
            n_agents: state.len(),
            population_top1: top1(&ours, &population_queries)?,
            retention_top1: top1(&ours, &retained)?,
            retention_queries: retained.len(),
        });
    }
    Ok(rows)
}

fn stream_seed(seed: u64, round: usize) -> u64 {
    use rand::RngCore;
    stream(seed, POPULATION_STREAM, round as u64).next_u64()
}

/// Runs every seed twice, with replay width `replay_m` and with replay off.
pub fn churn_simulation(cfg: &ChurnConfig) -> Result<Vec<ChurnRow>, BenchError> {
    if cfg.departures_per_round > cfg.arrivals_per_round {
        return Err(BenchError::InvalidConfig("departures may not exceed arrivals".into()));
    }
    if cfg.rounds == 0 || cfg.initial_agents < 10 || cfg.seeds.is_empty() {
        return Err(BenchError::InvalidConfig("need rounds, seeds and at least 10 initial agents".into()));
    }
    let taxonomy = match &cfg.taxonomy {
        Some(p) => CapabilityTaxonomy::from_file(p)?,
        None => CapabilityTaxonomy::default_taxonomy(),
    };
    let mut rows = Vec::new();
    for &m in &[cfg.replay_m, 0] {
        for &seed in &cfg.seeds {
            rows.extend(churn_arm(cfg, &taxonomy, seed, m)?);
        }
    }
    Ok(rows)
}

/// `replay,seed,round,n_agents,population_top1,retention_top1,retention_queries`.
pub fn write_churn_csv(rows: &[ChurnRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "replay,seed,round,n_agents,population_top1,retention_top1,retention_queries")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            if r.replay { "on" } else { "off" },
            r.seed,
            r.round,
            r.n_agents,
            r.population_top1,
            r.retention_top1,
            r.retention_queries
        )?;
    }
    Ok(())
}

/// Two agent populations over disjoint halves of the taxonomy, trained one
/// after the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub agents_per_phase: usize,
    pub rounds_per_phase: usize,
    pub train_queries_per_round: usize,
    pub eval_queries: usize,
    pub seed: u64,
    pub embedder: EmbedderConfig,
    pub pipeline: PipelineConfig,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            agents_per_phase: 150,
            rounds_per_phase: 5,
            train_queries_per_round: 150,
            eval_queries: 200,
            seed: 0,
            embedder: EmbedderConfig::hash(BENCH_DIM),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Phase-1 top-1 with the identity adapter.
    pub untrained_top1: f64,
    /// Phase-1 top-1 right after phase-1 training.
    pub phase1_top1: f64,
    /// Phase-1 top-1 after phase-2 training.
    pub retention_top1: f64,
    /// Phase-2 top-1 after phase-2 training.
    pub phase2_top1: f64,
}

pub fn drift_scenario(cfg: &DriftConfig) -> Result<DriftReport, BenchError> {
    let taxonomy = CapabilityTaxonomy::default_taxonomy();
    let even: Vec<usize> = (0..taxonomy.len()).filter(|c| c % 2 == 0).collect();
    let odd: Vec<usize> = (0..taxonomy.len()).filter(|c| c % 2 == 1).collect();
    let n = cfg.agents_per_phase as u64;
    let (a_agents, a_cats) = AgentSampler::restricted(&taxonomy, even, cfg.seed)?.agents(0..n);
    let (b_agents, b_cats) = AgentSampler::restricted(&taxonomy, odd, cfg.seed)?.agents(n..2 * n);

    let a_test = test_queries(&taxonomy, &a_agents, &a_cats, cfg.eval_queries, cfg.seed);
    let b_test = test_queries(&taxonomy, &b_agents, &b_cats, cfg.eval_queries, cfg.seed ^ 0x5eed);
    let train_count = cfg.train_queries_per_round * cfg.rounds_per_phase;
    let a_train = generate_training_queries(&taxonomy, &a_agents, &a_cats, train_count, cfg.seed);
    let b_train = generate_training_queries(&taxonomy, &b_agents, &b_cats, train_count, cfg.seed ^ 0x5eed);

    let mut ours = OursPipeline::build(&a_agents, &cfg.embedder, &cfg.pipeline, cfg.seed)?;
    let untrained_top1 = top1(&ours, &a_test)?;
    ours.train(&a_train, cfg.rounds_per_phase)?;
    let phase1_top1 = top1(&ours, &a_test)?;

    ours.register(&b_agents)?;
    ours.train(&b_train, cfg.rounds_per_phase)?;
    Ok(DriftReport {
        untrained_top1,
        phase1_top1,
        retention_top1: top1(&ours, &a_test)?,
        phase2_top1: top1(&ours, &b_test)?,
    })
}
