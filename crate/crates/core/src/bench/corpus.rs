use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::profile::{AgentProfile, Availability, ConstraintSet, Placement, DEFAULT_CREDIBILITY};

pub const MIN_PHRASES_PER_CATEGORY: usize = 4;
pub const MIN_CATEGORIES_PER_AGENT: usize = 2;
pub const MAX_CATEGORIES_PER_AGENT: usize = 5;

const DEFAULT_TAXONOMY: &str = include_str!("../../data/default_taxonomy.json");

const ROLES: [&str; 6] = ["planner", "executor", "analyst", "monitor", "coordinator", "assistant"];
const MEMORY_MB: [u64; 6] = [256, 512, 1024, 2048, 4096, 8192];
const TEMPLATES: [&str; 4] = ["find an agent for {}", "need help with {}", "looking for {}", "who can handle {}"];

// Stream tags keep agents, test queries and training queries independent.
const AGENT_STREAM: u64 = 0x6167_656e_7473;
const QUERY_STREAM: u64 = 0x7175_6572_7973;
const TRAIN_STREAM: u64 = 0x7472_6169_6e73;

/// A dedicated generator for item `index` of a stream.
pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.rotate_left(17));
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub phrases: Vec<String>,
}

/// Categories of interchangeable skill phrases. Phrases within a category
/// describe the same capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityTaxonomy {
    pub categories: Vec<Category>,
}

impl CapabilityTaxonomy {
    /// Forty categories of five phrases each.
    pub fn default_taxonomy() -> Self {
        Self::from_json(DEFAULT_TAXONOMY.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, BenchError> {
        let t: CapabilityTaxonomy = serde_json::from_slice(bytes)?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let mut seen = HashSet::new();
        for c in &self.categories {
            if c.phrases.len() < MIN_PHRASES_PER_CATEGORY {
                return Err(BenchError::TaxonomyInvalid(format!(
                    "category `{}` has {} phrases, needs {MIN_PHRASES_PER_CATEGORY}",
                    c.name,
                    c.phrases.len()
                )));
            }
            for p in &c.phrases {
                if p.trim().is_empty() {
                    return Err(BenchError::TaxonomyInvalid(format!("empty phrase in `{}`", c.name)));
                }
                if !seen.insert(p.trim().to_lowercase()) {
                    return Err(BenchError::TaxonomyInvalid(format!("phrase `{p}` appears twice")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub task_text: String,
    pub target_id: String,
    /// Nonzero graded relevances; every other agent is 0.
    pub relevance: BTreeMap<String, f64>,
}

impl LabeledQuery {
    pub fn relevance_of(&self, agent_id: &str) -> f64 {
        self.relevance.get(agent_id).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub agents: Vec<AgentProfile>,
    /// Category indices of each agent, parallel to `agents`.
    pub agent_categories: Vec<Vec<usize>>,
    pub queries: Vec<LabeledQuery>,
}

/// Draws agents from a subset of the taxonomy. Agent `i` depends only on
/// `(seed, i)`, so populations can grow incrementally.
#[derive(Debug, Clone)]
pub struct AgentSampler<'a> {
    taxonomy: &'a CapabilityTaxonomy,
    allowed: Vec<usize>,
    seed: u64,
}

impl<'a> AgentSampler<'a> {
    pub fn new(taxonomy: &'a CapabilityTaxonomy, seed: u64) -> Result<Self, BenchError> {
        Self::restricted(taxonomy, (0..taxonomy.len()).collect(), seed)
    }

    /// Only categories in `allowed` are used.
    pub fn restricted(taxonomy: &'a CapabilityTaxonomy, allowed: Vec<usize>, seed: u64) -> Result<Self, BenchError> {
        taxonomy.validate()?;
        if allowed.len() < MAX_CATEGORIES_PER_AGENT {
            return Err(BenchError::TaxonomyTooSmall(format!(
                "{} categories available, agents draw up to {MAX_CATEGORIES_PER_AGENT}",
                allowed.len()
            )));
        }
        if allowed.iter().any(|&c| c >= taxonomy.len()) {
            return Err(BenchError::InvalidConfig("category index out of range".into()));
        }
        Ok(AgentSampler { taxonomy, allowed, seed })
    }

    pub fn taxonomy(&self) -> &CapabilityTaxonomy {
        self.taxonomy
    }

    /// Agent number `i`: 2 to 5 categories with one phrase each, a role and
    /// random constraints. Returns the categories alongside the profile.
    pub fn agent(&self, i: u64) -> (AgentProfile, Vec<usize>) {
        let mut rng = stream(self.seed, AGENT_STREAM, i);
        let n = rng.gen_range(MIN_CATEGORIES_PER_AGENT..=MAX_CATEGORIES_PER_AGENT);
        let cats: Vec<usize> = self.allowed.choose_multiple(&mut rng, n).copied().collect();
        let skills = cats
            .iter()
            .map(|&c| self.taxonomy.categories[c].phrases.choose(&mut rng).unwrap().clone())
            .collect();
        let profile = AgentProfile {
            agent_id: format!("agent-{i:05}"),
            skills,
            roles: vec![ROLES.choose(&mut rng).unwrap().to_string()],
            constraints: ConstraintSet {
                latency_tolerance_ms: rng.gen_range(1..=100) * 10,
                placement: *[Placement::Cloud, Placement::Edge, Placement::Device].choose(&mut rng).unwrap(),
                memory_capacity_mb: *MEMORY_MB.choose(&mut rng).unwrap(),
                current_load: (rng.gen_range(0..=90) as f64) / 100.0,
            },
            credibility: DEFAULT_CREDIBILITY,
            availability: Availability::Available,
        };
        (profile, cats)
    }

    pub fn agents(&self, range: std::ops::Range<u64>) -> (Vec<AgentProfile>, Vec<Vec<usize>>) {
        range.map(|i| self.agent(i)).unzip()
    }
}

fn join_phrases(phrases: &[String]) -> String {
    match phrases {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Describes `target`'s categories with phrases the target did not use.
fn describe(
    taxonomy: &CapabilityTaxonomy,
    profile: &AgentProfile,
    cats: &[usize],
    rng: &mut ChaCha8Rng,
) -> String {
    let mut phrases: Vec<String> = cats
        .iter()
        .zip(&profile.skills)
        .map(|(&c, used)| {
            let options: Vec<&String> = taxonomy.categories[c].phrases.iter().filter(|p| *p != used).collect();
            (*options.choose(rng).unwrap()).clone()
        })
        .collect();
    phrases.shuffle(rng);
    TEMPLATES.choose(rng).unwrap().replace("{}", &join_phrases(&phrases))
}

/// Agents whose category sets contain every one of `cats`.
fn covering_agents(postings: &[Vec<usize>], cats: &[usize]) -> Vec<usize> {
    let mut lists: Vec<&Vec<usize>> = cats.iter().map(|&c| &postings[c]).collect();
    lists.sort_by_key(|l| l.len());
    let Some((first, rest)) = lists.split_first() else {
        return Vec::new();
    };
    let rest: Vec<BTreeSet<usize>> = rest.iter().map(|l| l.iter().copied().collect()).collect();
    first.iter().copied().filter(|a| rest.iter().all(|s| s.contains(a))).collect()
}

fn postings(n_categories: usize, agent_categories: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut p = vec![Vec::new(); n_categories];
    for (a, cats) in agent_categories.iter().enumerate() {
        for &c in cats {
            p[c].push(a);
        }
    }
    p
}

/// Test queries over `agents` drawn from `tag`'s stream. The target gets
/// relevance 1 and every other agent covering all of its categories 0.5.
fn sample_queries(
    taxonomy: &CapabilityTaxonomy,
    agents: &[AgentProfile],
    agent_categories: &[Vec<usize>],
    count: usize,
    seed: u64,
    tag: u64,
) -> Vec<LabeledQuery> {
    if agents.is_empty() {
        return Vec::new();
    }
    let post = postings(taxonomy.len(), agent_categories);
    (0..count as u64)
        .map(|j| {
            let mut rng = stream(seed, tag, j);
            let t = rng.gen_range(0..agents.len());
            let target = &agents[t];
            let task_text = describe(taxonomy, target, &agent_categories[t], &mut rng);
            let mut relevance = BTreeMap::new();
            for a in covering_agents(&post, &agent_categories[t]) {
                relevance.insert(agents[a].agent_id.clone(), if a == t { 1.0 } else { 0.5 });
            }
            LabeledQuery {
                task_text,
                target_id: target.agent_id.clone(),
                relevance,
            }
        })
        .collect()
}

pub(crate) fn test_queries(
    taxonomy: &CapabilityTaxonomy,
    agents: &[AgentProfile],
    agent_categories: &[Vec<usize>],
    count: usize,
    seed: u64,
) -> Vec<LabeledQuery> {
    sample_queries(taxonomy, agents, agent_categories, count, seed, QUERY_STREAM)
}

/// `n_agents` agents plus `ceil(n_agents * queries_per_agent)` labeled
/// queries. Deterministic in `seed`.
pub fn generate_corpus(
    taxonomy: &CapabilityTaxonomy,
    n_agents: usize,
    queries_per_agent: f64,
    seed: u64,
) -> Result<LabeledCorpus, BenchError> {
    if n_agents < 10 {
        return Err(BenchError::InvalidConfig("a corpus needs at least 10 agents".into()));
    }
    if !(queries_per_agent.is_finite() && queries_per_agent > 0.0) {
        return Err(BenchError::InvalidConfig("queries_per_agent must be positive".into()));
    }
    let sampler = AgentSampler::new(taxonomy, seed)?;
    let (agents, agent_categories) = sampler.agents(0..n_agents as u64);
    let count = (n_agents as f64 * queries_per_agent).ceil() as usize;
    let queries = test_queries(taxonomy, &agents, &agent_categories, count, seed);
    Ok(LabeledCorpus {
        agents,
        agent_categories,
        queries,
    })
}

/// Training queries for the adapter: same construction as test queries but
/// from an independent stream. Relevance maps hold the target only.
pub fn generate_training_queries(
    taxonomy: &CapabilityTaxonomy,
    agents: &[AgentProfile],
    agent_categories: &[Vec<usize>],
    count: usize,
    seed: u64,
) -> Vec<LabeledQuery> {
    if agents.is_empty() {
        return Vec::new();
    }
    (0..count as u64)
        .map(|j| {
            let mut rng = stream(seed, TRAIN_STREAM, j);
            let t = rng.gen_range(0..agents.len());
            let target = &agents[t];
            LabeledQuery {
                task_text: describe(taxonomy, target, &agent_categories[t], &mut rng),
                target_id: target.agent_id.clone(),
                relevance: BTreeMap::from([(target.agent_id.clone(), 1.0)]),
            }
        })
        .collect()
}
