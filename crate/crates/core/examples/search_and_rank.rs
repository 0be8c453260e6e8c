//! Asymmetric-distance search over agent codes followed by multi-criteria
//! ranking with credibility, context and availability.
//!
//! ```text
//! cargo run --example search_and_rank
//! ```

use agent_discovery::codebook::train_codebook;
use agent_discovery::embed::{Embedder, EmbedderConfig};
use agent_discovery::index::{rank, search, AgentIndex, IndexEntry, QuerySpec, RequiredConstraints};
use agent_discovery::profile::{canonical_query, canonical_text, profile_from_value, Placement};
use serde_json::json;

pub fn main() {
    let docs = [
        json!({"agent_id": "edge-nav", "skills": ["route planning", "obstacle detection"], "roles": ["planner"],
               "constraints": {"latency_tolerance_ms": 40, "placement": "edge", "memory_capacity_mb": 512, "current_load": 0.2},
               "credibility": 0.9}),
        json!({"agent_id": "cloud-nav", "skills": ["route planning", "trajectory planning"], "roles": ["planner"],
               "constraints": {"latency_tolerance_ms": 400, "placement": "cloud", "memory_capacity_mb": 16384, "current_load": 0.7},
               "credibility": 0.6}),
        json!({"agent_id": "busy-nav", "skills": ["navigation planning"], "roles": ["planner"],
               "availability": "busy"}),
        json!({"agent_id": "captioner", "skills": ["image captioning"], "roles": ["describer"]}),
        json!({"agent_id": "scribe", "skills": ["meeting transcription", "meeting summarization"], "roles": ["assistant"]}),
    ];
    let embedder = Embedder::from_config(&EmbedderConfig::hash(64)).unwrap();
    let profiles: Vec<_> = docs.into_iter().map(|d| profile_from_value(d).unwrap()).collect();
    let vectors: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| embedder.embed_text(canonical_text(p).as_str()).unwrap().into_values())
        .collect();
    let cb = train_codebook(&vectors, 8, 4, 0).unwrap();
    let mut index = AgentIndex::new();
    for (i, (p, v)) in profiles.into_iter().zip(&vectors).enumerate() {
        let (code, _) = cb.assign_code(v).unwrap();
        index
            .insert_entry(IndexEntry {
                agent_id: p.agent_id.clone(),
                code,
                profile: p,
                registered_seq: i as u64 + 1,
            })
            .unwrap();
    }

    let task = "need route planning at the edge";
    let q = embedder.embed_text(&canonical_query(task)).unwrap().into_values();
    let candidates = search(&index, &cb, &q, 5).unwrap();
    println!("ADC candidates for {task:?}:");
    for c in &candidates {
        println!("  {:<10} sem {:+.4}", c.agent_id, c.sem);
    }

    let required = RequiredConstraints {
        max_latency_ms: Some(100),
        placement: Some(Placement::Edge),
        ..RequiredConstraints::default()
    };
    for strict in [false, true] {
        let spec = QuerySpec::new(task, 3).with_required(required.clone(), strict);
        println!("ranked (strict constraints: {strict}):");
        for r in rank(&candidates, |id| index.get(id).map(|e| &e.profile), &spec) {
            println!(
                "  {:<10} fused {:.3}  sem {:.3} cred {:.2} ctx {:.2} avail {:.2}",
                r.agent_id, r.fused, r.sem_score, r.cred_score, r.ctx_score, r.avail_score
            );
        }
    }
}
