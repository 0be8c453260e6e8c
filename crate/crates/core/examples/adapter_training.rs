//! Continual adaptation of the query-side adapter: replayed contrastive
//! rounds with importance-damped updates, published to a live registry.
//!
//! ```text
//! cargo run --release --example adapter_training
//! ```

use agent_discovery::bench::{generate_corpus, generate_training_queries, CapabilityTaxonomy, LabeledQuery};
use agent_discovery::codebook::train_codebook;
use agent_discovery::continual::{ContinualConfig, ContinualLearner, TrainSample};
use agent_discovery::embed::EmbedderConfig;
use agent_discovery::index::QuerySpec;
use agent_discovery::profile::{canonical_query, canonical_text, profile_to_value};
use agent_discovery::registry::{Registry, RegistryConfig};

const DIM: usize = 256;

fn top1(registry: &Registry, queries: &[LabeledQuery]) -> f64 {
    let hits = queries
        .iter()
        .filter(|q| {
            let r = registry.query(&QuerySpec::new(q.task_text.clone(), 1)).unwrap();
            r.first().is_some_and(|r| r.agent_id == q.target_id)
        })
        .count();
    hits as f64 / queries.len() as f64
}

fn main() {
    let taxonomy = CapabilityTaxonomy::default_taxonomy();
    let corpus = generate_corpus(&taxonomy, 400, 0.5, 3).unwrap();
    let config = RegistryConfig {
        dim: DIM,
        subspaces: 32,
        embedder: EmbedderConfig::hash(DIM),
        continual: ContinualConfig {
            epochs: 20,
            ..ContinualConfig::default()
        },
        ..RegistryConfig::default()
    };

    let registry = {
        let embedder = agent_discovery::embed::Embedder::from_config(&config.embedder).unwrap();
        let vectors: Vec<Vec<f64>> = corpus
            .agents
            .iter()
            .map(|a| embedder.embed_text(canonical_text(a).as_str()).unwrap().into_values())
            .collect();
        let cb = train_codebook(&vectors, config.subspaces, config.anchors, 3).unwrap();
        Registry::in_memory_with_codebook(config.clone(), cb).unwrap()
    };
    for a in &corpus.agents {
        registry.register_agent(profile_to_value(a).to_string().as_bytes()).unwrap();
    }
    println!("{} agents, {} held-out queries", registry.len(), corpus.queries.len());
    println!("top-1 with identity adapter: {:.3}", top1(&registry, &corpus.queries));

    let training = generate_training_queries(&taxonomy, &corpus.agents, &corpus.agent_categories, 800, 3);
    let state = registry.state();
    let cb = state.codebook().unwrap();
    let samples: Vec<TrainSample> = training
        .iter()
        .map(|q| TrainSample {
            query: registry
                .embedder()
                .embed_text(&canonical_query(&q.task_text))
                .unwrap()
                .into_values(),
            target_id: q.target_id.clone(),
            target_reconstruction: cb.reconstruct(&state.index().get(&q.target_id).unwrap().code).unwrap(),
        })
        .collect();

    let mut learner = ContinualLearner::new(DIM, config.continual.clone());
    for chunk in samples.chunks(160) {
        let r = learner.train_round(chunk).unwrap();
        println!(
            "round {}: {} new + {} replayed, loss {:.3} -> {:.3}",
            r.round, r.new_samples, r.replayed, r.loss_before, r.loss_after
        );
        registry.set_adapter(learner.adapter().clone()).unwrap();
        println!("  top-1 now {:.3}", top1(&registry, &corpus.queries));
    }
    println!("replay buffer holds {} of {} seen", learner.buffer().len(), learner.buffer().seen());
}
