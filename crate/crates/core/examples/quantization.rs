//! Product-quantize agent embeddings into compact codes, grow the codebook
//! append-only, and show that a rebuild invalidates old codes.
//!
//! ```text
//! cargo run --release --example quantization
//! ```

use agent_discovery::bench::{AgentSampler, CapabilityTaxonomy};
use agent_discovery::codebook::{rebuild, train_codebook};
use agent_discovery::embed::{Embedder, EmbedderConfig};
use agent_discovery::profile::canonical_text;

pub fn main() {
    let taxonomy = CapabilityTaxonomy::default_taxonomy();
    let (agents, _) = AgentSampler::new(&taxonomy, 1).unwrap().agents(0..1100);
    let embedder = Embedder::from_config(&EmbedderConfig::hash(64)).unwrap();
    let vectors: Vec<Vec<f64>> = agents
        .iter()
        .map(|a| embedder.embed_text(canonical_text(a).as_str()).unwrap().into_values())
        .collect();
    let (initial, arrivals) = vectors.split_at(1000);

    let cb = train_codebook(initial, 8, 16, 1).unwrap();
    let mut err = 0.0;
    for v in initial {
        err += cb.assign_code(v).unwrap().1.total_error;
    }
    println!(
        "trained: M={} k={} tau={:.4}, mean squared error {:.4} (vectors are unit length)",
        cb.subspaces(),
        cb.k(),
        cb.tau(),
        err / initial.len() as f64
    );
    println!(
        "storage: {} byte(s) per agent vs {} bytes as f32",
        cb.subspaces() * cb.code_width(),
        cb.dim() * 4
    );

    let (first_code, _) = cb.assign_code(&initial[0]).unwrap();
    let (grown, report) = cb.incremental_update(arrivals, 64).unwrap();
    let per_subspace: Vec<usize> = (0..grown.subspaces()).map(|m| grown.anchor_count(m)).collect();
    println!(
        "100 arrivals: {} anchors appended, version {} -> {}, anchors per subspace {per_subspace:?}",
        report.appended_count(),
        cb.version(),
        grown.version()
    );
    println!(
        "old code {:?} still decodes: {}",
        first_code.indices,
        grown.reconstruct(&first_code).is_ok()
    );

    let rebuilt = rebuild(&vectors, 8, 16, 1, grown.version()).unwrap();
    println!("after rebuild: {}", rebuilt.reconstruct(&first_code).unwrap_err());
}
