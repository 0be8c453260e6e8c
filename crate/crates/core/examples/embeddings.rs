//! Feature-hash embeddings, and the remote encoder client when a sidecar
//! address is given.
//!
//! ```text
//! cargo run --example embeddings
//! cargo run --example embeddings -- http://127.0.0.1:8600
//! ```

use agent_discovery::embed::{cosine, Embedder, EmbedderConfig};

fn show(embedder: &Embedder, pairs: &[(&str, &str)]) {
    for (a, b) in pairs {
        let va = embedder.embed_text(a).expect("embed");
        let vb = embedder.embed_text(b).expect("embed");
        println!("  {:.3}  {a:?} ~ {b:?}", cosine(va.values(), vb.values()));
    }
}

fn main() {
    let pairs = [
        ("path planning", "route planning"),
        ("path planning", "route optimization"),
        ("path planning", "sentiment classification"),
    ];
    let hash = Embedder::from_config(&EmbedderConfig::hash(256)).unwrap();
    println!("hash, D=256:");
    show(&hash, &pairs);

    if let Some(endpoint) = std::env::args().nth(1) {
        let remote = Embedder::from_config(&EmbedderConfig::remote(endpoint)).unwrap();
        println!("remote:");
        match remote.embed_text("warm up") {
            Ok(v) => {
                println!("  dimension {}", v.dim());
                show(&remote, &pairs);
            }
            Err(e) => println!("  unavailable: {e}"),
        }
    }
}
