//! A persistent registry: every mutation is appended to an event log, the
//! state can be snapshotted, and reopening replays the log tail.
//!
//! ```text
//! cargo run --example registry [data-dir]
//! ```

use std::path::PathBuf;

use agent_discovery::index::QuerySpec;
use agent_discovery::registry::{Registry, RegistryConfig};
use serde_json::json;

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("agent-registry-{}", std::process::id())));
    let registry = Registry::open(&dir, RegistryConfig::default()).unwrap();
    println!("opened {} with {} agents", dir.display(), registry.len());

    let start = registry.state().last_seq();
    let agents = [
        ("planner", vec!["route planning", "trajectory planning"]),
        ("captioner", vec!["image captioning"]),
        ("scribe", vec!["meeting transcription", "meeting summarization"]),
    ];
    for (id, skills) in &agents {
        let doc = json!({"agent_id": id, "skills": skills, "roles": ["worker"]});
        match registry.register_agent(doc.to_string().as_bytes()) {
            Ok(r) => println!("registered {} at seq {} code {:?}", r.agent_id, r.seq, r.code.indices),
            Err(e) => println!("skipped {id}: {e}"),
        }
    }
    let cred = registry.record_endorsement("planner", 1.0).unwrap();
    println!("planner credibility after endorsement: {cred:.3}");

    for r in registry.query(&QuerySpec::new("who can do route planning", 2)).unwrap() {
        println!("  {:<10} fused {:.3}", r.agent_id, r.fused);
    }
    for e in registry.event_feed(start) {
        println!("event {}: {}", e.seq, serde_json::to_string(&e).unwrap());
    }

    let snap = registry.snapshot().unwrap();
    registry.deregister_agent("captioner").unwrap();
    drop(registry);

    let reopened = Registry::open(&dir, RegistryConfig::default()).unwrap();
    println!(
        "snapshot at {}; reopened with {} agents at seq {}",
        snap.display(),
        reopened.len(),
        reopened.state().last_seq()
    );
}
