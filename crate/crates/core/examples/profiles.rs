//! Validate an agent's capability document and derive its canonical text.
//!
//! ```text
//! cargo run --example profiles
//! ```

use agent_discovery::profile::{canonical_query, canonical_text, profile_from_document, profile_to_value};

const DOC: &str = r#"{
    "agent_id": "nav-7",
    "skills": ["Route Planning", "obstacle avoidance", "Trajectory Planning"],
    "roles": ["planner"],
    "constraints": {
        "latency_tolerance_ms": 120,
        "placement": "edge",
        "memory_capacity_mb": 2048,
        "current_load": 0.35
    }
}"#;

pub fn main() {
    let profile = profile_from_document(DOC.as_bytes()).expect("valid document");
    println!("normalized: {}", profile_to_value(&profile));
    println!("canonical:  {}", canonical_text(&profile).as_str());
    println!("query:      {}", canonical_query("  Need ROUTE planning\nfor a drone "));

    for bad in [
        r#"{"agent_id": "x", "skills": []}"#,
        r#"{"agent_id": "a|b", "skills": ["s"]}"#,
        r#"{"agent_id": "y", "skills": ["s"], "constraints": {"current_load": 1.5}}"#,
    ] {
        println!("rejected:   {}", profile_from_document(bad.as_bytes()).unwrap_err());
    }
}
