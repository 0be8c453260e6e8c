//! Compare the quantized, adapted pipeline with BM25 and flat dense search
//! on the synthetic taxonomy corpus.
//!
//! ```text
//! cargo run --release --example benchmark -- [n_agents...]
//! ```

use agent_discovery::bench::{run_experiment, write_experiment_csv, ExperimentConfig};

fn main() {
    let sizes: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("agent count")).collect();
    let cfg = ExperimentConfig {
        n_agents: if sizes.is_empty() { vec![250, 500] } else { sizes },
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(&cfg).unwrap();
    for r in &rows {
        let m = &r.metrics;
        println!(
            "{:<6} n={:<5} seed={} top1 {:.3}  mrr@10 {:.3}  ndcg@10 {:.3}  recall@5 {:.3}  ({} ms)",
            m.method, m.n_agents, r.seed, m.top1_accuracy, m.mrr_at_10, m.ndcg_at_10, m.recall_at_5, r.wall_ms
        );
    }
    println!();
    write_experiment_csv(&rows, std::io::stdout()).unwrap();
}
