use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agent_discovery::bench::{
    churn_simulation, generate_corpus, run_experiment, write_churn_csv, write_experiment_csv, CapabilityTaxonomy,
    ChurnConfig, ExperimentConfig,
};
use agent_discovery::profile::profile_to_value;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Synthetic capability-discovery benchmarks.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled corpus as JSON lines.
    Corpus {
        /// Taxonomy JSON; the bundled taxonomy when omitted.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        queries_per_agent: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods across population sizes and seeds.
    Run {
        /// TOML or JSON experiment config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate arrivals and departures with and without replay.
    Churn {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)?;
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)?,
        _ => serde_json::from_str(&text)?,
    })
}

fn write_corpus(taxonomy: Option<&Path>, n: usize, seed: u64, qpa: f64, out: &Path) -> Result<()> {
    let taxonomy = match taxonomy {
        Some(p) => CapabilityTaxonomy::from_file(p)?,
        None => CapabilityTaxonomy::default_taxonomy(),
    };
    let corpus = generate_corpus(&taxonomy, n, qpa, seed)?;
    fs::create_dir_all(out)?;
    let mut agents = BufWriter::new(File::create(out.join("agents.jsonl"))?);
    for (p, cats) in corpus.agents.iter().zip(&corpus.agent_categories) {
        let mut v = profile_to_value(p);
        let names: Vec<&str> = cats.iter().map(|&c| taxonomy.categories[c].name.as_str()).collect();
        v["categories"] = serde_json::json!(names);
        writeln!(agents, "{v}")?;
    }
    agents.flush()?;
    let mut queries = BufWriter::new(File::create(out.join("queries.jsonl"))?);
    for q in &corpus.queries {
        writeln!(queries, "{}", serde_json::to_string(q)?)?;
    }
    queries.flush()?;
    println!("{} agents, {} queries -> {}", corpus.agents.len(), corpus.queries.len(), out.display());
    Ok(())
}

fn run(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: ExperimentConfig = load_config(config)?;
    let rows = run_experiment(&cfg)?;
    write_experiment_csv(&rows, BufWriter::new(File::create(out)?))?;
    let mut means: BTreeMap<(usize, String), (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = means.entry((r.metrics.n_agents, r.metrics.method.clone())).or_default();
        e.0 += r.metrics.top1_accuracy;
        e.1 += r.metrics.recall_at_10;
        e.2 += 1;
    }
    println!("{:>8}  {:<6} {:>7} {:>7}", "agents", "method", "top1", "rec@10");
    for ((n, method), (top1, r10, k)) in means {
        println!("{n:>8}  {method:<6} {:>7.4} {:>7.4}", top1 / k as f64, r10 / k as f64);
    }
    Ok(())
}

fn churn(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: ChurnConfig = load_config(config)?;
    let rows = churn_simulation(&cfg)?;
    write_churn_csv(&rows, BufWriter::new(File::create(out)?))?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Corpus {
            taxonomy,
            n,
            seed,
            queries_per_agent,
            out,
        } => write_corpus(taxonomy.as_deref(), n, seed, queries_per_agent, &out),
        Command::Run { config, out } => run(config.as_deref(), &out),
        Command::Churn { config, out } => churn(config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::FAILURE
        }
    }
}
