use std::process::ExitCode;
use std::sync::Arc;

use agent_discovery::registry::Registry;
use clap::{Parser, Subcommand};
use registryd::config::{config_file_from_env, resolve, Options};

/// Agent capability registry service.
///
/// Settings come from the TOML file named by REGISTRYD_CONFIG, with any
/// flag taking precedence over the file.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore the registry from its data directory and serve HTTP.
    Serve(Options),
    /// Restore the registry and write a fresh snapshot, then exit.
    Snapshot(Options),
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let (opts, serving) = match cli.command {
        Command::Serve(o) => (o, true),
        Command::Snapshot(o) => (o, false),
    };
    let settings = resolve(opts, config_file_from_env().as_deref())?;
    let registry = Arc::new(Registry::open(&settings.data_dir, settings.registry)?);
    log::info!(
        "restored {} agents at seq {} from {}",
        registry.len(),
        registry.state().last_seq(),
        settings.data_dir.display()
    );
    if serving {
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(registryd::serve(registry, &settings.listen))?;
    } else {
        let path = registry.snapshot()?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("registryd: {e}");
            ExitCode::FAILURE
        }
    }
}
