use std::fs;
use std::path::{Path, PathBuf};

use agent_discovery::embed::EmbedderConfig;
use agent_discovery::registry::RegistryConfig;
use serde::Deserialize;
use thiserror::Error;

/// Names a TOML file whose keys mirror the `serve` flags.
pub const CONFIG_ENV: &str = "REGISTRYD_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7700";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("--data-dir is required (flag or config file)")]
    MissingDataDir,
    #[error("--embedder remote needs --remote-endpoint")]
    MissingEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    Hash,
    Remote,
}

/// Settings shared by the command line and the config file. Every field is
/// optional so a flag can override just one key of the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// Directory holding the event log and snapshots.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Embedding dimension D.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of PQ subspaces M.
    #[arg(long)]
    pub subspaces: Option<usize>,
    /// Anchors per subspace k.
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderChoice>,
    /// Base address of the encoder sidecar.
    #[arg(long)]
    pub remote_endpoint: Option<String>,
    /// Socket address to bind.
    #[arg(long)]
    pub listen: Option<String>,
}

impl Options {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fields set in `flags` win over `self`.
    pub fn overridden_by(self, flags: Options) -> Options {
        Options {
            data_dir: flags.data_dir.or(self.data_dir),
            dim: flags.dim.or(self.dim),
            subspaces: flags.subspaces.or(self.subspaces),
            anchors: flags.anchors.or(self.anchors),
            embedder: flags.embedder.or(self.embedder),
            remote_endpoint: flags.remote_endpoint.or(self.remote_endpoint),
            listen: flags.listen.or(self.listen),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub listen: String,
    pub registry: RegistryConfig,
}

/// Merges the optional config file under the flags and fills defaults.
pub fn resolve(flags: Options, config_file: Option<&Path>) -> Result<Settings, ConfigError> {
    let file = match config_file {
        Some(p) => Options::from_file(p)?,
        None => Options::default(),
    };
    let opts = file.overridden_by(flags);
    let defaults = RegistryConfig::default();
    let dim = opts.dim.unwrap_or(defaults.dim);
    let embedder = match opts.embedder.unwrap_or(EmbedderChoice::Hash) {
        EmbedderChoice::Hash => EmbedderConfig::hash(dim),
        EmbedderChoice::Remote => EmbedderConfig {
            dim,
            ..EmbedderConfig::remote(opts.remote_endpoint.ok_or(ConfigError::MissingEndpoint)?)
        },
    };
    Ok(Settings {
        data_dir: opts.data_dir.ok_or(ConfigError::MissingDataDir)?,
        listen: opts.listen.unwrap_or_else(|| DEFAULT_LISTEN.to_string()),
        registry: RegistryConfig {
            dim,
            subspaces: opts.subspaces.unwrap_or(defaults.subspaces),
            anchors: opts.anchors.unwrap_or(defaults.anchors),
            embedder,
            ..defaults
        },
    })
}

/// The file named by [`CONFIG_ENV`], if set and non-empty.
pub fn config_file_from_env() -> Option<PathBuf> {
    std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}
