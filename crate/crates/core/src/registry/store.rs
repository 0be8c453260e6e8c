//! On-disk layout of a registry data directory:
//!
//! ```text
//! <data-dir>/events.jsonl          append-only event log, one JSON object per line
//! <data-dir>/snapshot/manifest.json
//! <data-dir>/snapshot/codebook.bin
//! <data-dir>/snapshot/codes.bin    packed anchor indices, one byte each when every
//!                                  subspace has at most 256 anchors
//! <data-dir>/snapshot/entries.json profiles and bookkeeping, in agent-id order
//! <data-dir>/snapshot/adapter.bin
//! ```
//!
//! The log is never truncated; a snapshot is a checkpoint that lets restore
//! skip replaying the events it already covers.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RegistryConfig, RegistryError, RegistryEvent, RegistryState};
use crate::binio::{FormatError, Reader, Writer};
use crate::codebook::{AgentCode, Codebook, CodebookError};
use crate::continual::{ContinualError, QueryAdapter};
use crate::embed::Embedder;
use crate::index::{AgentIndex, IndexEntry};
use crate::profile::{profile_from_value, profile_to_value};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
pub const EVENT_LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshot";
pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const CODES_FILE: &str = "codes.bin";
const MANIFEST_FILE: &str = "manifest.json";
const ENTRIES_FILE: &str = "entries.json";
const ADAPTER_FILE: &str = "adapter.bin";
const CODES_MAGIC: &[u8; 4] = b"AGCC";
const CODES_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    last_seq: u64,
    last_ts: u64,
    agents: usize,
    config: RegistryConfig,
    /// crc32 of every other file in the snapshot.
    files: BTreeMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryRecord {
    agent_id: String,
    registered_seq: u64,
    codebook_version: u64,
    profile: serde_json::Value,
}

fn corrupt(msg: impl Into<String>) -> RegistryError {
    RegistryError::CorruptSnapshot(msg.into())
}

fn from_format(e: FormatError) -> RegistryError {
    match e {
        FormatError::Corrupt(m) => RegistryError::CorruptSnapshot(m),
        FormatError::VersionSkew { found, .. } => RegistryError::VersionSkew(found),
    }
}

fn from_codebook(e: CodebookError) -> RegistryError {
    match e {
        CodebookError::Format(f) => from_format(f),
        other => corrupt(other.to_string()),
    }
}

fn from_adapter(e: ContinualError) -> RegistryError {
    match e {
        ContinualError::Format(f) => from_format(f),
        other => corrupt(other.to_string()),
    }
}

/// Packs every agent's code in agent-id order. Each index takes
/// [`Codebook::code_width`] bytes.
pub fn write_codes(state: &RegistryState) -> Vec<u8> {
    let width = state.codebook().map_or(1, Codebook::code_width);
    let mut w = Writer::new(CODES_MAGIC, CODES_VERSION);
    w.u32(state.index().len() as u32);
    w.u32(state.config().subspaces as u32);
    w.u8(width as u8);
    let mut packed = Vec::with_capacity(state.index().len() * state.config().subspaces * width);
    for e in state.index().iter() {
        for &i in &e.code.indices {
            if width == 1 {
                packed.push(i as u8);
            } else {
                packed.extend_from_slice(&i.to_le_bytes());
            }
        }
    }
    w.raw(&packed);
    w.finish()
}

fn read_codes(data: &[u8], n: usize, subspaces: usize) -> Result<Vec<Vec<u16>>, RegistryError> {
    let mut r = Reader::open(data, CODES_MAGIC, CODES_VERSION).map_err(from_format)?;
    let count = r.u32().map_err(from_format)? as usize;
    let m = r.u32().map_err(from_format)? as usize;
    let width = r.u8().map_err(from_format)? as usize;
    if count != n || m != subspaces || !(width == 1 || width == 2) {
        return Err(corrupt("codes header does not match manifest"));
    }
    let packed = r.raw(n * m * width).map_err(from_format)?;
    r.finish().map_err(from_format)?;
    Ok(packed
        .chunks_exact(m * width)
        .map(|row| {
            if width == 1 {
                row.iter().map(|&b| b as u16).collect()
            } else {
                row.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect()
            }
        })
        .collect())
}

/// Writes a snapshot of `state` under `data_dir/snapshot`, replacing any
/// previous one only once the new one is complete.
pub fn snapshot(state: &RegistryState, data_dir: &Path) -> Result<PathBuf, RegistryError> {
    let final_dir = data_dir.join(SNAPSHOT_DIR);
    let tmp_dir = data_dir.join(format!("{SNAPSHOT_DIR}.tmp"));
    if tmp_dir.exists() {
        fs::remove_dir_all(&tmp_dir)?;
    }
    fs::create_dir_all(&tmp_dir)?;

    let mut files = BTreeMap::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), RegistryError> {
        files.insert(name.to_string(), crc32fast::hash(&bytes));
        fs::write(tmp_dir.join(name), bytes)?;
        Ok(())
    };
    if let Some(cb) = state.codebook() {
        put(CODEBOOK_FILE, cb.to_bytes())?;
    }
    put(CODES_FILE, write_codes(state))?;
    let entries: Vec<EntryRecord> = state
        .index()
        .iter()
        .map(|e| EntryRecord {
            agent_id: e.agent_id.clone(),
            registered_seq: e.registered_seq,
            codebook_version: e.code.codebook_version,
            profile: profile_to_value(&e.profile),
        })
        .collect();
    put(ENTRIES_FILE, serde_json::to_vec(&entries).expect("entries serialize"))?;
    put(ADAPTER_FILE, state.adapter().to_bytes(&state.config().continual))?;

    let manifest = Manifest {
        format_version: SNAPSHOT_FORMAT_VERSION,
        last_seq: state.last_seq(),
        last_ts: state.last_ts(),
        agents: state.len(),
        config: state.config().clone(),
        files,
    };
    fs::write(
        tmp_dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;

    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&tmp_dir, &final_dir)?;
    Ok(final_dir)
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, RegistryError> {
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| corrupt(format!("manifest does not list {name}")))?;
    let bytes = fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name}: {e}")))?;
    if crc32fast::hash(&bytes) != *expected {
        return Err(corrupt(format!("{name}: checksum mismatch")));
    }
    Ok(bytes)
}

fn load_snapshot(dir: &Path, config: &RegistryConfig) -> Result<RegistryState, RegistryError> {
    let raw = fs::read(dir.join(MANIFEST_FILE)).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let value: serde_json::Value = serde_json::from_slice(&raw).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SNAPSHOT_FORMAT_VERSION {
        return Err(RegistryError::VersionSkew(found));
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let stored = &manifest.config;
    if (stored.dim, stored.subspaces, stored.anchors) != (config.dim, config.subspaces, config.anchors) {
        return Err(RegistryError::ConfigMismatch(format!(
            "snapshot was taken with dim={} subspaces={} anchors={}",
            stored.dim, stored.subspaces, stored.anchors
        )));
    }
    // Geometry-affecting settings come from the snapshot so that replaying
    // the log tail behaves exactly as it did live.
    let mut effective = config.clone();
    effective.k_max = stored.k_max;
    effective.seed = stored.seed;

    let codebook = if manifest.files.contains_key(CODEBOOK_FILE) {
        let cb = Codebook::from_bytes(&read_checked(dir, CODEBOOK_FILE, &manifest)?).map_err(from_codebook)?;
        if cb.dim() != config.dim || cb.subspaces() != config.subspaces {
            return Err(corrupt("codebook geometry does not match manifest"));
        }
        Some(cb)
    } else {
        None
    };

    let entries: Vec<EntryRecord> = serde_json::from_slice(&read_checked(dir, ENTRIES_FILE, &manifest)?)
        .map_err(|e| corrupt(format!("entries: {e}")))?;
    if entries.len() != manifest.agents {
        return Err(corrupt("entry count does not match manifest"));
    }
    let codes = read_codes(&read_checked(dir, CODES_FILE, &manifest)?, entries.len(), config.subspaces)?;
    let mut index = AgentIndex::new();
    for (rec, indices) in entries.into_iter().zip(codes) {
        let profile = profile_from_value(rec.profile).map_err(|e| corrupt(format!("entry {}: {e}", rec.agent_id)))?;
        if profile.agent_id != rec.agent_id {
            return Err(corrupt(format!("entry {} has a mismatched profile", rec.agent_id)));
        }
        let code = AgentCode {
            indices,
            codebook_version: rec.codebook_version,
        };
        if let Some(cb) = &codebook {
            cb.check_code(&code).map_err(|e| corrupt(format!("entry {}: {e}", rec.agent_id)))?;
        }
        index
            .insert_entry(IndexEntry {
                agent_id: rec.agent_id,
                code,
                profile,
                registered_seq: rec.registered_seq,
            })
            .map_err(|e| corrupt(e.to_string()))?;
    }

    let (adapter, _) = QueryAdapter::from_bytes(&read_checked(dir, ADAPTER_FILE, &manifest)?).map_err(from_adapter)?;
    if adapter.dim() != config.dim {
        return Err(corrupt("adapter dimension does not match manifest"));
    }
    Ok(RegistryState::from_parts(
        effective,
        codebook,
        index,
        adapter,
        manifest.last_seq,
        manifest.last_ts,
    ))
}

/// Reads an event log. A torn final line (from a crash mid-append) is
/// dropped with a warning; any other malformed line is an error.
pub fn read_event_log(path: &Path) -> Result<Vec<RegistryEvent>, RegistryError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let lines: Vec<String> = BufReader::new(fs::File::open(path)?).lines().collect::<Result<_, _>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RegistryEvent>(line) {
            Ok(e) => events.push(e),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("ignoring torn final event log line: {e}");
            }
            Err(e) => return Err(RegistryError::InvalidEvent(format!("event log line {}: {e}", i + 1))),
        }
    }
    Ok(events)
}

/// Applies `events` in order, skipping those already reflected in `state`.
pub fn replay(
    mut state: RegistryState,
    events: &[RegistryEvent],
    embedder: &Embedder,
) -> Result<RegistryState, RegistryError> {
    for e in events {
        if e.seq > state.last_seq() {
            state = state.apply(embedder, e)?;
        }
    }
    Ok(state)
}

/// Rebuilds the state held in `data_dir`: the snapshot if there is one,
/// otherwise an empty registry, followed by the log tail. Returns the state
/// and the full event log.
pub fn restore(
    data_dir: &Path,
    config: &RegistryConfig,
    embedder: &Embedder,
) -> Result<(RegistryState, Vec<RegistryEvent>), RegistryError> {
    let snap_dir = data_dir.join(SNAPSHOT_DIR);
    let base = if snap_dir.exists() {
        load_snapshot(&snap_dir, config)?
    } else {
        RegistryState::new(config.clone())
    };
    let events = read_event_log(&data_dir.join(EVENT_LOG_FILE))?;
    let state = replay(base, &events, embedder)?;
    Ok((state, events))
}
