//! Structured agent capability profiles.
//!
//! A profile is what an agent announces about itself: the skills it can
//! execute, the roles it plays, the operating constraints it runs under, plus
//! a credibility score and a live availability flag. Profiles arrive as JSON
//! documents; [`profile_from_document`] parses and validates them, and
//! [`canonical_text`] turns a profile into the single-line text fed to the
//! embedder.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_AGENT_ID_LEN: usize = 128;

pub const DEFAULT_CREDIBILITY: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("malformed profile document: {0}")]
    Parse(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("`skills` must contain at least one non-empty phrase")]
    EmptySkills,
    #[error("value out of range for `{field}`: {reason}")]
    OutOfRangeValue { field: &'static str, reason: String },
}

impl ProfileError {
    fn range(field: &'static str, reason: impl Into<String>) -> Self {
        ProfileError::OutOfRangeValue {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Availability {
    #[default]
    Available,
    Busy,
    Offline,
}

impl Availability {
    /// Score used by the ranker.
    pub fn score(self) -> f64 {
        match self {
            Availability::Available => 1.0,
            Availability::Busy => 0.5,
            Availability::Offline => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Cloud,
    Edge,
    Device,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Cloud => "cloud",
            Placement::Edge => "edge",
            Placement::Device => "device",
        })
    }
}

/// Operating context of an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConstraintSet {
    pub latency_tolerance_ms: u64,
    pub placement: Placement,
    pub memory_capacity_mb: u64,
    /// Fraction of capacity currently in use, in `[0, 1]`.
    pub current_load: f64,
}

impl ConstraintSet {
    pub fn free_memory_mb(&self) -> f64 {
        self.memory_capacity_mb as f64 * (1.0 - self.current_load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    pub skills: Vec<String>,
    pub roles: Vec<String>,
    pub constraints: ConstraintSet,
    pub credibility: f64,
    pub availability: Availability,
}

/// Deterministic single-line serialization of a profile's semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalText(String);

impl CanonicalText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CanonicalText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Wire shape of a profile document. Every field is optional here so that
/// validation can name exactly what is missing; unknown keys are ignored.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProfileDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skills: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintsDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<Availability>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintsDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_tolerance_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_capacity_mb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_load: Option<f64>,
}

impl From<&AgentProfile> for ProfileDocument {
    fn from(p: &AgentProfile) -> Self {
        ProfileDocument {
            agent_id: Some(p.agent_id.clone()),
            skills: Some(p.skills.clone()),
            roles: Some(p.roles.clone()),
            constraints: Some(ConstraintsDocument {
                latency_tolerance_ms: Some(p.constraints.latency_tolerance_ms as f64),
                placement: Some(p.constraints.placement),
                memory_capacity_mb: Some(p.constraints.memory_capacity_mb as f64),
                current_load: Some(p.constraints.current_load),
            }),
            credibility: Some(p.credibility),
            availability: Some(p.availability),
        }
    }
}

fn clean_phrases(phrases: Vec<String>, field: &'static str) -> Result<Vec<String>, ProfileError> {
    phrases
        .into_iter()
        .map(|s| {
            let t = s.trim();
            if t.is_empty() {
                Err(ProfileError::range(field, "phrases must be non-empty"))
            } else {
                Ok(t.to_string())
            }
        })
        .collect()
}

fn whole_number(value: f64, field: &'static str) -> Result<u64, ProfileError> {
    if !value.is_finite() || value < 0.0 {
        return Err(ProfileError::range(field, format!("{value} is negative or not finite")));
    }
    if value.fract() != 0.0 || value > u64::MAX as f64 {
        return Err(ProfileError::range(field, format!("{value} is not a whole number")));
    }
    Ok(value as u64)
}

fn unit_interval(value: f64, field: &'static str) -> Result<f64, ProfileError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ProfileError::range(field, format!("{value} is outside [0, 1]")));
    }
    Ok(value)
}

/// Validates a parsed document. `agent_id` and `skills` are required; every
/// other field falls back to a default.
pub fn validate_profile(doc: ProfileDocument) -> Result<AgentProfile, ProfileError> {
    let agent_id = doc.agent_id.ok_or(ProfileError::MissingField("agent_id"))?;
    let id_len = agent_id.chars().count();
    if agent_id.trim().is_empty() || id_len > MAX_AGENT_ID_LEN {
        return Err(ProfileError::range(
            "agent_id",
            format!("must be 1-{MAX_AGENT_ID_LEN} visible characters"),
        ));
    }
    if agent_id.chars().any(|c| c.is_control() || c == '|') {
        return Err(ProfileError::range(
            "agent_id",
            "must not contain control characters or '|'",
        ));
    }

    let skills = doc.skills.ok_or(ProfileError::MissingField("skills"))?;
    if skills.is_empty() {
        return Err(ProfileError::EmptySkills);
    }
    let skills = clean_phrases(skills, "skills")?;
    let roles = clean_phrases(doc.roles.unwrap_or_default(), "roles")?;

    let c = doc.constraints.unwrap_or_default();
    let constraints = ConstraintSet {
        latency_tolerance_ms: whole_number(
            c.latency_tolerance_ms.unwrap_or(0.0),
            "constraints.latency_tolerance_ms",
        )?,
        placement: c.placement.unwrap_or_default(),
        memory_capacity_mb: whole_number(
            c.memory_capacity_mb.unwrap_or(0.0),
            "constraints.memory_capacity_mb",
        )?,
        current_load: unit_interval(c.current_load.unwrap_or(0.0), "constraints.current_load")?,
    };

    Ok(AgentProfile {
        agent_id,
        skills,
        roles,
        constraints,
        credibility: unit_interval(doc.credibility.unwrap_or(DEFAULT_CREDIBILITY), "credibility")?,
        availability: doc.availability.unwrap_or_default(),
    })
}

/// Parses and validates a JSON profile document.
pub fn profile_from_document(bytes: &[u8]) -> Result<AgentProfile, ProfileError> {
    let doc: ProfileDocument =
        serde_json::from_slice(bytes).map_err(|e| ProfileError::Parse(e.to_string()))?;
    validate_profile(doc)
}

/// Parses a document from an already-decoded JSON value.
pub fn profile_from_value(value: serde_json::Value) -> Result<AgentProfile, ProfileError> {
    let doc: ProfileDocument =
        serde_json::from_value(value).map_err(|e| ProfileError::Parse(e.to_string()))?;
    validate_profile(doc)
}

pub fn profile_to_document(p: &AgentProfile) -> Vec<u8> {
    serde_json::to_vec(&ProfileDocument::from(p)).expect("profile documents always serialize")
}

pub fn profile_to_value(p: &AgentProfile) -> serde_json::Value {
    serde_json::to_value(ProfileDocument::from(p)).expect("profile documents always serialize")
}

/// Lowercases and collapses whitespace runs into single spaces.
pub(crate) fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn sorted_phrases(phrases: &[String]) -> String {
    let mut out: Vec<String> = phrases.iter().map(|s| normalize_phrase(s)).collect();
    out.sort();
    out.join(", ")
}

/// `skills: .. | roles: .. | state: placement=.., latency_ms=.., memory_mb=.., load=..`
///
/// Identity and credibility are not part of the text.
pub fn canonical_text(p: &AgentProfile) -> CanonicalText {
    let c = &p.constraints;
    CanonicalText(format!(
        "skills: {} | roles: {} | state: placement={}, latency_ms={}, memory_mb={}, load={:.2}",
        sorted_phrases(&p.skills),
        sorted_phrases(&p.roles),
        c.placement,
        c.latency_tolerance_ms,
        c.memory_capacity_mb,
        c.current_load,
    ))
}

/// Normalizes a free-text task query into the single lowercase line the
/// embedder expects.
pub fn canonical_query(task_text: &str) -> String {
    normalize_phrase(task_text)
}
