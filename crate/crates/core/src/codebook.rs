//! Product-quantization codebook and compact agent codes.
//!
//! An embedding of dimension `D` is cut into `M` equal sub-vectors. Each
//! subspace owns an ordered list of anchors (k-means centroids at training
//! time); an agent's code is the index of the nearest anchor in every
//! subspace. Between explicit rebuilds the anchor lists are append-only, so
//! a code issued at any earlier version keeps pointing at the same anchors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::kmeans::{kmeans, nearest};

/// Fraction of training vectors whose quantization error must fall at or
/// below `tau`.
pub const TAU_PERCENTILE: f64 = 0.95;
/// Default growth bound: `k_max = K_MAX_FACTOR * k`.
pub const K_MAX_FACTOR: usize = 4;

const MAGIC: &[u8; 4] = b"AGCB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodebookError {
    #[error("need at least {needed} training vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("dimension {dim} is not divisible into {subspaces} subspaces")]
    DimensionNotDivisible { dim: usize, subspaces: usize },
    #[error("vector has dimension {got}, codebook expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("code from version {code_version} is not valid for codebook version {version}")]
    StaleCode { code_version: u64, version: u64 },
    #[error("invalid codebook parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// The compact semantic identifier of an agent: one anchor index per subspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentCode {
    pub indices: Vec<u16>,
    pub codebook_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    /// Squared Euclidean error per subspace.
    pub per_subspace: Vec<f64>,
    pub total_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Indices of anchors appended, per subspace.
    pub appended: Vec<Vec<usize>>,
    /// Subspaces that wanted a new anchor but were already at `k_max`.
    pub saturated: Vec<usize>,
}

impl UpdateReport {
    pub fn appended_count(&self) -> usize {
        self.appended.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    subspaces: usize,
    k: usize,
    k_max: usize,
    tau: f64,
    version: u64,
    /// Version at the last train/rebuild; codes older than this are stale.
    base_version: u64,
    /// Per subspace, row-major `count x sub_dim`.
    anchors: Vec<Vec<f64>>,
}

fn check_vectors<V: AsRef<[f64]>>(vectors: &[V], dim: usize) -> Result<(), CodebookError> {
    for v in vectors {
        if v.as_ref().len() != dim {
            return Err(CodebookError::DimensionMismatch {
                expected: dim,
                got: v.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// Nearest-rank percentile of `values` (`p` in `(0, 1]`).
fn percentile(mut values: Vec<f64>, p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = (p * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Trains a codebook with `subspaces` subspaces and `k` anchors per subspace.
///
/// Anchors come from per-subspace k-means with farthest-point seeding. When a
/// subspace has fewer than `k` distinct centroids the duplicates are dropped
/// and a warning is logged. `tau` is set to the 95th percentile of the
/// training vectors' total quantization error.
pub fn train_codebook<V: AsRef<[f64]>>(
    vectors: &[V],
    subspaces: usize,
    k: usize,
    seed: u64,
) -> Result<Codebook, CodebookError> {
    train_with_version(vectors, subspaces, k, seed, 1)
}

/// Retrains from scratch. The result's version is above `previous_version`,
/// which invalidates every code issued before the rebuild.
pub fn rebuild<V: AsRef<[f64]>>(
    vectors: &[V],
    subspaces: usize,
    k: usize,
    seed: u64,
    previous_version: u64,
) -> Result<Codebook, CodebookError> {
    train_with_version(vectors, subspaces, k, seed, previous_version + 1)
}

fn train_with_version<V: AsRef<[f64]>>(
    vectors: &[V],
    subspaces: usize,
    k: usize,
    seed: u64,
    version: u64,
) -> Result<Codebook, CodebookError> {
    if k == 0 || k > u16::MAX as usize {
        return Err(CodebookError::InvalidParameter(format!("k must be in 1..=65535, got {k}")));
    }
    if vectors.len() < k || vectors.is_empty() {
        return Err(CodebookError::TooFewVectors {
            needed: k.max(1),
            got: vectors.len(),
        });
    }
    let dim = vectors[0].as_ref().len();
    if subspaces == 0 || dim == 0 || !dim.is_multiple_of(subspaces) {
        return Err(CodebookError::DimensionNotDivisible { dim, subspaces });
    }
    check_vectors(vectors, dim)?;
    let sub_dim = dim / subspaces;

    let mut anchors = Vec::with_capacity(subspaces);
    for m in 0..subspaces {
        let points: Vec<&[f64]> = vectors
            .iter()
            .map(|v| &v.as_ref()[m * sub_dim..(m + 1) * sub_dim])
            .collect();
        let sub_seed = seed ^ (m as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let result = kmeans(&points, k, sub_dim, sub_seed);
        let mut distinct: Vec<f64> = Vec::with_capacity(result.centroids.len());
        for c in result.centroids.chunks_exact(sub_dim) {
            let dup = distinct
                .chunks_exact(sub_dim)
                .any(|d| d.iter().zip(c).all(|(a, b)| a.to_bits() == b.to_bits()));
            if !dup {
                distinct.extend_from_slice(c);
            }
        }
        let count = distinct.len() / sub_dim;
        if count < k {
            log::warn!("subspace {m}: only {count} distinct centroids for k={k}");
        }
        anchors.push(distinct);
    }

    let mut cb = Codebook {
        dim,
        subspaces,
        k,
        k_max: K_MAX_FACTOR * k,
        tau: 0.0,
        version,
        base_version: version,
        anchors,
    };
    let errors: Vec<f64> = vectors
        .iter()
        .map(|v| cb.quantize(v.as_ref()).1.total_error)
        .collect();
    cb.tau = percentile(errors, TAU_PERCENTILE);
    Ok(cb)
}

impl Codebook {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.subspaces
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.subspaces
    }

    /// Anchor count requested at training time.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn set_k_max(&mut self, k_max: usize) {
        self.k_max = k_max.clamp(1, u16::MAX as usize);
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn base_version(&self) -> u64 {
        self.base_version
    }

    pub fn anchor_count(&self, subspace: usize) -> usize {
        self.anchors[subspace].len() / self.sub_dim()
    }

    pub fn anchor(&self, subspace: usize, index: usize) -> &[f64] {
        let d = self.sub_dim();
        &self.anchors[subspace][index * d..(index + 1) * d]
    }

    /// Row-major anchors of one subspace.
    pub fn subspace_anchors(&self, subspace: usize) -> &[f64] {
        &self.anchors[subspace]
    }

    fn quantize(&self, v: &[f64]) -> (Vec<u16>, QuantizationReport) {
        let d = self.sub_dim();
        let mut indices = Vec::with_capacity(self.subspaces);
        let mut per_subspace = Vec::with_capacity(self.subspaces);
        for (m, sub) in v.chunks_exact(d).enumerate() {
            let (j, err) = nearest(sub, &self.anchors[m], d);
            indices.push(j as u16);
            per_subspace.push(err);
        }
        let total_error = per_subspace.iter().sum();
        (
            indices,
            QuantizationReport {
                per_subspace,
                total_error,
            },
        )
    }

    /// Nearest anchor per subspace under squared Euclidean distance; ties go
    /// to the lowest anchor index.
    pub fn assign_code(&self, v: &[f64]) -> Result<(AgentCode, QuantizationReport), CodebookError> {
        if v.len() != self.dim {
            return Err(CodebookError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let (indices, report) = self.quantize(v);
        Ok((
            AgentCode {
                indices,
                codebook_version: self.version,
            },
            report,
        ))
    }

    pub fn check_code(&self, code: &AgentCode) -> Result<(), CodebookError> {
        let stale = CodebookError::StaleCode {
            code_version: code.codebook_version,
            version: self.version,
        };
        if code.codebook_version < self.base_version
            || code.codebook_version > self.version
            || code.indices.len() != self.subspaces
        {
            return Err(stale);
        }
        if code
            .indices
            .iter()
            .enumerate()
            .any(|(m, &j)| j as usize >= self.anchor_count(m))
        {
            return Err(stale);
        }
        Ok(())
    }

    /// Concatenation of the selected anchors, not re-normalized.
    pub fn reconstruct(&self, code: &AgentCode) -> Result<Vec<f64>, CodebookError> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim);
        for (m, &j) in code.indices.iter().enumerate() {
            out.extend_from_slice(self.anchor(m, j as usize));
        }
        Ok(out)
    }

    /// Folds new vectors into the codebook without disturbing issued codes.
    ///
    /// A vector whose total error is within `tau` is left alone. Otherwise
    /// every subspace whose error exceeds `tau / M` gets the sub-vector
    /// appended as a new anchor, unless it already holds `k_max` anchors.
    /// Vectors are processed in order, so later vectors see anchors appended
    /// for earlier ones. The version is bumped once if anything was appended.
    pub fn incremental_update<V: AsRef<[f64]>>(
        &self,
        new_vectors: &[V],
        k_max: usize,
    ) -> Result<(Codebook, UpdateReport), CodebookError> {
        check_vectors(new_vectors, self.dim)?;
        let mut next = self.clone();
        let mut report = UpdateReport {
            appended: vec![Vec::new(); self.subspaces],
            saturated: Vec::new(),
        };
        let d = self.sub_dim();
        let per_subspace_tau = self.tau / self.subspaces as f64;
        let k_max = k_max.min(u16::MAX as usize);

        for v in new_vectors {
            let v = v.as_ref();
            let (_, q) = next.quantize(v);
            if q.total_error <= self.tau {
                continue;
            }
            for (m, &err) in q.per_subspace.iter().enumerate() {
                if err <= per_subspace_tau {
                    continue;
                }
                if next.anchor_count(m) >= k_max {
                    log::warn!("subspace {m} is at k_max={k_max}; anchor not appended");
                    if !report.saturated.contains(&m) {
                        report.saturated.push(m);
                    }
                    continue;
                }
                report.appended[m].push(next.anchor_count(m));
                next.anchors[m].extend_from_slice(&v[m * d..(m + 1) * d]);
            }
        }
        if report.appended_count() > 0 {
            next.version += 1;
        }
        Ok((next, report))
    }

    /// Bytes needed to store one code when indices are packed at the
    /// narrowest width that fits the current anchor counts.
    pub fn code_width(&self) -> usize {
        if (0..self.subspaces).all(|m| self.anchor_count(m) <= 256) {
            1
        } else {
            2
        }
    }

    /// Binary snapshot: header `{D, M, k, k_max, tau, version}` then each
    /// subspace's anchor count and row-major `f64` anchors.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, FORMAT_VERSION);
        w.u32(self.dim as u32);
        w.u32(self.subspaces as u32);
        w.u32(self.k as u32);
        w.u32(self.k_max as u32);
        w.f64(self.tau);
        w.u64(self.version);
        w.u64(self.base_version);
        for a in &self.anchors {
            w.u32((a.len() / self.sub_dim()) as u32);
            w.f64s(a);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Codebook, CodebookError> {
        let mut r = Reader::open(data, MAGIC, FORMAT_VERSION)?;
        let dim = r.u32()? as usize;
        let subspaces = r.u32()? as usize;
        let k = r.u32()? as usize;
        let k_max = r.u32()? as usize;
        let tau = r.f64()?;
        let version = r.u64()?;
        let base_version = r.u64()?;
        if subspaces == 0 || dim == 0 || !dim.is_multiple_of(subspaces) {
            return Err(FormatError::Corrupt("bad dimensions".into()).into());
        }
        let sub_dim = dim / subspaces;
        let mut anchors = Vec::with_capacity(subspaces);
        for _ in 0..subspaces {
            let count = r.u32()? as usize;
            if count == 0 {
                return Err(FormatError::Corrupt("empty subspace".into()).into());
            }
            anchors.push(r.f64s(count * sub_dim)?);
        }
        r.finish()?;
        Ok(Codebook {
            dim,
            subspaces,
            k,
            k_max,
            tau,
            version,
            base_version,
            anchors,
        })
    }
}
