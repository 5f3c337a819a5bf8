//! Cluster coherence (VCS) and per-token weighted projection scores (WPS).
//!
//! VCS of a cluster is the mean pairwise cosine similarity of the raw weight
//! rows of its tokens. WPS of a token is `Σ_i s[i] · |u[token, i]|` over the
//! non-degenerate directions; tokens below `mu - z·sigma` of the WPS
//! population are reported as glitch candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{top_k_tokens, ClusterRecord, SpectralError, SvdFactors};
use crate::tensor_io::WeightMatrix;
use crate::vocab::{render_token, Vocabulary};

pub const DEFAULT_N_VECTORS: usize = 30;
pub const DEFAULT_K_TOKENS: usize = 20;
pub const DEFAULT_Z_SIGMA: f64 = 2.0;
/// Rows with a smaller Euclidean norm are left out of VCS pairs.
pub const DEFAULT_VCS_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("token id {id} out of range for a {rows}-row matrix")]
    TokenOutOfRange { id: usize, rows: usize },
    #[error("factors describe a {factor_rows}-row matrix, weights have {weight_rows} rows")]
    ShapeMismatch {
        factor_rows: usize,
        weight_rows: usize,
    },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn cosine_rows(w: &WeightMatrix, ids: &[usize], eps: f64) -> Vec<Vec<f64>> {
    ids.iter()
        .filter_map(|&id| {
            let row = w.row(id);
            let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            (norm >= eps).then(|| row.iter().map(|&x| x as f64 / norm).collect())
        })
        .collect()
}

/// Mean pairwise cosine similarity of the weight rows of `cluster`'s tokens.
///
/// Rows with norm below `eps` are skipped; `None` when fewer than two rows
/// remain.
pub fn vcs(w: &WeightMatrix, cluster: &ClusterRecord, eps: f64) -> Result<Option<f64>, MetricsError> {
    if let Some(&id) = cluster.token_ids.iter().find(|&&id| id >= w.rows()) {
        return Err(MetricsError::TokenOutOfRange { id, rows: w.rows() });
    }
    let unit = cosine_rows(w, &cluster.token_ids, eps);
    let m = unit.len();
    if m < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            let dot: f64 = unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum();
            total += dot.clamp(-1.0, 1.0);
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Ok(Some((total / pairs).clamp(-1.0, 1.0)))
}

/// Top-k clusters for the first `n` directions, each with its VCS attached.
pub fn vcs_clusters(
    w: &WeightMatrix,
    f: &SvdFactors,
    n: usize,
    k: usize,
) -> Result<Vec<ClusterRecord>, MetricsError> {
    if f.rows() != w.rows() {
        return Err(MetricsError::ShapeMismatch {
            factor_rows: f.rows(),
            weight_rows: w.rows(),
        });
    }
    let rank = f.rank();
    if n > rank {
        return Err(SpectralError::InsufficientRank { requested: n, rank }.into());
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = top_k_tokens(f, i, k)?;
            c.vcs = vcs(w, &c, DEFAULT_VCS_EPS)?;
            Ok(c)
        })
        .collect()
}

/// VCS per direction plus summary statistics over the defined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcsSummary {
    pub per_vector: Vec<(usize, Option<f64>)>,
    pub mean_vcs: Option<f64>,
    pub max_vcs: Option<f64>,
    /// Lowest index attaining `max_vcs`.
    pub argmax_index: Option<usize>,
    pub undefined_count: usize,
}

impl VcsSummary {
    pub fn from_clusters(clusters: &[ClusterRecord]) -> Self {
        let per_vector: Vec<(usize, Option<f64>)> =
            clusters.iter().map(|c| (c.vector_index, c.vcs)).collect();
        let defined: Vec<(usize, f64)> = per_vector
            .iter()
            .filter_map(|&(i, v)| v.map(|v| (i, v)))
            .collect();
        let mean_vcs = (!defined.is_empty())
            .then(|| defined.iter().map(|&(_, v)| v).sum::<f64>() / defined.len() as f64);
        let best = defined
            .iter()
            .copied()
            .reduce(|best, cur| if cur.1 > best.1 { cur } else { best });
        Self {
            undefined_count: per_vector.len() - defined.len(),
            per_vector,
            mean_vcs,
            max_vcs: best.map(|b| b.1),
            argmax_index: best.map(|b| b.0),
        }
    }
}

pub fn vcs_summary(
    w: &WeightMatrix,
    f: &SvdFactors,
    n: usize,
    k: usize,
) -> Result<VcsSummary, MetricsError> {
    Ok(VcsSummary::from_clusters(&vcs_clusters(w, f, n, k)?))
}

/// WPS for every token with population statistics and the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct WpsTable {
    pub wps: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation (divides by V).
    pub sigma: f64,
    pub z: f64,
    /// `mu - z * sigma`.
    pub threshold: f64,
}

/// Summary of a [`WpsTable`] without the per-token values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpsStats {
    pub vocab_size: usize,
    pub mu: f64,
    pub sigma: f64,
    pub z: f64,
    pub threshold: f64,
    pub min: f64,
    pub max: f64,
}

impl WpsTable {
    pub fn stats(&self) -> WpsStats {
        WpsStats {
            vocab_size: self.wps.len(),
            mu: self.mu,
            sigma: self.sigma,
            z: self.z,
            threshold: self.threshold,
            min: self.wps.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.wps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn wps_table(f: &SvdFactors, z: f64) -> WpsTable {
    let rank = f.rank();
    let s = &f.singular_values()[..rank];
    let wps: Vec<f64> = (0..f.rows())
        .into_par_iter()
        .map(|v| {
            f.u_row(v)[..rank]
                .iter()
                .zip(s)
                .map(|(&u, &s)| s * (u as f64).abs())
                .sum()
        })
        .collect();
    let n = wps.len() as f64;
    let mu = wps.iter().sum::<f64>() / n;
    let sigma = (wps.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    WpsTable {
        threshold: mu - z * sigma,
        wps,
        mu,
        sigma,
        z,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlitchCandidate {
    pub id: usize,
    pub wps: f64,
    pub token: String,
}

/// Tokens strictly below the WPS threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlitchReport {
    pub count: usize,
    /// `count / V`.
    pub fraction: f64,
    /// Ascending by WPS, then by ID.
    pub candidates: Vec<GlitchCandidate>,
}

pub fn glitch_candidates(t: &WpsTable, vocab: &Vocabulary) -> GlitchReport {
    let mut ids: Vec<usize> = (0..t.wps.len())
        .filter(|&v| t.wps[v] < t.threshold)
        .collect();
    ids.sort_by(|&a, &b| t.wps[a].total_cmp(&t.wps[b]).then(a.cmp(&b)));
    let candidates: Vec<GlitchCandidate> = ids
        .into_iter()
        .map(|id| GlitchCandidate {
            id,
            wps: t.wps[id],
            token: render_token(vocab, id),
        })
        .collect();
    GlitchReport {
        count: candidates.len(),
        fraction: if t.wps.is_empty() {
            0.0
        } else {
            candidates.len() as f64 / t.wps.len() as f64
        },
        candidates,
    }
}
