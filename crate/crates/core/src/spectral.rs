//! Economy SVD of the output projection via the Gram matrix, top-k token
//! clusters per left singular vector, and singular-value spectrum profiles.
//!
//! For a tall `V x d` matrix `W` the factors are obtained from the `d x d`
//! Gram matrix `G = WᵀW` (accumulated in `f64`): its eigenvectors are the
//! right singular vectors, `s[i] = sqrt(λ[i])`, and `u[:, i] = W v_i / s[i]`.
//! Columns whose singular value falls below `rel_cutoff * s[0]` are flagged
//! degenerate and zeroed rather than normalised.
//!
//! Signs are canonical: in every non-degenerate column of `u`, the entry of
//! largest magnitude (lowest token ID on ties) is positive. The matching row
//! of `vt` is flipped with it, so `u · diag(s) · vt` is unchanged.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_io::WeightMatrix;

pub const DEFAULT_REL_CUTOFF: f64 = 1e-6;
pub const DEFAULT_SPECTRUM_M: usize = 20;

/// Rows per Gram / back-projection block.
const BLOCK_ROWS: usize = 2048;
/// Blocks evaluated concurrently before their partial Gram matrices are
/// summed, in block order.
const BLOCK_GROUP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is {rows}x{cols}; economy SVD needs rows >= cols (is the tensor transposed?)")]
    RowsLessThanCols { rows: usize, cols: usize },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("symmetric eigendecomposition of the {0}x{0} Gram matrix did not converge")]
    EigenFailed(usize),
    #[error("singular vector index {index} out of range (matrix has {cols} columns)")]
    IndexOutOfRange { index: usize, cols: usize },
    #[error("singular vector {0} is degenerate (no meaningful direction)")]
    DegenerateColumn(usize),
    #[error("k = {k} is invalid for a vocabulary of {rows} tokens")]
    InvalidK { k: usize, rows: usize },
    #[error("{requested} singular vectors requested but only {rank} are non-degenerate")]
    InsufficientRank { requested: usize, rank: usize },
    #[error("spectrum length m = {m} must lie in [3, {max}]")]
    SpectrumLength { m: usize, max: usize },
    #[error("invalid factors: {0}")]
    InvalidFactors(String),
}

/// Economy SVD factors of a `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`; column `i` is the i-th left singular vector.
    u: Vec<f32>,
    s: Vec<f64>,
    /// Row-major `cols x cols`; row `i` is the i-th right singular vector.
    vt: Vec<f64>,
    degenerate: Vec<bool>,
    rel_cutoff: f64,
}

impl SvdFactors {
    /// Assemble factors from raw parts, as a backend would return them.
    ///
    /// `s` must be non-negative and non-increasing. Degeneracy flags are
    /// derived from `rel_cutoff` and degenerate columns of `u` are zeroed.
    /// Signs are left untouched; call [`SvdFactors::canonicalize_signs`].
    pub fn from_parts(
        rows: usize,
        cols: usize,
        mut u: Vec<f32>,
        s: Vec<f64>,
        vt: Vec<f64>,
        rel_cutoff: f64,
    ) -> Result<Self, SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidFactors(m));
        if u.len() != rows * cols || s.len() != cols || vt.len() != cols * cols {
            return bad(format!(
                "shapes u={} s={} vt={} do not fit {rows}x{cols}",
                u.len(),
                s.len(),
                vt.len()
            ));
        }
        if let Some(i) = u.iter().position(|x| !x.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        if s.iter().any(|x| !x.is_finite() || *x < 0.0) || vt.iter().any(|x| !x.is_finite()) {
            return bad("singular values must be finite and non-negative".into());
        }
        if s.windows(2).any(|w| w[0] < w[1]) {
            return bad("singular values must be non-increasing".into());
        }
        let degenerate = degeneracy_flags(&s, rel_cutoff);
        for (i, _) in degenerate.iter().enumerate().filter(|(_, d)| **d) {
            for r in 0..rows {
                u[r * cols + i] = 0.0;
            }
        }
        Ok(Self {
            rows,
            cols,
            u,
            s,
            vt,
            degenerate,
            rel_cutoff,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    pub fn rel_cutoff(&self) -> f64 {
        self.rel_cutoff
    }

    /// Number of non-degenerate directions. They always form a prefix.
    pub fn rank(&self) -> usize {
        self.degenerate.iter().take_while(|d| !**d).count()
    }

    /// Left singular vectors, row-major `rows x cols`.
    pub fn u(&self) -> &[f32] {
        &self.u
    }

    #[inline]
    pub fn u_at(&self, token: usize, i: usize) -> f32 {
        self.u[token * self.cols + i]
    }

    /// Row `token` of `u`: that token's score in every direction.
    pub fn u_row(&self, token: usize) -> &[f32] {
        &self.u[token * self.cols..(token + 1) * self.cols]
    }

    pub fn u_column(&self, i: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.u_at(r, i)).collect()
    }

    /// Right singular vectors, row-major `cols x cols`.
    pub fn vt(&self) -> &[f64] {
        &self.vt
    }

    pub fn vt_row(&self, i: usize) -> &[f64] {
        &self.vt[i * self.cols..(i + 1) * self.cols]
    }

    /// Negate left column `i` and right row `i` together.
    pub fn flip_sign(&mut self, i: usize) {
        for r in 0..self.rows {
            let x = &mut self.u[r * self.cols + i];
            // adding +0 turns -0 into +0
            *x = -*x + 0.0;
        }
        for x in &mut self.vt[i * self.cols..(i + 1) * self.cols] {
            *x = -*x;
        }
    }

    /// Make the largest-magnitude entry of every non-degenerate `u` column
    /// positive (lowest index on ties). Degenerate directions are fixed by
    /// their `vt` row instead. Idempotent.
    pub fn canonicalize_signs(&mut self) {
        for i in 0..self.cols {
            let pivot = if self.degenerate[i] {
                argmax_abs(self.vt_row(i).iter().copied())
            } else {
                argmax_abs((0..self.rows).map(|r| self.u_at(r, i) as f64))
            };
            if pivot.is_some_and(|v| v < 0.0) {
                self.flip_sign(i);
            }
        }
    }

    /// `u · diag(s) · vt` in row-major `f64`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.cols;
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let urow = self.u_row(r);
            let orow = &mut out[r * d..(r + 1) * d];
            for (i, &uv) in urow.iter().enumerate() {
                if uv == 0.0 {
                    continue;
                }
                let a = uv as f64 * self.s[i];
                for (o, &v) in orow.iter_mut().zip(self.vt_row(i)) {
                    *o += a * v;
                }
            }
        }
        out
    }
}

/// Value of the first entry whose magnitude is strictly largest.
fn argmax_abs(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut best: Option<f64> = None;
    for v in values {
        if best.is_none_or(|b| v.abs() > b.abs()) {
            best = Some(v);
        }
    }
    best
}

fn degeneracy_flags(s: &[f64], rel_cutoff: f64) -> Vec<bool> {
    let lead = s.first().copied().unwrap_or(0.0);
    if lead <= 0.0 {
        return vec![true; s.len()];
    }
    s.iter().map(|&x| x < rel_cutoff * lead).collect()
}

/// Economy SVD of `w` through the Gram matrix, with canonical signs.
pub fn compute_svd(w: &WeightMatrix, rel_cutoff: f64) -> Result<SvdFactors, SpectralError> {
    let (rows, cols) = (w.rows(), w.cols());
    if rows < cols {
        return Err(SpectralError::RowsLessThanCols { rows, cols });
    }
    if let Some(i) = w.data().iter().position(|x| !x.is_finite()) {
        return Err(SpectralError::NonFinite(i));
    }

    let gram = gram_matrix(w);
    let max_iter = (30 * cols).max(1000);
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, max_iter)
        .ok_or(SpectralError::EigenFailed(cols))?;

    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let s: Vec<f64> = order
        .iter()
        .map(|&j| eig.eigenvalues[j].max(0.0).sqrt())
        .collect();
    // right singular vectors as columns of a d x d matrix, in sorted order
    let v = DMatrix::from_fn(cols, cols, |r, c| eig.eigenvectors[(r, order[c])]);
    let mut vt = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            vt[i * cols + j] = v[(j, i)];
        }
    }

    let degenerate = degeneracy_flags(&s, rel_cutoff);
    let inv_s: Vec<f64> = s
        .iter()
        .zip(&degenerate)
        .map(|(&x, &d)| if d { 0.0 } else { 1.0 / x })
        .collect();
    let vt_mat = v.transpose();

    let mut u = vec![0.0f32; rows * cols];
    u.par_chunks_mut(BLOCK_ROWS * cols)
        .zip(w.data().par_chunks(BLOCK_ROWS * cols))
        .for_each(|(u_block, w_block)| {
            let n = w_block.len() / cols;
            let x = block_as_columns(w_block, cols);
            // column r of `proj` holds row r's coordinates in the V basis
            let proj = &vt_mat * x;
            for r in 0..n {
                for i in 0..cols {
                    u_block[r * cols + i] = (proj[(i, r)] * inv_s[i]) as f32 + 0.0;
                }
            }
        });

    let mut f = SvdFactors {
        rows,
        cols,
        u,
        s,
        vt,
        degenerate,
        rel_cutoff,
    };
    f.canonicalize_signs();
    Ok(f)
}

/// Rows of a row-major block as the columns of a `cols x n` f64 matrix.
fn block_as_columns(block: &[f32], cols: usize) -> DMatrix<f64> {
    let n = block.len() / cols;
    DMatrix::from_iterator(cols, n, block.iter().map(|&x| x as f64))
}

/// `WᵀW` with f64 accumulation and a reduction order that depends only on
/// the matrix shape.
fn gram_matrix(w: &WeightMatrix) -> DMatrix<f64> {
    let cols = w.cols();
    let blocks: Vec<&[f32]> = w.data().chunks(BLOCK_ROWS * cols).collect();
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    for group in blocks.chunks(BLOCK_GROUP) {
        let partials: Vec<DMatrix<f64>> = group
            .par_iter()
            .map(|block| {
                let x = block_as_columns(block, cols);
                &x * x.transpose()
            })
            .collect();
        for p in partials {
            gram += p;
        }
    }
    // exact symmetry for the eigensolver
    for i in 0..cols {
        for j in 0..i {
            let m = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = m;
            gram[(j, i)] = m;
        }
    }
    gram
}

/// Top-k tokens of one left singular vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub vector_index: usize,
    pub singular_value: f64,
    pub token_ids: Vec<usize>,
    /// `u[token, i]`, descending.
    pub scores: Vec<f64>,
    /// `scores[j] / scores[0] * 100`.
    pub score_ratios: Vec<f64>,
    /// Filled in by [`crate::metrics::vcs`]; `None` when undefined.
    pub vcs: Option<f64>,
}

/// The `k` largest signed entries of `u[:, i]`, descending, ties broken by
/// ascending token ID.
pub fn top_k_tokens(f: &SvdFactors, i: usize, k: usize) -> Result<ClusterRecord, SpectralError> {
    if i >= f.cols {
        return Err(SpectralError::IndexOutOfRange {
            index: i,
            cols: f.cols,
        });
    }
    if f.degenerate[i] {
        return Err(SpectralError::DegenerateColumn(i));
    }
    if k == 0 || k > f.rows {
        return Err(SpectralError::InvalidK { k, rows: f.rows });
    }

    let mut scored: Vec<(f32, usize)> = (0..f.rows).map(|r| (f.u_at(r, i), r)).collect();
    let cmp = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);

    let scores: Vec<f64> = scored.iter().map(|&(s, _)| s as f64).collect();
    let lead = scores[0];
    let score_ratios = scores
        .iter()
        .map(|&s| if lead == 0.0 { 0.0 } else { s / lead * 100.0 })
        .collect();
    Ok(ClusterRecord {
        vector_index: i,
        singular_value: f.s[i],
        token_ids: scored.iter().map(|&(_, id)| id).collect(),
        scores,
        score_ratios,
        vcs: None,
    })
}

/// Shape of the singular-value decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayLabel {
    StepwiseClusters,
    CliffPlateau,
    GentleSlope,
    Unclassified,
}

impl DecayLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayLabel::StepwiseClusters => "stepwise-clusters",
            DecayLabel::CliffPlateau => "cliff-plateau",
            DecayLabel::GentleSlope => "gentle-slope",
            DecayLabel::Unclassified => "unclassified",
        }
    }
}

/// Ratio thresholds for [`classify_decay`], all as `S[i]/S[i+1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayThresholds {
    /// Minimum leading ratio for a cliff.
    pub cliff_ratio: f64,
    /// Maximum ratio anywhere after the cliff.
    pub plateau_max: f64,
    /// Minimum ratio that counts as a step between clusters.
    pub step_gap: f64,
    /// Maximum ratio anywhere for a gentle slope.
    pub gentle_max: f64,
}

impl Default for DecayThresholds {
    fn default() -> Self {
        Self {
            cliff_ratio: 4.0,
            plateau_max: 1.25,
            step_gap: 1.3,
            gentle_max: 2.2,
        }
    }
}

/// Label a spectrum from its consecutive log gaps `ln S[i] - ln S[i+1]`.
///
/// Rules are tried in order:
/// 1. cliff-plateau: first gap >= ln(cliff_ratio), every later gap <= ln(plateau_max);
/// 2. stepwise-clusters: two step gaps (>= ln(step_gap)) at indices `a < b`, both >= 1,
///    with `b - a >= 2`, i.e. a plateau of at least two values between them;
/// 3. gentle-slope: every gap <= ln(gentle_max);
/// 4. otherwise unclassified.
pub fn classify_decay(log_gaps: &[f64], t: &DecayThresholds) -> DecayLabel {
    let Some((&first, rest)) = log_gaps.split_first() else {
        return DecayLabel::Unclassified;
    };
    let rest_max = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if first >= t.cliff_ratio.ln() && rest_max <= t.plateau_max.ln() {
        return DecayLabel::CliffPlateau;
    }
    let steps: Vec<usize> = (1..log_gaps.len())
        .filter(|&i| log_gaps[i] >= t.step_gap.ln())
        .collect();
    if steps.windows(2).any(|w| w[1] - w[0] >= 2) {
        return DecayLabel::StepwiseClusters;
    }
    if log_gaps.iter().all(|&g| g <= t.gentle_max.ln()) {
        return DecayLabel::GentleSlope;
    }
    DecayLabel::Unclassified
}

/// Summary statistics of the leading singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub top_values: Vec<f64>,
    /// `S[i] / S[i+1]`.
    pub ratios: Vec<f64>,
    /// `ln S[i] - ln S[i+1]`.
    pub log_gaps: Vec<f64>,
    pub leading_ratio: f64,
    pub decay_label: DecayLabel,
}

impl SpectrumProfile {
    /// Profile a given list of positive, non-increasing singular values.
    pub fn from_values(values: &[f64], t: &DecayThresholds) -> Result<Self, SpectralError> {
        if values.len() < 3 {
            return Err(SpectralError::SpectrumLength {
                m: values.len(),
                max: values.len().max(3),
            });
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SpectralError::InvalidFactors(
                "spectrum values must be positive and finite".into(),
            ));
        }
        let ratios: Vec<f64> = values.windows(2).map(|w| w[0] / w[1]).collect();
        let log_gaps: Vec<f64> = values.windows(2).map(|w| w[0].ln() - w[1].ln()).collect();
        Ok(Self {
            top_values: values.to_vec(),
            leading_ratio: ratios[0],
            decay_label: classify_decay(&log_gaps, t),
            ratios,
            log_gaps,
        })
    }
}

/// Profile the first `m` singular values of `f`.
pub fn spectrum_profile(
    f: &SvdFactors,
    m: usize,
    t: &DecayThresholds,
) -> Result<SpectrumProfile, SpectralError> {
    let rank = f.rank();
    if m < 3 || m > rank {
        return Err(SpectralError::SpectrumLength { m, max: rank });
    }
    SpectrumProfile::from_values(&f.s[..m], t)
}
