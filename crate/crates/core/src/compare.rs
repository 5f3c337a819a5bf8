//! Structural diff of two audits over a shared vocabulary, for example a
//! base checkpoint against its instruction-tuned variant.
//!
//! Directions are paired either by index (`U_a[:, i]` with `U_b[:, i]`) or
//! by greedy similarity matching of the left singular vectors, which is
//! robust to directions swapping places when singular values are close.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::AuditResult;
use crate::spectral::SvdFactors;

/// Pairs whose `|cos|` falls below this are left unmatched by default.
pub const DEFAULT_MIN_ALIGNMENT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("vocabulary sizes differ: {a} vs {b}")]
    VocabMismatch { a: usize, b: usize },
    #[error("audit parameters differ or do not cover the request: {0}")]
    ParameterMismatch(String),
    #[error("factor shapes differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    ByIndex,
    BySimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffPair {
    pub index_a: usize,
    pub index_b: usize,
    /// `|cos|` between the matched left singular vectors, when factors were
    /// available.
    pub alignment_cosine: Option<f64>,
    pub vcs_a: Option<f64>,
    pub vcs_b: Option<f64>,
    /// `vcs_b - vcs_a`.
    pub vcs_delta: Option<f64>,
    /// Jaccard overlap of the two top-k token-ID sets.
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub model_a: String,
    pub model_b: String,
    pub alignment_mode: AlignmentMode,
    pub pairs: Vec<DiffPair>,
    /// Directions of `a` (resp. `b`) left without a partner.
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    pub max_abs_vcs_delta: Option<f64>,
}

impl DiffReport {
    fn new(a: &AuditResult, b: &AuditResult, mode: AlignmentMode, pairs: Vec<DiffPair>) -> Self {
        let max_abs_vcs_delta = pairs
            .iter()
            .filter_map(|p| p.vcs_delta.map(f64::abs))
            .reduce(f64::max);
        Self {
            model_a: a.model_label.clone(),
            model_b: b.model_label.clone(),
            alignment_mode: mode,
            pairs,
            unmatched_a: Vec::new(),
            unmatched_b: Vec::new(),
            max_abs_vcs_delta,
        }
    }

    /// Fill `alignment_cosine` for every pair from the two factor sets.
    pub fn with_alignment(mut self, fa: &SvdFactors, fb: &SvdFactors) -> Result<Self, CompareError> {
        check_factor_shapes(fa, fb)?;
        for p in &mut self.pairs {
            p.alignment_cosine = Some(column_abs_cos(fa, p.index_a, fb, p.index_b));
        }
        Ok(self)
    }

    pub fn mean_alignment_cosine(&self) -> Option<f64> {
        let vals: Vec<f64> = self.pairs.iter().filter_map(|p| p.alignment_cosine).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Jaccard index of two token-ID lists treated as sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable();
    sa.dedup();
    sb.sort_unstable();
    sb.dedup();
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < sa.len() && j < sb.len() {
        match sa[i].cmp(&sb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn check_inputs(a: &AuditResult, b: &AuditResult, n: usize) -> Result<(), CompareError> {
    let (va, vb) = (a.wps_stats.vocab_size, b.wps_stats.vocab_size);
    if va != vb {
        return Err(CompareError::VocabMismatch { a: va, b: vb });
    }
    if a.config.k_tokens != b.config.k_tokens {
        return Err(CompareError::ParameterMismatch(format!(
            "k = {} vs {}",
            a.config.k_tokens, b.config.k_tokens
        )));
    }
    let avail = a.clusters.len().min(b.clusters.len());
    if n > avail {
        return Err(CompareError::ParameterMismatch(format!(
            "n = {n} requested but only {avail} clusters available"
        )));
    }
    Ok(())
}

fn pair(a: &AuditResult, i: usize, b: &AuditResult, j: usize, cos: Option<f64>) -> DiffPair {
    let (ca, cb) = (&a.clusters[i].record, &b.clusters[j].record);
    DiffPair {
        index_a: i,
        index_b: j,
        alignment_cosine: cos,
        vcs_a: ca.vcs,
        vcs_b: cb.vcs,
        vcs_delta: ca.vcs.zip(cb.vcs).map(|(x, y)| y - x),
        jaccard: jaccard(&ca.token_ids, &cb.token_ids),
    }
}

/// Pair direction `i` of `a` with direction `i` of `b` for `i < n`.
///
/// Both audits must share vocabulary size and `k`; `n` and `k` must match
/// what the audits were run with.
pub fn diff_by_index(
    a: &AuditResult,
    b: &AuditResult,
    n: usize,
    k: usize,
) -> Result<DiffReport, CompareError> {
    check_inputs(a, b, n)?;
    if k != a.config.k_tokens {
        return Err(CompareError::ParameterMismatch(format!(
            "k = {k} requested, audits used {}",
            a.config.k_tokens
        )));
    }
    if a.config.n_vectors != b.config.n_vectors {
        return Err(CompareError::ParameterMismatch(format!(
            "n = {} vs {}",
            a.config.n_vectors, b.config.n_vectors
        )));
    }
    let pairs = (0..n).map(|i| pair(a, i, b, i, None)).collect();
    Ok(DiffReport::new(a, b, AlignmentMode::ByIndex, pairs))
}

fn check_factor_shapes(fa: &SvdFactors, fb: &SvdFactors) -> Result<(), CompareError> {
    if (fa.rows(), fa.cols()) != (fb.rows(), fb.cols()) {
        return Err(CompareError::DimensionMismatch {
            a: (fa.rows(), fa.cols()),
            b: (fb.rows(), fb.cols()),
        });
    }
    Ok(())
}

/// `|cos|` between `u_a[:, i]` and `u_b[:, j]`; zero columns give 0.
pub fn column_abs_cos(fa: &SvdFactors, i: usize, fb: &SvdFactors, j: usize) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for r in 0..fa.rows() {
        let x = fa.u_at(r, i) as f64;
        let y = fb.u_at(r, j) as f64;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).abs().min(1.0)
}

/// Greedy matching of the first `n` left singular vectors of each side.
///
/// Repeatedly takes the unmatched pair with the largest `|cos|` (ties by
/// `(i, j)`), stopping once the best remaining pair drops below
/// `min_alignment`. Pairs are reported in order of `index_a`.
pub fn diff_by_similarity(
    fa: &SvdFactors,
    fb: &SvdFactors,
    a: &AuditResult,
    b: &AuditResult,
    n: usize,
    min_alignment: f64,
) -> Result<DiffReport, CompareError> {
    check_factor_shapes(fa, fb)?;
    check_inputs(a, b, n)?;
    let rank = fa.rank().min(fb.rank());
    if n > rank {
        return Err(CompareError::ParameterMismatch(format!(
            "n = {n} exceeds non-degenerate rank {rank}"
        )));
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            candidates.push((column_abs_cos(fa, i, fb, j), i, j));
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut used_a = vec![false; n];
    let mut used_b = vec![false; n];
    let mut matched = Vec::new();
    for (cos, i, j) in candidates {
        if cos < min_alignment {
            break;
        }
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        matched.push((i, j, cos));
    }
    matched.sort_by_key(|&(i, _, _)| i);

    let pairs = matched
        .into_iter()
        .map(|(i, j, cos)| pair(a, i, b, j, Some(cos)))
        .collect();
    let mut report = DiffReport::new(a, b, AlignmentMode::BySimilarity, pairs);
    report.unmatched_a = (0..n).filter(|&i| !used_a[i]).collect();
    report.unmatched_b = (0..n).filter(|&j| !used_b[j]).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[1, 2, 3], &[3, 2, 1]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
        assert!((jaccard(&[1, 2, 3], &[2, 3, 4]) - 0.5).abs() < 1e-15);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }

    #[test]
    fn abs_cos_of_flipped_column_is_one() {
        let f = SvdFactors::from_parts(3, 1, vec![0.6, 0.0, 0.8], vec![1.0], vec![1.0], 1e-6).unwrap();
        let mut g = f.clone();
        g.flip_sign(0);
        assert!((column_abs_cos(&f, 0, &g, 0) - 1.0).abs() < 1e-7);
    }
}
