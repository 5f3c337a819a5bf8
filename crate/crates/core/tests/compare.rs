mod common;

use common::*;
use lmhead_audit::compare::{diff_by_index, diff_by_similarity, jaccard, AlignmentMode, CompareError};
use lmhead_audit::report::{audit_matrix, Audit, AuditConfig};
use lmhead_audit::synthetic::{demo_matrix, gaussian, numbered_vocabulary};
use proptest::prelude::*;

fn config(n: usize, k: usize, m: usize) -> AuditConfig {
    AuditConfig {
        n_vectors: n,
        k_tokens: k,
        spectrum_m: m,
        ..AuditConfig::default()
    }
}

fn demo_audit(seed: u64) -> Audit {
    audit_matrix(&demo_matrix(seed), &numbered_vocabulary(100), &config(8, 10, 8)).unwrap()
}

#[test]
fn identical_audits_diff_to_zero() {
    let a = demo_audit(1);
    let d = diff_by_index(&a.result, &a.result, 8, 10)
        .unwrap()
        .with_alignment(&a.factors, &a.factors)
        .unwrap();
    assert_eq!(d.alignment_mode, AlignmentMode::ByIndex);
    assert_eq!(d.max_abs_vcs_delta, Some(0.0));
    for p in &d.pairs {
        assert_eq!(p.index_a, p.index_b);
        assert_eq!(p.vcs_delta, Some(0.0));
        assert_eq!(p.jaccard, 1.0);
        assert!((p.alignment_cosine.unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn similarity_identity_matching() {
    let a = demo_audit(2);
    let d = diff_by_similarity(&a.factors, &a.factors, &a.result, &a.result, 8, 0.1).unwrap();
    assert_eq!(d.pairs.len(), 8);
    assert!(d.unmatched_a.is_empty() && d.unmatched_b.is_empty());
    for p in &d.pairs {
        assert_eq!(p.index_a, p.index_b);
        assert!((p.alignment_cosine.unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn similarity_recovers_column_swap() {
    let a = demo_audit(3);
    let fb = swap_columns(&a.factors, 0, 1);
    let d = diff_by_similarity(&a.factors, &fb, &a.result, &a.result, 8, 0.1).unwrap();
    let pairs: Vec<(usize, usize)> = d.pairs.iter().map(|p| (p.index_a, p.index_b)).collect();
    assert_eq!(&pairs[..2], &[(0, 1), (1, 0)]);
    for p in &d.pairs {
        assert!((p.alignment_cosine.unwrap() - 1.0).abs() < 1e-6);
        if p.index_a >= 2 {
            assert_eq!(p.index_a, p.index_b);
        }
    }
}

#[test]
fn similarity_is_symmetric_up_to_transpose() {
    let a = audit_matrix(&gaussian(300, 8, 30), &numbered_vocabulary(300), &config(8, 5, 8)).unwrap();
    let b = audit_matrix(&gaussian(300, 8, 31), &numbered_vocabulary(300), &config(8, 5, 8)).unwrap();
    let ab = diff_by_similarity(&a.factors, &b.factors, &a.result, &b.result, 8, 0.0).unwrap();
    let ba = diff_by_similarity(&b.factors, &a.factors, &b.result, &a.result, 8, 0.0).unwrap();
    let mut fwd: Vec<(usize, usize)> = ab.pairs.iter().map(|p| (p.index_a, p.index_b)).collect();
    let mut rev: Vec<(usize, usize)> = ba.pairs.iter().map(|p| (p.index_b, p.index_a)).collect();
    fwd.sort_unstable();
    rev.sort_unstable();
    assert_eq!(fwd, rev);
}

#[test]
fn random_factors_align_weakly() {
    let mut means = Vec::new();
    for seed in 0..10 {
        let a = audit_matrix(&gaussian(1000, 8, 100 + seed), &numbered_vocabulary(1000), &config(8, 5, 8)).unwrap();
        let b = audit_matrix(&gaussian(1000, 8, 200 + seed), &numbered_vocabulary(1000), &config(8, 5, 8)).unwrap();
        let d = diff_by_similarity(&a.factors, &b.factors, &a.result, &b.result, 8, 0.0).unwrap();
        means.push(d.mean_alignment_cosine().unwrap());
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    assert!(mean < 0.2, "{means:?}");
}

#[test]
fn mismatched_inputs_are_rejected() {
    let a = demo_audit(4);
    let b = audit_matrix(&gaussian(120, 8, 5), &numbered_vocabulary(120), &config(8, 10, 8)).unwrap();
    assert!(matches!(
        diff_by_index(&a.result, &b.result, 8, 10),
        Err(CompareError::VocabMismatch { a: 100, b: 120 })
    ));
    assert!(matches!(
        diff_by_similarity(&a.factors, &b.factors, &a.result, &a.result, 8, 0.1),
        Err(CompareError::DimensionMismatch { .. })
    ));
    assert!(matches!(
        diff_by_index(&a.result, &a.result, 8, 7),
        Err(CompareError::ParameterMismatch(_))
    ));
    assert!(matches!(
        diff_by_index(&a.result, &a.result, 9, 10),
        Err(CompareError::ParameterMismatch(_))
    ));
}

proptest! {
    #[test]
    fn jaccard_ignores_order(mut a in prop::collection::vec(0usize..30, 0..15), mut b in prop::collection::vec(0usize..30, 0..15), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let before = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&before));
        let mut r = rng(seed);
        a.shuffle(&mut r);
        b.shuffle(&mut r);
        prop_assert_eq!(before, jaccard(&a, &b));
        prop_assert_eq!(before, jaccard(&b, &a));
    }
}
