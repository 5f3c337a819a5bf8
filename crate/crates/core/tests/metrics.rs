mod common;

use common::*;
use lmhead_audit::metrics::{glitch_candidates, vcs, vcs_summary, wps_table, MetricsError, DEFAULT_VCS_EPS};
use lmhead_audit::spectral::{compute_svd, ClusterRecord};
use lmhead_audit::synthetic::{antipodal_blocks, gaussian, numbered_vocabulary, planted_orphans};
use lmhead_audit::WeightMatrix;
use proptest::prelude::*;
use rand::seq::{index, SliceRandom};
use rand::Rng;

fn cluster(ids: Vec<usize>) -> ClusterRecord {
    let k = ids.len();
    ClusterRecord {
        vector_index: 0,
        singular_value: 1.0,
        token_ids: ids,
        scores: vec![1.0; k],
        score_ratios: vec![100.0; k],
        vcs: None,
    }
}

#[test]
fn vcs_matches_brute_force_on_random_rows() {
    let mut r = rng(21);
    for _ in 0..20 {
        let data = random_data(&mut r, 6, 4);
        let w = WeightMatrix::from_rows(6, 4, data.clone()).unwrap();
        let ids: Vec<usize> = (0..6).collect();
        let got = vcs(&w, &cluster(ids.clone()), DEFAULT_VCS_EPS).unwrap().unwrap();
        let want = brute_vcs(&data, 4, &ids, DEFAULT_VCS_EPS).unwrap();
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn vcs_trivial_cases() {
    let w = WeightMatrix::from_rows(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(vcs(&w, &cluster(vec![0, 1, 2]), 1e-12).unwrap(), Some(0.0));
    let w = WeightMatrix::from_rows(3, 2, vec![0.3, -0.4, 0.3, -0.4, 0.3, -0.4]).unwrap();
    assert!((vcs(&w, &cluster(vec![0, 1, 2]), 1e-12).unwrap().unwrap() - 1.0).abs() < 1e-7);
    assert!(matches!(
        vcs(&w, &cluster(vec![0, 3]), 1e-12),
        Err(MetricsError::TokenOutOfRange { id: 3, rows: 3 })
    ));
}

#[test]
fn vcs_skips_zero_rows() {
    let w = WeightMatrix::from_rows(3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(vcs(&w, &cluster(vec![0, 1, 2]), 1e-12).unwrap(), Some(0.0));
    assert_eq!(vcs(&w, &cluster(vec![0, 1]), 1e-12).unwrap(), None);
}

#[test]
fn identity_summary() {
    let mut data = vec![0.0f32; 16];
    for i in 0..4 {
        data[i * 4 + i] = 1.0;
    }
    let w = WeightMatrix::from_rows(4, 4, data).unwrap();
    let f = compute_svd(&w, 1e-6).unwrap();
    let s = vcs_summary(&w, &f, 4, 2).unwrap();
    assert!(s.per_vector.iter().all(|(_, v)| v.unwrap().abs() < 1e-12));

    let t = wps_table(&f, 2.0);
    assert!(t.wps.iter().all(|&x| (x - 1.0).abs() < 1e-6));
    assert!(t.sigma < 1e-6);
    assert_eq!(t.threshold, t.mu - 2.0 * t.sigma);
    assert_eq!(glitch_candidates(&t, &numbered_vocabulary(4)).count, 0);
}

#[test]
fn antipodal_blocks_leading_vcs() {
    for seed in 0..5 {
        let w = antipodal_blocks(200, 16, 0.05, seed);
        let f = compute_svd(&w, 1e-6).unwrap();
        let s = vcs_summary(&w, &f, 1, 20).unwrap();
        let v = s.per_vector[0].1.unwrap();
        assert!(v >= 0.95, "seed {seed}: {v}");
    }
}

#[test]
fn wps_matches_oracle() {
    let w = gaussian(100, 8, 22);
    let f = compute_svd(&w, 1e-6).unwrap();
    let t = wps_table(&f, 2.0);
    let o = oracle_svd(w.data(), 100, 8);
    for (a, b) in t.wps.iter().zip(oracle_wps(&o, 8)) {
        assert!(rel_close(*a, b, 1e-5), "{a} vs {b}");
    }
}

#[test]
fn zero_row_has_zero_wps() {
    let mut w = gaussian(30, 4, 23).data().to_vec();
    w[5 * 4..6 * 4].fill(0.0);
    let w = WeightMatrix::from_rows(30, 4, w).unwrap();
    let t = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
    assert_eq!(t.wps[5], 0.0);
}

#[test]
fn planted_orphans_are_exactly_the_candidates() {
    for seed in 0..5 {
        let (w, orphans) = planted_orphans(90, 10, 8, 1e-6, seed);
        let t = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
        let report = glitch_candidates(&t, &numbered_vocabulary(100));
        let mut got: Vec<usize> = report.candidates.iter().map(|c| c.id).collect();
        got.sort_unstable();
        assert_eq!(got, orphans, "seed {seed}");
        assert!((report.fraction - 0.1).abs() < 1e-12);
    }
}

#[test]
fn gaussian_candidate_fraction_band() {
    for seed in 0..5 {
        let w = gaussian(2000, 16, seed);
        let t = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
        let frac = glitch_candidates(&t, &numbered_vocabulary(2000)).fraction;
        assert!((0.005..=0.10).contains(&frac), "seed {seed}: {frac}");
    }
}

#[test]
fn candidates_are_sorted_and_rendered() {
    let (w, _) = planted_orphans(45, 5, 6, 1e-6, 9);
    let t = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
    let report = glitch_candidates(&t, &numbered_vocabulary(48));
    for c in &report.candidates {
        assert!(c.wps < t.threshold);
        let want = if c.id < 48 { format!("t{}", c.id) } else { format!("<unmapped:{}>", c.id) };
        assert_eq!(c.token, want);
    }
    for p in report.candidates.windows(2) {
        assert!(p[0].wps < p[1].wps || (p[0].wps == p[1].wps && p[0].id < p[1].id));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vcs_brute_force_agreement(seed in any::<u64>(), rows in 2usize..40, cols in 1usize..8, k in 2usize..12) {
        let mut r = rng(seed);
        let data = random_data(&mut r, rows, cols);
        let w = WeightMatrix::from_rows(rows, cols, data.clone()).unwrap();
        let ids = index::sample(&mut r, rows, k.min(rows)).into_vec();
        let got = vcs(&w, &cluster(ids.clone()), DEFAULT_VCS_EPS).unwrap();
        let want = brute_vcs(&data, cols, &ids, DEFAULT_VCS_EPS);
        match (got, want) {
            (Some(g), Some(b)) => {
                prop_assert!((g - b).abs() < 1e-6);
                prop_assert!((-1.0..=1.0).contains(&g));
            }
            (g, b) => prop_assert_eq!(g, b),
        }
    }

    #[test]
    fn vcs_ignores_positive_row_scaling(seed in any::<u64>(), k in 2usize..10) {
        let mut r = rng(seed);
        let data = random_data(&mut r, 20, 5);
        let ids = index::sample(&mut r, 20, k).into_vec();
        let mut scaled = data.clone();
        for &id in &ids {
            let c: f32 = r.random_range(0.01..100.0);
            scaled[id * 5..(id + 1) * 5].iter_mut().for_each(|x| *x *= c);
        }
        let a = vcs(&WeightMatrix::from_rows(20, 5, data).unwrap(), &cluster(ids.clone()), 1e-12).unwrap().unwrap();
        let b = vcs(&WeightMatrix::from_rows(20, 5, scaled).unwrap(), &cluster(ids), 1e-12).unwrap().unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn wps_scale_equivariance(seed in any::<u64>(), c in 0.1f32..10.0) {
        let w = gaussian(80, 6, seed);
        let scaled = WeightMatrix::from_rows(80, 6, w.data().iter().map(|x| x * c).collect()).unwrap();
        let a = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
        let b = wps_table(&compute_svd(&scaled, 1e-6).unwrap(), 2.0);
        let c = c as f64;
        for (x, y) in a.wps.iter().zip(&b.wps) {
            prop_assert!(rel_close(x * c, *y, 1e-5));
        }
        prop_assert!(rel_close(a.mu * c, b.mu, 1e-5));
        prop_assert!(rel_close(a.sigma * c, b.sigma, 1e-5));
        prop_assert!(rel_close(a.threshold * c, b.threshold, 1e-5));
        let vocab = numbered_vocabulary(80);
        let mut ca: Vec<usize> = glitch_candidates(&a, &vocab).candidates.iter().map(|g| g.id).collect();
        let mut cb: Vec<usize> = glitch_candidates(&b, &vocab).candidates.iter().map(|g| g.id).collect();
        ca.sort_unstable();
        cb.sort_unstable();
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn wps_permutation_equivariance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = gaussian(60, 5, seed);
        let mut perm: Vec<usize> = (0..60).collect();
        perm.shuffle(&mut r);
        let permuted: Vec<f32> = perm.iter().flat_map(|&p| w.row(p).to_vec()).collect();
        let a = wps_table(&compute_svd(&w, 1e-6).unwrap(), 2.0);
        let b = wps_table(&compute_svd(&WeightMatrix::from_rows(60, 5, permuted).unwrap(), 1e-6).unwrap(), 2.0);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!(rel_close(b.wps[new], a.wps[old], 1e-5));
        }
    }
}
