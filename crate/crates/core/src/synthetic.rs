//! Seeded synthetic weight matrices with known structure, for demos and
//! tests. Every generator is deterministic in its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor_io::WeightMatrix;
use crate::vocab::Vocabulary;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>, label: &str) -> WeightMatrix {
    WeightMatrix::from_rows(rows, cols, data.into_iter().map(|x| x as f32).collect())
        .expect("generated data is finite and well-shaped")
        .with_model_label(label)
}

/// i.i.d. standard normal entries.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
    let mut r = rng(seed);
    matrix(rows, cols, gaussian_vec(&mut r, rows * cols), "gaussian")
}

/// Unit-norm rows scattered around a shared direction, plus `orphans` rows
/// of norm `orphan_norm` pointing in random directions. Returns the matrix
/// and the sorted orphan row indices.
pub fn planted_orphans(
    coherent: usize,
    orphans: usize,
    cols: usize,
    orphan_norm: f64,
    seed: u64,
) -> (WeightMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let rows = coherent + orphans;
    let mut ids: Vec<usize> = (0..rows).collect();
    ids.shuffle(&mut r);
    let mut orphan_ids: Vec<usize> = ids[..orphans].to_vec();
    orphan_ids.sort_unstable();

    let centre = normalized(gaussian_vec(&mut r, cols));
    let mut data = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let noise = gaussian_vec(&mut r, cols);
        if orphan_ids.binary_search(&row).is_ok() {
            data.extend(normalized(noise).into_iter().map(|x| x * orphan_norm));
        } else {
            let v: Vec<f64> = centre.iter().zip(&noise).map(|(c, n)| c + 0.7 * n).collect();
            data.extend(normalized(v));
        }
    }
    (matrix(rows, cols, data, "planted-orphans"), orphan_ids)
}

/// Rows near `+e` (first half) and `-e` (second half) for a random unit
/// vector `e`, perturbed by `noise`-scaled Gaussian jitter.
pub fn antipodal_blocks(rows: usize, cols: usize, noise: f64, seed: u64) -> WeightMatrix {
    let mut r = rng(seed);
    let e = normalized(gaussian_vec(&mut r, cols));
    let mut data = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let sign = if row < rows / 2 { 1.0 } else { -1.0 };
        let jitter = gaussian_vec(&mut r, cols);
        data.extend(e.iter().zip(&jitter).map(|(x, j)| sign * x + noise * j));
    }
    matrix(rows, cols, data, "antipodal-blocks")
}

/// Rows grouped into clusters along fixed random directions with decreasing
/// scales, so singular values separate cleanly, followed by `orphans`
/// near-zero rows at the end of the vocabulary.
///
/// `cluster_sizes[c]` rows lie near direction `c` with norm about
/// `scales[c]`.
pub fn planted_clusters(
    cluster_sizes: &[usize],
    scales: &[f64],
    cols: usize,
    orphans: usize,
    seed: u64,
) -> WeightMatrix {
    assert_eq!(cluster_sizes.len(), scales.len());
    let mut r = rng(seed);
    let dirs: Vec<Vec<f64>> = (0..cluster_sizes.len())
        .map(|_| normalized(gaussian_vec(&mut r, cols)))
        .collect();
    let rows = cluster_sizes.iter().sum::<usize>() + orphans;
    let mut data = Vec::with_capacity(rows * cols);
    for ((&size, &scale), dir) in cluster_sizes.iter().zip(scales).zip(&dirs) {
        for _ in 0..size {
            let jitter = gaussian_vec(&mut r, cols);
            let strength = 0.8 + 0.4 * r.random::<f64>();
            data.extend(
                dir.iter()
                    .zip(&jitter)
                    .map(|(d, j)| scale * (strength * d + 0.15 * j)),
            );
        }
    }
    for _ in 0..orphans {
        data.extend(normalized(gaussian_vec(&mut r, cols)).into_iter().map(|x| x * 1e-4));
    }
    matrix(rows, cols, data, "planted-clusters")
}

/// The 100 x 8 matrix used by the bundled audit demos: four clusters of
/// 24, 24, 21 and 21 rows plus 10 near-zero rows.
pub fn demo_matrix(seed: u64) -> WeightMatrix {
    planted_clusters(&[24, 24, 21, 21], &[4.0, 3.0, 2.0, 1.5], 8, 10, seed)
}

/// Placeholder token strings `t0`, `t1`, ... for synthetic matrices.
pub fn numbered_vocabulary(size: usize) -> Vocabulary {
    Vocabulary::new((0..size).map(|i| format!("t{i}")).collect())
}
