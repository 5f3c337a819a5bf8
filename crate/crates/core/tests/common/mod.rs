//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's numerics: the SVD is a one-sided
//! Jacobi iteration in plain f64, half-precision decoding works on raw bits,
//! and the checkpoint writer builds the container byte by byte.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lmhead_audit::spectral::SvdFactors;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major `rows x cols` matrix of standard normal entries, as f32.
pub fn random_data(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f32> {
    (0..rows * cols)
        .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
        .collect()
}

/// Dense SVD of a row-major matrix, `rows >= cols`.
pub struct OracleSvd {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// Row-major `cols x cols`; row `i` is the i-th right singular vector.
    pub vt: Vec<f64>,
}

impl OracleSvd {
    pub fn u_at(&self, r: usize, i: usize) -> f64 {
        self.u[r * self.cols + i]
    }
}

/// One-sided Jacobi SVD. Columns are rotated pairwise until mutually
/// orthogonal; their norms are then the singular values.
pub fn oracle_svd(data: &[f32], rows: usize, cols: usize) -> OracleSvd {
    assert!(rows >= cols);
    // column-major working copies
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| data[r * cols + c] as f64).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    for _sweep in 0..200 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    let (lo, hi) = m.split_at_mut(q);
                    let (xp, xq) = (&mut lo[p], &mut hi[0]);
                    for (x, y) in xp.iter_mut().zip(xq.iter_mut()) {
                        let (nx, ny) = (c * *x - s * *y, s * *x + c * *y);
                        *x = nx;
                        *y = ny;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let mut u = vec![0.0; rows * cols];
    let mut s = vec![0.0; cols];
    let mut vt = vec![0.0; cols * cols];
    for (i, &src) in order.iter().enumerate() {
        s[i] = norms[src];
        let mut col: Vec<f64> = if norms[src] > 0.0 {
            a[src].iter().map(|x| x / norms[src]).collect()
        } else {
            vec![0.0; rows]
        };
        let mut vrow = v[src].clone();
        // largest |entry| positive, first index on ties
        let reference = if norms[src] > 0.0 { &col } else { &vrow };
        let mut best = 0;
        for (j, x) in reference.iter().enumerate() {
            if x.abs() > reference[best].abs() {
                best = j;
            }
        }
        if reference[best] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
            vrow.iter_mut().for_each(|x| *x = -*x);
        }
        for r in 0..rows {
            u[r * cols + i] = col[r];
        }
        vt[i * cols..(i + 1) * cols].copy_from_slice(&vrow);
    }
    OracleSvd { rows, cols, u, s, vt }
}

/// `Σ_k s[k] |u[v, k]|` over the first `rank` directions.
pub fn oracle_wps(o: &OracleSvd, rank: usize) -> Vec<f64> {
    (0..o.rows)
        .map(|v| (0..rank).map(|k| o.s[k] * o.u_at(v, k).abs()).sum())
        .collect()
}

/// Mean pairwise cosine over the listed rows, skipping rows of norm < eps.
pub fn brute_vcs(data: &[f32], cols: usize, ids: &[usize], eps: f64) -> Option<f64> {
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| data[id * cols..(id + 1) * cols].iter().map(|&x| x as f64).collect::<Vec<_>>())
        .filter(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt() >= eps)
        .collect();
    let m = rows.len();
    if m < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let dot: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
            let na = rows[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rows[b].iter().map(|x| x * x).sum::<f64>().sqrt();
            sum += dot / (na * nb);
            count += 1;
        }
    }
    Some(sum / count as f64)
}

/// IEEE-754 binary16 to f32 from the bit fields.
pub fn f16_bits_to_f32(bits: u16) -> f32 {
    let sign = if bits & 0x8000 != 0 { -1.0f64 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    let mag = match exp {
        0 => frac * 2f64.powi(-24),
        31 if frac == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        e => (1.0 + frac / 1024.0) * 2f64.powi(e - 15),
    };
    (sign * mag) as f32
}

/// bfloat16 is the upper half of an f32.
pub fn bf16_bits_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

/// One tensor for [`write_container`].
pub struct RawTensor<'a> {
    pub name: &'a str,
    pub dtype: &'a str,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Checkpoint container built by hand: u64 LE header length, JSON header,
/// then the payloads back to back in the given order.
pub fn write_container(path: &Path, tensors: &[RawTensor]) {
    let mut header = String::from("{");
    let mut offset = 0usize;
    for (n, t) in tensors.iter().enumerate() {
        if n > 0 {
            header.push(',');
        }
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "\"{}\":{{\"dtype\":\"{}\",\"shape\":[{}],\"data_offsets\":[{},{}]}}",
            t.name,
            t.dtype,
            shape.join(","),
            offset,
            offset + t.bytes.len()
        ));
        offset += t.bytes.len();
    }
    header.push('}');
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(header.as_bytes());
    for t in tensors {
        out.extend_from_slice(&t.bytes);
    }
    std::fs::write(path, out).unwrap();
}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn u16_bytes(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn frobenius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Invert the token escaping: `⟨empty⟩` and `⟨U+XXXX⟩` back to text.
pub fn unescape_token(s: &str) -> String {
    if s == "\u{27E8}empty\u{27E9}" {
        return String::new();
    }
    let mut out = String::new();
    let mut rest = s;
    while let Some(pos) = rest.find('\u{27E8}') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + '\u{27E8}'.len_utf8()..];
        let end = tail.find('\u{27E9}').expect("unterminated escape");
        let hex = tail[..end].strip_prefix("U+").expect("escape without U+");
        out.push(char::from_u32(u32::from_str_radix(hex, 16).unwrap()).unwrap());
        rest = &tail[end + '\u{27E9}'.len_utf8()..];
    }
    out.push_str(rest);
    out
}

/// `f` with u columns (and vt rows) `a` and `b` exchanged. Singular values
/// stay in place so the factors remain well-formed.
pub fn swap_columns(f: &SvdFactors, a: usize, b: usize) -> SvdFactors {
    let (rows, cols) = (f.rows(), f.cols());
    let mut u = f.u().to_vec();
    for r in 0..rows {
        u.swap(r * cols + a, r * cols + b);
    }
    let mut vt = f.vt().to_vec();
    for c in 0..cols {
        vt.swap(a * cols + c, b * cols + c);
    }
    SvdFactors::from_parts(rows, cols, u, f.singular_values().to_vec(), vt, f.rel_cutoff()).unwrap()
}
