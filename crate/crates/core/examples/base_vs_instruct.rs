// Diff two checkpoints sharing a vocabulary: a base matrix and a lightly
// fine-tuned copy, aligned by index and by similarity.

use std::error::Error;

use lmhead_audit::compare::{diff_by_index, diff_by_similarity};
use lmhead_audit::report::{audit_matrix, render_diff_markdown, AuditConfig};
use lmhead_audit::synthetic::{demo_matrix, gaussian, numbered_vocabulary};
use lmhead_audit::WeightMatrix;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let base = demo_matrix(7).with_model_label("base");
    let noise = gaussian(base.rows(), base.cols(), 8);
    let tuned: Vec<f32> = base
        .data()
        .iter()
        .zip(noise.data())
        .map(|(w, n)| w + 0.05 * n)
        .collect();
    let tuned = WeightMatrix::from_rows(base.rows(), base.cols(), tuned)?.with_model_label("tuned");

    let vocab = numbered_vocabulary(base.rows());
    let config = AuditConfig {
        n_vectors: 6,
        k_tokens: 10,
        spectrum_m: 8,
        ..AuditConfig::default()
    };
    let a = audit_matrix(&base, &vocab, &config)?;
    let b = audit_matrix(&tuned, &vocab, &config)?;

    let by_index = diff_by_index(&a.result, &b.result, 6, 10)?.with_alignment(&a.factors, &b.factors)?;
    print!("{}", render_diff_markdown(&by_index));
    println!();
    let by_similarity = diff_by_similarity(&a.factors, &b.factors, &a.result, &b.result, 6, 0.1)?;
    print!("{}", render_diff_markdown(&by_similarity));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
