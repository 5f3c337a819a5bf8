// Economy SVD of a planted-cluster matrix and the top-k token cluster of
// each leading direction, with its coherence score.

use std::error::Error;

use lmhead_audit::metrics::{vcs_clusters, VcsSummary};
use lmhead_audit::spectral::compute_svd;
use lmhead_audit::synthetic::demo_matrix;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // four clusters of 24, 24, 21 and 21 rows, then 10 near-zero rows
    let w = demo_matrix(0);
    let f = compute_svd(&w, 1e-6)?;
    println!("{} x {}, rank {}", f.rows(), f.cols(), f.rank());
    println!("singular values: {:.3?}", f.singular_values());

    let clusters = vcs_clusters(&w, &f, 4, 8)?;
    for c in &clusters {
        let ids: Vec<String> = c
            .token_ids
            .iter()
            .zip(&c.score_ratios)
            .map(|(id, r)| format!("{id}({r:.0}%)"))
            .collect();
        let vcs = c.vcs.map_or("n/a".into(), |v| format!("{v:.3}"));
        println!("U[:,{}] S={:.3} VCS={vcs}  {}", c.vector_index, c.singular_value, ids.join(" "));
    }

    let summary = VcsSummary::from_clusters(&clusters);
    println!(
        "mean VCS {:.3}, max {:.3} at i* = {}",
        summary.mean_vcs.unwrap_or(f64::NAN),
        summary.max_vcs.unwrap_or(f64::NAN),
        summary.argmax_index.unwrap_or(0)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
