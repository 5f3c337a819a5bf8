// Weighted projection scores over a matrix with ten planted near-zero rows,
// and the tokens falling below the mu - 2 sigma cutoff.

use std::error::Error;

use lmhead_audit::metrics::{glitch_candidates, wps_table};
use lmhead_audit::spectral::compute_svd;
use lmhead_audit::synthetic::{numbered_vocabulary, planted_orphans};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (w, planted) = planted_orphans(90, 10, 8, 1e-6, 42);
    let f = compute_svd(&w, 1e-6)?;
    let table = wps_table(&f, 2.0);
    let s = table.stats();
    println!(
        "V = {}: mu {:.4}, sigma {:.4}, threshold {:.4}, range [{:.2e}, {:.4}]",
        s.vocab_size, s.mu, s.sigma, s.threshold, s.min, s.max
    );

    let report = glitch_candidates(&table, &numbered_vocabulary(w.rows()));
    println!("{} candidates ({:.2}%)", report.count, report.fraction * 100.0);
    for c in &report.candidates {
        println!("  {:>3} {:<4} wps {:.3e}", c.id, c.token, c.wps);
    }

    let mut found: Vec<usize> = report.candidates.iter().map(|c| c.id).collect();
    found.sort_unstable();
    println!("planted rows recovered exactly: {}", found == planted);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
