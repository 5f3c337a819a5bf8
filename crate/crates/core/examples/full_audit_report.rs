// End to end: checkpoint and vocabulary on disk, full audit, JSON and
// Markdown reports. Equivalent to
// `lmhead-audit audit --weights demo.safetensors --vocab vocab.json --n 8 --k 10 --m 8 --format md`.

use std::error::Error;

use lmhead_audit::report::{render_json, render_markdown, run_audit, AuditConfig, WeightSource};
use lmhead_audit::synthetic::{demo_matrix, numbered_vocabulary};
use lmhead_audit::tensor_io::write_lm_head_f32;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let weights = dir.path().join("demo.safetensors");
    let vocab = dir.path().join("vocab.json");
    write_lm_head_f32(&weights, &demo_matrix(0))?;
    std::fs::write(&vocab, numbered_vocabulary(100).to_json())?;

    let config = AuditConfig {
        n_vectors: 8,
        k_tokens: 10,
        spectrum_m: 8,
        ..AuditConfig::default()
    };
    let result = run_audit(&WeightSource::checkpoint(&weights), &vocab, &config)?;

    let json = render_json(&result);
    std::fs::write(dir.path().join("report.json"), &json)?;
    println!("report.json: {} bytes", json.len());
    print!("{}", render_markdown(&result));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
