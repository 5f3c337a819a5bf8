// Write a small half-precision checkpoint, list its tensors from the header
// alone, then resolve and widen the output projection.

use std::collections::BTreeMap;
use std::error::Error;

use half::f16;
use lmhead_audit::tensor_io::{load_lm_head, parse_checkpoint, write_checkpoint, Dtype, TensorPayload};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tiny-model.safetensors");

    // 6 x 3 embedding table stored as F16; no lm_head.weight, so the loader
    // falls back to the tied embedding
    let values: Vec<f32> = (0..18).map(|i| (i as f32 - 9.0) / 4.0).collect();
    let embed: Vec<u8> = values.iter().flat_map(|&x| f16::from_f32(x).to_le_bytes()).collect();
    let norm: Vec<u8> = [1.0f32; 3].iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut tensors = BTreeMap::new();
    tensors.insert(
        "model.embed_tokens.weight".to_string(),
        TensorPayload { dtype: Dtype::F16, shape: vec![6, 3], bytes: &embed },
    );
    tensors.insert(
        "model.norm.weight".to_string(),
        TensorPayload { dtype: Dtype::F32, shape: vec![3], bytes: &norm },
    );
    write_checkpoint(&path, &tensors)?;

    let index = parse_checkpoint(&path)?;
    println!("{} tensors, payload starts at byte {}", index.len(), index.data_start());
    for e in index.entries() {
        println!("  {:<28} {:>4} {:?} bytes {:?}", e.name, e.dtype.as_str(), e.shape, e.byte_range);
    }

    let w = load_lm_head(&index, &path, None)?;
    println!(
        "resolved `{}` ({}) as {} x {}, label {}",
        w.source_tensor_name(),
        w.source_dtype(),
        w.rows(),
        w.cols(),
        w.model_label()
    );
    for r in 0..w.rows() {
        println!("  row {r}: {:?}", w.row(r));
    }
    assert_eq!(w.data(), values.as_slice());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
