// The decay classifier on hand-built spectra and on a synthetic matrix.

use std::error::Error;

use lmhead_audit::spectral::{compute_svd, spectrum_profile, DecayThresholds, SpectrumProfile};
use lmhead_audit::synthetic::{demo_matrix, gaussian};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let t = DecayThresholds::default();
    let shapes: [(&str, Vec<f64>); 4] = [
        ("one dominant direction", vec![100.0, 10.0, 10.0, 10.0, 10.0, 10.0]),
        ("flat", vec![5.0; 6]),
        ("steps", vec![100.0, 40.0, 38.0, 37.0, 20.0, 19.0, 18.0, 10.0, 9.5, 9.0]),
        ("cliff with uneven tail", vec![100.0, 20.0, 15.0, 12.0, 10.0, 9.0]),
    ];
    for (name, values) in &shapes {
        let p = SpectrumProfile::from_values(values, &t)?;
        let ratios: Vec<String> = p.ratios.iter().map(|r| format!("{r:.2}")).collect();
        println!("{name:<24} {:<18} ratios [{}]", p.decay_label.as_str(), ratios.join(", "));
    }

    for (name, w) in [("planted clusters", demo_matrix(0)), ("gaussian 400x8", gaussian(400, 8, 0))] {
        let f = compute_svd(&w, 1e-6)?;
        let p = spectrum_profile(&f, 8, &t)?;
        println!(
            "{name:<24} {:<18} S[0]/S[1] = {:.2}",
            p.decay_label.as_str(),
            p.leading_ratio
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
