//! Command-line front end: `audit`, `glitch`, `spectrum` and `diff`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lmhead_audit::compare::{diff_by_index, diff_by_similarity, DEFAULT_MIN_ALIGNMENT};
use lmhead_audit::report::{
    glitch_scan, render_diff_markdown, render_glitch_markdown, render_json, render_markdown,
    render_spectrum_markdown, run_audit_full, spectrum_scan, to_report_json, AuditConfig,
    WeightSource,
};
use lmhead_audit::spectral::{DecayThresholds, DEFAULT_REL_CUTOFF};
use lmhead_audit::vocab::load_vocabulary;
use lmhead_audit::Error;

#[derive(Parser)]
#[command(name = "lmhead-audit", version, about = "Static SVD audit of lm_head weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full audit: clusters, VCS, spectrum and glitch candidates.
    Audit(AuditArgs),
    /// WPS statistics and glitch-token candidates only.
    Glitch(GlitchArgs),
    /// Singular-value spectrum profile only.
    Spectrum(SpectrumArgs),
    /// Compare two checkpoints that share a vocabulary.
    Diff(DiffArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum Align {
    Index,
    Similarity,
}

#[derive(Args)]
struct Weights {
    /// Checkpoint file, or raw matrix when --sidecar is given.
    #[arg(long)]
    weights: PathBuf,
    /// JSON sidecar {"rows","cols","dtype"} for a raw matrix file.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Tensor name; defaults to lm_head.weight, output.weight, model.embed_tokens.weight.
    #[arg(long)]
    tensor: Option<String>,
}

impl Weights {
    fn source(&self) -> WeightSource {
        source(&self.weights, self.sidecar.as_ref(), self.tensor.as_ref())
    }
}

fn source(weights: &Path, sidecar: Option<&PathBuf>, tensor: Option<&String>) -> WeightSource {
    match sidecar {
        Some(sidecar) => WeightSource::Raw {
            matrix: weights.to_path_buf(),
            sidecar: sidecar.clone(),
        },
        None => WeightSource::Checkpoint {
            path: weights.to_path_buf(),
            tensor: tensor.cloned(),
        },
    }
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn emit(&self, text: &str) -> Result<(), Error> {
        match &self.out {
            Some(p) => std::fs::write(p, text)?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    weights: Weights,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 2.0)]
    z: f64,
    /// Hide tokens below this percentage of the leading score in Markdown.
    #[arg(long, default_value_t = 10.0)]
    omit_ratio: f64,
    /// Singular values in the spectrum profile.
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_REL_CUTOFF)]
    rel_cutoff: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct GlitchArgs {
    #[command(flatten)]
    weights: Weights,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    z: f64,
    #[arg(long, default_value_t = DEFAULT_REL_CUTOFF)]
    rel_cutoff: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    weights: Weights,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_REL_CUTOFF)]
    rel_cutoff: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    weights_a: PathBuf,
    #[arg(long)]
    weights_b: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long, value_enum, default_value = "index")]
    align: Align,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Similarity mode leaves pairs with |cos| below this unmatched.
    #[arg(long, default_value_t = DEFAULT_MIN_ALIGNMENT)]
    min_alignment: f64,
    #[command(flatten)]
    output: Output,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Audit(a) => {
            let config = AuditConfig {
                n_vectors: a.n,
                k_tokens: a.k,
                z_sigma: a.z,
                rel_cutoff: a.rel_cutoff,
                ratio_omit_percent: a.omit_ratio,
                spectrum_m: a.m,
                decay: DecayThresholds::default(),
            };
            let audit = run_audit_full(&a.weights.source(), &a.vocab, &config)?;
            let text = match a.output.format {
                Format::Json => render_json(&audit.result),
                Format::Md => render_markdown(&audit.result),
            };
            a.output.emit(&text)
        }
        Command::Glitch(g) => {
            let w = g.weights.source().load()?;
            let vocab = load_vocabulary(&g.vocab)?;
            let r = glitch_scan(&w, &vocab, g.z, g.rel_cutoff)?;
            let text = match g.output.format {
                Format::Json => to_report_json(&r),
                Format::Md => render_glitch_markdown(&r),
            };
            g.output.emit(&text)
        }
        Command::Spectrum(s) => {
            let w = s.weights.source().load()?;
            let r = spectrum_scan(&w, s.m, &DecayThresholds::default(), s.rel_cutoff)?;
            let text = match s.output.format {
                Format::Json => to_report_json(&r),
                Format::Md => render_spectrum_markdown(&r),
            };
            s.output.emit(&text)
        }
        Command::Diff(d) => {
            let config = AuditConfig {
                n_vectors: d.n,
                k_tokens: d.k,
                spectrum_m: d.m,
                ..AuditConfig::default()
            };
            let src_a = source(&d.weights_a, None, d.tensor.as_ref());
            let src_b = source(&d.weights_b, None, d.tensor.as_ref());
            let (a, b) = std::thread::scope(|s| {
                let ha = s.spawn(|| run_audit_full(&src_a, &d.vocab, &config));
                let hb = s.spawn(|| run_audit_full(&src_b, &d.vocab, &config));
                (
                    ha.join().expect("audit thread panicked"),
                    hb.join().expect("audit thread panicked"),
                )
            });
            let (a, b) = (a?, b?);
            let report = match d.align {
                Align::Index => diff_by_index(&a.result, &b.result, d.n, d.k)?
                    .with_alignment(&a.factors, &b.factors)?,
                Align::Similarity => diff_by_similarity(
                    &a.factors,
                    &b.factors,
                    &a.result,
                    &b.result,
                    d.n,
                    d.min_alignment,
                )?,
            };
            let text = match d.output.format {
                Format::Json => to_report_json(&report),
                Format::Md => render_diff_markdown(&report),
            };
            d.output.emit(&text)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
