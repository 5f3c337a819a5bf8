//! Audit orchestration and report rendering.
//!
//! [`run_audit`] chains loading, SVD and scoring into one self-contained
//! [`AuditResult`]; [`render_json`] and [`render_markdown`] turn it into
//! bytes without recomputing anything.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compare::{AlignmentMode, DiffReport};
use crate::metrics::{
    glitch_candidates, vcs_clusters, wps_table, GlitchReport, VcsSummary, WpsStats, WpsTable,
    DEFAULT_K_TOKENS, DEFAULT_N_VECTORS, DEFAULT_Z_SIGMA,
};
use crate::spectral::{
    compute_svd, spectrum_profile, ClusterRecord, DecayThresholds, SpectralError, SpectrumProfile,
    SvdFactors, DEFAULT_REL_CUTOFF, DEFAULT_SPECTRUM_M,
};
use crate::tensor_io::{load_checkpoint, load_raw, FloatDtype, LoadError, WeightMatrix};
use crate::vocab::{load_vocabulary, render_token, VocabError, Vocabulary};
use crate::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_RATIO_OMIT_PERCENT: f64 = 10.0;
/// Significant digits kept for every real number in JSON output.
pub const JSON_SIG_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub n_vectors: usize,
    pub k_tokens: usize,
    pub z_sigma: f64,
    pub rel_cutoff: f64,
    /// Tokens whose |score ratio| is below this percentage are left out of
    /// Markdown cluster rows. JSON always carries the full top-k.
    pub ratio_omit_percent: f64,
    pub spectrum_m: usize,
    pub decay: DecayThresholds,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            n_vectors: DEFAULT_N_VECTORS,
            k_tokens: DEFAULT_K_TOKENS,
            z_sigma: DEFAULT_Z_SIGMA,
            rel_cutoff: DEFAULT_REL_CUTOFF,
            ratio_omit_percent: DEFAULT_RATIO_OMIT_PERCENT,
            spectrum_m: DEFAULT_SPECTRUM_M,
            decay: DecayThresholds::default(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_vectors == 0 || self.k_tokens == 0 || self.spectrum_m == 0 {
            return fail("counts must be at least 1");
        }
        if !(self.z_sigma >= 0.0 && self.z_sigma.is_finite()) {
            return fail("z_sigma must be a finite non-negative number");
        }
        if !(0.0..=100.0).contains(&self.ratio_omit_percent) {
            return fail("ratio_omit_percent must lie in [0, 100]");
        }
        if !(self.rel_cutoff >= 0.0 && self.rel_cutoff < 1.0) {
            return fail("rel_cutoff must lie in [0, 1)");
        }
        let d = &self.decay;
        if [d.cliff_ratio, d.plateau_max, d.step_gap, d.gentle_max]
            .iter()
            .any(|&r| !(r >= 1.0 && r.is_finite()))
        {
            return fail("decay thresholds are ratios and must be >= 1");
        }
        Ok(())
    }
}

/// Where the weight matrix comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSource {
    Checkpoint {
        path: PathBuf,
        tensor: Option<String>,
    },
    Raw {
        matrix: PathBuf,
        sidecar: PathBuf,
    },
}

impl WeightSource {
    pub fn checkpoint(path: impl Into<PathBuf>) -> Self {
        WeightSource::Checkpoint {
            path: path.into(),
            tensor: None,
        }
    }

    pub fn load(&self) -> Result<WeightMatrix, LoadError> {
        match self {
            WeightSource::Checkpoint { path, tensor } => load_checkpoint(path, tensor.as_deref()),
            WeightSource::Raw { matrix, sidecar } => load_raw(matrix, sidecar),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProvenance {
    pub tensor_name: String,
    pub dtype: FloatDtype,
    pub rows: usize,
    pub cols: usize,
}

/// A cluster with its tokens rendered for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    #[serde(flatten)]
    pub record: ClusterRecord,
    pub tokens: Vec<String>,
}

/// Everything an audit report needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub model_label: String,
    pub weights: WeightProvenance,
    pub config: AuditConfig,
    pub spectrum: SpectrumProfile,
    pub clusters: Vec<ClusterEntry>,
    pub vcs_summary: VcsSummary,
    pub wps_stats: WpsStats,
    pub glitch: GlitchReport,
    pub tool_version: String,
}

/// An audit together with the intermediate factors it was computed from.
#[derive(Debug, Clone)]
pub struct Audit {
    pub result: AuditResult,
    pub factors: SvdFactors,
    pub wps: WpsTable,
}

fn check_vocab(w: &WeightMatrix, vocab: &Vocabulary) -> Result<(), Error> {
    if vocab.len() > w.rows() {
        return Err(VocabError::LargerThanMatrix {
            size: vocab.len(),
            rows: w.rows(),
        }
        .into());
    }
    Ok(())
}

fn check_rank(f: &SvdFactors, requested: usize) -> Result<(), Error> {
    let rank = f.rank();
    if requested > rank {
        return Err(SpectralError::InsufficientRank { requested, rank }.into());
    }
    Ok(())
}

fn provenance(w: &WeightMatrix) -> WeightProvenance {
    WeightProvenance {
        tensor_name: w.source_tensor_name().to_string(),
        dtype: w.source_dtype(),
        rows: w.rows(),
        cols: w.cols(),
    }
}

/// Run the full pipeline on an in-memory matrix.
pub fn audit_matrix(w: &WeightMatrix, vocab: &Vocabulary, config: &AuditConfig) -> Result<Audit, Error> {
    config.validate()?;
    check_vocab(w, vocab)?;
    let factors = compute_svd(w, config.rel_cutoff)?;
    check_rank(&factors, config.n_vectors)?;
    if config.k_tokens > w.rows() {
        return Err(SpectralError::InvalidK {
            k: config.k_tokens,
            rows: w.rows(),
        }
        .into());
    }
    let spectrum = spectrum_profile(&factors, config.spectrum_m, &config.decay)?;
    let records = vcs_clusters(w, &factors, config.n_vectors, config.k_tokens)?;
    let vcs_summary = VcsSummary::from_clusters(&records);
    let clusters = records
        .into_iter()
        .map(|record| ClusterEntry {
            tokens: record.token_ids.iter().map(|&id| render_token(vocab, id)).collect(),
            record,
        })
        .collect();
    let wps = wps_table(&factors, config.z_sigma);
    let glitch = glitch_candidates(&wps, vocab);

    let result = AuditResult {
        model_label: w.model_label().to_string(),
        weights: provenance(w),
        config: config.clone(),
        spectrum,
        clusters,
        vcs_summary,
        wps_stats: wps.stats(),
        glitch,
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok(Audit {
        result,
        factors,
        wps,
    })
}

/// Load weights and vocabulary from disk and audit them.
pub fn run_audit_full(
    weights: &WeightSource,
    vocab: impl AsRef<Path>,
    config: &AuditConfig,
) -> Result<Audit, Error> {
    config.validate()?;
    let w = weights.load()?;
    let vocab = load_vocabulary(vocab)?;
    audit_matrix(&w, &vocab, config)
}

pub fn run_audit(
    weights: &WeightSource,
    vocab: impl AsRef<Path>,
    config: &AuditConfig,
) -> Result<AuditResult, Error> {
    run_audit_full(weights, vocab, config).map(|a| a.result)
}

/// WPS statistics and glitch candidates only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlitchResult {
    pub model_label: String,
    pub weights: WeightProvenance,
    pub wps_stats: WpsStats,
    pub glitch: GlitchReport,
    pub tool_version: String,
}

pub fn glitch_scan(
    w: &WeightMatrix,
    vocab: &Vocabulary,
    z: f64,
    rel_cutoff: f64,
) -> Result<GlitchResult, Error> {
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::Config("z must be a finite non-negative number".into()));
    }
    check_vocab(w, vocab)?;
    let f = compute_svd(w, rel_cutoff)?;
    let wps = wps_table(&f, z);
    Ok(GlitchResult {
        model_label: w.model_label().to_string(),
        weights: provenance(w),
        wps_stats: wps.stats(),
        glitch: glitch_candidates(&wps, vocab),
        tool_version: TOOL_VERSION.to_string(),
    })
}

/// Spectrum profile only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub model_label: String,
    pub weights: WeightProvenance,
    pub spectrum: SpectrumProfile,
    pub tool_version: String,
}

pub fn spectrum_scan(
    w: &WeightMatrix,
    m: usize,
    thresholds: &DecayThresholds,
    rel_cutoff: f64,
) -> Result<SpectrumResult, Error> {
    let f = compute_svd(w, rel_cutoff)?;
    Ok(SpectrumResult {
        model_label: w.model_label().to_string(),
        weights: provenance(w),
        spectrum: spectrum_profile(&f, m, thresholds)?,
        tool_version: TOOL_VERSION.to_string(),
    })
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

/// Round to `digits` significant digits via decimal text.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x + 0.0;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses")
}

/// Round every real (non-integer) number in a JSON tree.
pub fn round_json_numbers(value: &mut serde_json::Value, digits: usize) {
    match value {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *value = serde_json::Number::from_f64(round_significant(x, digits))
                .map_or(serde_json::Value::Null, serde_json::Value::Number);
        }
        serde_json::Value::Array(items) => {
            items.iter_mut().for_each(|v| round_json_numbers(v, digits))
        }
        serde_json::Value::Object(map) => {
            map.values_mut().for_each(|v| round_json_numbers(v, digits))
        }
        _ => {}
    }
}

/// Pretty JSON with reals rounded to [`JSON_SIG_DIGITS`] significant digits.
pub fn to_report_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialise");
    round_json_numbers(&mut v, JSON_SIG_DIGITS);
    let mut out = serde_json::to_string_pretty(&v).expect("values serialise");
    out.push('\n');
    out
}

pub fn render_json(r: &AuditResult) -> String {
    to_report_json(r)
}

// ---------------------------------------------------------------------------
// Markdown
// ---------------------------------------------------------------------------

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.prec$}"))
}

fn fmt_opt_idx(x: Option<usize>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

/// `1234567` -> `1,234,567`.
pub fn with_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Make already-rendered token text safe inside a Markdown table cell.
fn md_cell(s: &str) -> String {
    s.replace('\\', "\\\\").replace('|', "\\|")
}

/// `token(ratio%)` entries for one cluster row, skipping tokens whose
/// |ratio| is below `omit_percent`.
pub fn cluster_token_cell(entry: &ClusterEntry, omit_percent: f64) -> String {
    entry
        .tokens
        .iter()
        .zip(&entry.record.score_ratios)
        .filter(|(_, r)| r.abs() >= omit_percent)
        .map(|(t, r)| format!("{}({r:.0}%)", md_cell(t)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_vcs_table(out: &mut String, label: &str, s: &VcsSummary) {
    out.push_str("| Model | Mean VCS | Max VCS | i* | Undefined |\n");
    out.push_str("|:---|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} |",
        md_cell(label),
        fmt_opt(s.mean_vcs, 2),
        fmt_opt(s.max_vcs, 2),
        fmt_opt_idx(s.argmax_index),
        s.undefined_count
    );
}

fn write_spectrum(out: &mut String, label: &str, p: &SpectrumProfile) {
    out.push_str("| Model | S[0] | S[1] | S[0]/S[1] | Decay pattern |\n");
    out.push_str("|:---|---:|---:|---:|:---|\n");
    let _ = writeln!(
        out,
        "| {} | {:.2} | {:.2} | {:.2} | {} |",
        md_cell(label),
        p.top_values[0],
        p.top_values[1],
        p.leading_ratio,
        p.decay_label.as_str()
    );
    out.push('\n');
    out.push_str("| i | S[i] | S[i]/S[i+1] |\n");
    out.push_str("|---:|---:|---:|\n");
    for (i, s) in p.top_values.iter().enumerate() {
        let ratio = p.ratios.get(i).map_or_else(|| "".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(out, "| {i} | {s:.2} | {ratio} |");
    }
}

fn write_glitch(out: &mut String, label: &str, stats: &WpsStats, g: &GlitchReport) {
    let _ = writeln!(
        out,
        "| Model | μ | σ | Threshold (μ − {}σ) | Candidates (%) |",
        stats.z
    );
    out.push_str("|:---|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {} | {:.2} | {:.2} | {:.2} | {} ({:.2}%) |",
        md_cell(label),
        stats.mu,
        stats.sigma,
        stats.threshold,
        with_thousands(g.count),
        g.fraction * 100.0
    );
    if !g.candidates.is_empty() {
        out.push('\n');
        out.push_str("| ID | WPS | Token |\n");
        out.push_str("|---:|---:|:---|\n");
        for c in &g.candidates {
            let _ = writeln!(out, "| {} | {:.4} | {} |", c.id, c.wps, md_cell(&c.token));
        }
    }
}

fn write_header(out: &mut String, title: &str, label: &str, w: &WeightProvenance, version: &str) {
    let _ = writeln!(out, "# {title}: {}\n", md_cell(label));
    let _ = writeln!(
        out,
        "- weights: `{}` ({}, {} × {})",
        w.tensor_name, w.dtype, w.rows, w.cols
    );
    let _ = writeln!(out, "- tool version: {version}");
}

pub fn render_markdown(r: &AuditResult) -> String {
    let mut out = String::new();
    let c = &r.config;
    write_header(&mut out, "lm_head audit", &r.model_label, &r.weights, &r.tool_version);
    let _ = writeln!(
        out,
        "- n = {}, k = {}, z = {}, tokens below {}% of the leading score omitted\n",
        c.n_vectors, c.k_tokens, c.z_sigma, c.ratio_omit_percent
    );

    out.push_str("## Singular vectors\n\n");
    out.push_str("| U[:,i] | S[i] | VCS | Top tokens |\n");
    out.push_str("|:---|---:|---:|:---|\n");
    for e in &r.clusters {
        let _ = writeln!(
            out,
            "| U[:,{}] | {:.2} | {} | {} |",
            e.record.vector_index,
            e.record.singular_value,
            fmt_opt(e.record.vcs, 2),
            cluster_token_cell(e, c.ratio_omit_percent)
        );
    }

    let _ = writeln!(out, "\n## VCS statistics (top {})\n", c.n_vectors);
    write_vcs_table(&mut out, &r.model_label, &r.vcs_summary);

    let _ = writeln!(
        out,
        "\n## Singular value statistics (top {})\n",
        r.spectrum.top_values.len()
    );
    write_spectrum(&mut out, &r.model_label, &r.spectrum);

    out.push_str("\n## Glitch token candidates\n\n");
    write_glitch(&mut out, &r.model_label, &r.wps_stats, &r.glitch);
    out
}

pub fn render_glitch_markdown(r: &GlitchResult) -> String {
    let mut out = String::new();
    write_header(&mut out, "Glitch token scan", &r.model_label, &r.weights, &r.tool_version);
    out.push('\n');
    write_glitch(&mut out, &r.model_label, &r.wps_stats, &r.glitch);
    out
}

pub fn render_spectrum_markdown(r: &SpectrumResult) -> String {
    let mut out = String::new();
    write_header(&mut out, "Singular value spectrum", &r.model_label, &r.weights, &r.tool_version);
    out.push('\n');
    write_spectrum(&mut out, &r.model_label, &r.spectrum);
    out
}

pub fn render_diff_markdown(d: &DiffReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# lm_head diff: {} → {}\n",
        md_cell(&d.model_a),
        md_cell(&d.model_b)
    );
    let mode = match d.alignment_mode {
        AlignmentMode::ByIndex => "by index",
        AlignmentMode::BySimilarity => "by similarity",
    };
    let _ = writeln!(out, "- alignment: {mode}");
    let _ = writeln!(out, "- max |ΔVCS|: {}\n", fmt_opt(d.max_abs_vcs_delta, 4));
    out.push_str("| a | b | alignment | VCS a | VCS b | ΔVCS | Jaccard |\n");
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for p in &d.pairs {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.2} |",
            p.index_a,
            p.index_b,
            fmt_opt(p.alignment_cosine, 3),
            fmt_opt(p.vcs_a, 3),
            fmt_opt(p.vcs_b, 3),
            fmt_opt(p.vcs_delta, 4),
            p.jaccard
        );
    }
    if !d.unmatched_a.is_empty() || !d.unmatched_b.is_empty() {
        let _ = writeln!(out, "\nunmatched in a: {:?}", d.unmatched_a);
        let _ = writeln!(out, "unmatched in b: {:?}", d.unmatched_b);
    }
    out
}
