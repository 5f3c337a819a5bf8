//! Static audit of a transformer's output projection (`lm_head`).
//!
//! The `V x d` weight matrix is decomposed with an economy SVD. Each left
//! singular vector ranks the vocabulary; its top-k tokens form a cluster
//! whose coherence is scored by the mean pairwise cosine of their weight
//! rows (VCS). Per-token weighted projection scores (WPS) flag tokens that
//! barely participate in any direction. No inference is performed: only the
//! weights and an exported vocabulary are read.
//!
//! ```no_run
//! use lmhead_audit::report::{render_markdown, run_audit, AuditConfig, WeightSource};
//!
//! let result = run_audit(
//!     &WeightSource::checkpoint("model.safetensors"),
//!     "vocab.json",
//!     &AuditConfig::default(),
//! )?;
//! print!("{}", render_markdown(&result));
//! # Ok::<(), lmhead_audit::Error>(())
//! ```
//!
//! Modules, bottom-up: [`tensor_io`] and [`vocab`] load inputs, [`spectral`]
//! computes factors and clusters, [`metrics`] scores them, [`compare`] diffs
//! two audits, [`report`] runs the pipeline and renders output.

pub mod compare;
pub mod metrics;
pub mod report;
pub mod spectral;
pub mod synthetic;
pub mod tensor_io;
pub mod vocab;

use thiserror::Error;

pub use compare::{diff_by_index, diff_by_similarity, DiffReport};
pub use metrics::{glitch_candidates, vcs, vcs_summary, wps_table, GlitchReport, VcsSummary, WpsTable};
pub use report::{render_json, render_markdown, run_audit, AuditConfig, AuditResult};
pub use spectral::{compute_svd, spectrum_profile, top_k_tokens, ClusterRecord, SpectrumProfile, SvdFactors};
pub use tensor_io::{load_lm_head, load_raw, parse_checkpoint, CheckpointIndex, WeightMatrix};
pub use vocab::{load_vocabulary, render_token, Vocabulary};

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Vocabulary,
    Spectral,
    Metrics,
    Compare,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Vocabulary => "vocabulary",
            Stage::Spectral => "spectral",
            Stage::Metrics => "metrics",
            Stage::Compare => "compare",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("[config] {0}")]
    Config(String),
    #[error("[load] {0}")]
    Load(#[from] tensor_io::LoadError),
    #[error("[vocabulary] {0}")]
    Vocab(#[from] vocab::VocabError),
    #[error("[spectral] {0}")]
    Spectral(#[from] spectral::SpectralError),
    #[error("[metrics] {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("[compare] {0}")]
    Compare(#[from] compare::CompareError),
    #[error("[output] {0}")]
    Output(#[from] std::io::Error),
}

impl Error {
    pub fn stage(&self) -> Stage {
        match self {
            Error::Config(_) => Stage::Config,
            Error::Load(_) => Stage::Load,
            Error::Vocab(_) => Stage::Vocabulary,
            Error::Spectral(_) => Stage::Spectral,
            Error::Metrics(_) => Stage::Metrics,
            Error::Compare(_) => Stage::Compare,
            Error::Output(_) => Stage::Output,
        }
    }

    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use spectral::SpectralError as S;
        match self {
            Error::Spectral(S::RowsLessThanCols { .. } | S::NonFinite(_)) => 2,
            Error::Spectral(_) | Error::Metrics(_) => 3,
            _ => 2,
        }
    }
}
