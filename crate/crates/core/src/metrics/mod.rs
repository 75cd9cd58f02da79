//! Pure metric functions over probe results and chains.

mod consistency;
mod correlations;
mod integrity;
mod kappa;
pub mod special;
mod stats;

use thiserror::Error;

pub use consistency::{hamming_distance, jaccard_dissimilarity, yes_rate, YesRate};
pub use correlations::{chain_quality_correlations, Analysis, ChainQualityReport};
pub use integrity::{
    chain_integrity, chain_link_verdicts, integrity_matrix, CellCount, IntegrityMatrix, LinkVerdicts,
};
pub use kappa::{fleiss_kappa, KappaResult};
pub use stats::{descriptive_stats, pearson_r, CorrelationResult, DescriptiveStats};

/// Significance threshold used for every correlation flag.
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("results mix probe kinds {0} and {1}")]
    MixedProbeKind(String, String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("chain {chain_id} has no verdict for link {position}")]
    MissingLinkVerdict { chain_id: String, position: usize },
    #[error("incomplete verdicts for generator {generator} under evaluator {evaluator}: {detail}")]
    IncompleteVerdicts {
        generator: String,
        evaluator: String,
        detail: String,
    },
    #[error("item {item} has {found} ratings, expected {expected}")]
    UnequalRaterCounts { item: usize, found: usize, expected: usize },
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("all ratings fall in one category; kappa is undefined")]
    DegenerateAgreement,
}

impl MetricsError {
    /// Stable variant name for reports.
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::EmptyInput => "EmptyInput",
            MetricsError::NonFinite => "NonFinite",
            MetricsError::MixedProbeKind(..) => "MixedProbeKind",
            MetricsError::LengthMismatch { .. } => "LengthMismatch",
            MetricsError::ZeroVariance(_) => "ZeroVariance",
            MetricsError::TooFewPoints(_) => "TooFewPoints",
            MetricsError::MissingLinkVerdict { .. } => "MissingLinkVerdict",
            MetricsError::IncompleteVerdicts { .. } => "IncompleteVerdicts",
            MetricsError::UnequalRaterCounts { .. } => "UnequalRaterCounts",
            MetricsError::TooFewRaters(_) => "TooFewRaters",
            MetricsError::TooFewCategories(_) => "TooFewCategories",
            MetricsError::DegenerateAgreement => "DegenerateAgreement",
        }
    }
}
