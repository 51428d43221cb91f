//! Cross-lingual consistency metrics.
//!
//! * xSC: mean over language pairs of the per-item cosine similarity of
//!   answer embeddings.
//! * xAC: mean over language pairs of the Spearman correlation between
//!   per-item chrF accuracy vectors (each language scored against its own
//!   ground truth).
//! * xTC: mean over language pairs of the Spearman correlation between
//!   per-item timeliness scores.
//! * xC: harmonic mean of the three.
//!
//! Every pairwise function here is symmetric, so each unordered language
//! pair is computed once. Scalar means are summed in an order fixed by the
//! language codes, which makes them independent of the dataset's language
//! order.

mod answers;
mod correlate;
mod matrix;
mod metrics;
mod report;

pub use answers::{AnswerSet, PromptVariant};
pub use correlate::{correlate_matrices, MatrixCorrelation, RowMeans};
pub use matrix::PairMatrix;
pub use metrics::{
    accuracy_vectors, domain_breakdown, timeliness_score, timeliness_vectors, xac, xc, xsc,
    xsc_from_table, xtc, DomainScore, PairScore, XcScore,
};
pub use report::{
    build_report, embed_answers, read_matrix_csv, score, write_report_files, ConsistencyReport, MatrixSet,
    Provenance, REPORT_SCHEMA,
};

use serde::{Deserialize, Serialize};

use crate::dataset::LanguageCode;
use crate::embedding::EmbeddingError;
use crate::textmetrics::{ChrfConfig, MetricError};

#[derive(Debug, thiserror::Error)]
pub enum ConsistencyError {
    #[error("{count} answer(s) missing from the answer set (first: language `{language}`, item `{item}`)")]
    MissingAnswers {
        count: usize,
        language: LanguageCode,
        item: String,
    },
    #[error("{metric} needs at least {required} items, got {got}")]
    InsufficientItems {
        metric: &'static str,
        required: usize,
        got: usize,
    },
    #[error("no embedding available for answer text {0:?}")]
    MissingEmbedding(String),
    #[error("timeliness item `{0}` has no candidates")]
    EmptyCandidates(String),
    #[error("language `{0}` is not declared by the dataset")]
    UnknownLanguage(LanguageCode),
    #[error("need at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("language sets differ: missing {missing:?}, unexpected {unexpected:?}")]
    LanguageMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("matrix file {path}: {message}")]
    MatrixFile { path: String, message: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a timeliness answer is turned into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimelinessMode {
    /// chrF of the best-matching candidate divided by that candidate's rank.
    #[default]
    Prose,
    /// Best chrF over all candidates divided by the number of candidates.
    Formula,
}

impl std::str::FromStr for TimelinessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prose" => Ok(Self::Prose),
            "formula" => Ok(Self::Formula),
            other => Err(format!("unknown timeliness mode {other:?} (prose, formula)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringOptions {
    /// Languages to score, in order. `None` means every dataset language.
    pub languages: Option<Vec<LanguageCode>>,
    pub chrf: ChrfConfig,
    pub timeliness_mode: TimelinessMode,
    /// Best-candidate chrF below this threshold scores zero.
    pub tau: f64,
    /// Also embed timeliness answers when computing xSC.
    pub include_timeliness_in_xsc: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            languages: None,
            chrf: ChrfConfig::default(),
            timeliness_mode: TimelinessMode::Prose,
            tau: 0.0,
            include_timeliness_in_xsc: false,
        }
    }
}

impl ScoringOptions {
    /// Resolves the language selection against the dataset.
    pub fn resolve_languages(
        &self,
        declared: &[LanguageCode],
    ) -> Result<Vec<LanguageCode>, ConsistencyError> {
        let langs = match &self.languages {
            None => declared.to_vec(),
            Some(selected) => {
                for lang in selected {
                    if !declared.contains(lang) {
                        return Err(ConsistencyError::UnknownLanguage(lang.clone()));
                    }
                }
                selected.clone()
            }
        };
        if langs.len() < 2 {
            return Err(ConsistencyError::TooFewLanguages(langs.len()));
        }
        Ok(langs)
    }
}
