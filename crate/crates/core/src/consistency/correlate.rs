use serde::{Deserialize, Serialize};

use super::{ConsistencyError, PairMatrix};
use crate::dataset::LanguageCode;
use crate::textmetrics::{pearson, spearman, Correlation};

/// Per-language row means of both matrices (scatter-plot data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeans {
    pub language: LanguageCode,
    pub consistency: Option<f64>,
    pub external: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCorrelation {
    pub pearson: Correlation,
    pub spearman: Correlation,
    /// Ordered off-diagonal cells set in both matrices.
    pub n_pairs: usize,
    pub rows: Vec<RowMeans>,
}

/// Correlates a consistency matrix with an external per-language-pair
/// matrix (for example translation chrF per direction).
///
/// Both must cover the same languages; the external matrix is aligned to
/// the consistency matrix's order. Every ordered off-diagonal cell set in
/// both contributes one point.
pub fn correlate_matrices(
    consistency: &PairMatrix,
    external: &PairMatrix,
) -> Result<MatrixCorrelation, ConsistencyError> {
    let missing: Vec<String> = consistency
        .languages
        .iter()
        .filter(|l| external.index_of(l).is_none())
        .map(ToString::to_string)
        .collect();
    let unexpected: Vec<String> = external
        .languages
        .iter()
        .filter(|l| consistency.index_of(l).is_none())
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(ConsistencyError::LanguageMismatch {
            missing,
            unexpected,
        });
    }
    let external = external.submatrix(&consistency.languages)?;

    let n = consistency.len();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if let (Some(a), Some(b)) = (consistency.get(i, j), external.get(i, j)) {
                xs.push(a);
                ys.push(b);
            }
        }
    }
    let pearson = pearson(&xs, &ys)?;
    let spearman = spearman(&xs, &ys)?;
    let rows = consistency
        .languages
        .iter()
        .zip(consistency.row_means())
        .zip(external.row_means())
        .map(|((language, c), e)| RowMeans {
            language: language.clone(),
            consistency: c,
            external: e,
        })
        .collect();
    Ok(MatrixCorrelation {
        pearson,
        spearman,
        n_pairs: xs.len(),
        rows,
    })
}
