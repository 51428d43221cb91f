use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnswerSet, ConsistencyError, PairMatrix, ScoringOptions, TimelinessMode};
use crate::dataset::{Dataset, LanguageCode, TIMELINESS_DOMAIN};
use crate::embedding::{Embedder, EmbeddingError, EmbeddingTable, EmbeddingVector};
use crate::textmetrics::{chrf, cosine, spearman, ChrfConfig, CosineError, MetricError};

/// A consistency score with the pair matrix it was averaged from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub score: f64,
    pub matrix: PairMatrix,
    /// Unordered pairs whose coefficient was undefined and counted as 0.
    pub degenerate_pairs: usize,
}

impl PairScore {
    fn from_matrix(matrix: PairMatrix) -> Self {
        Self {
            score: matrix.mean_off_diagonal().unwrap_or(0.0),
            degenerate_pairs: matrix.degenerate_pairs(),
            matrix,
        }
    }
}

/// Fills every unordered pair in parallel, then assembles the matrix in
/// index order.
fn fill_pairs<F>(langs: &[LanguageCode], cell: F) -> Result<PairMatrix, ConsistencyError>
where
    F: Fn(usize, usize) -> Result<(f64, bool), ConsistencyError> + Sync,
{
    let n = langs.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let cells: Vec<Result<(f64, bool), ConsistencyError>> =
        pairs.par_iter().map(|&(i, j)| cell(i, j)).collect();
    let mut matrix = PairMatrix::new(langs.to_vec());
    for (&(i, j), result) in pairs.iter().zip(cells) {
        let (value, degenerate) = result?;
        matrix.set_pair(i, j, value, degenerate);
    }
    Ok(matrix)
}

fn cosine_err(e: CosineError) -> ConsistencyError {
    match e {
        CosineError::DimensionMismatch { left, right } => {
            ConsistencyError::Embedding(EmbeddingError::DimensionMismatch {
                expected: left,
                got: right,
            })
        }
        CosineError::Empty => ConsistencyError::Embedding(EmbeddingError::DimensionMismatch {
            expected: 1,
            got: 0,
        }),
    }
}

/// Item ids that take part in xSC under `opts`.
pub(crate) fn xsc_item_ids<'a>(dataset: &'a Dataset, opts: &ScoringOptions) -> Vec<&'a str> {
    let mut ids: Vec<&str> = dataset.qa_items.iter().map(|i| i.id.as_str()).collect();
    if opts.include_timeliness_in_xsc {
        ids.extend(dataset.timeliness_items.iter().map(|i| i.id.as_str()));
    }
    ids
}

/// xSC from precomputed embeddings over the given items.
///
/// `C[i][j]` is the mean cosine between the embeddings of language `i`'s and
/// language `j`'s answers to the same item; xSC is the mean of `C` over
/// language pairs.
pub fn xsc_from_table(
    answers: &AnswerSet,
    item_ids: &[&str],
    langs: &[LanguageCode],
    table: &EmbeddingTable,
) -> Result<PairScore, ConsistencyError> {
    if item_ids.is_empty() {
        return Err(ConsistencyError::InsufficientItems {
            metric: "xSC",
            required: 1,
            got: 0,
        });
    }
    answers.require(langs, item_ids)?;
    let vectors: Vec<Vec<&EmbeddingVector>> = langs
        .iter()
        .map(|lang| {
            item_ids
                .iter()
                .map(|id| {
                    let text = answers.answer(lang, id);
                    table
                        .get(text)
                        .ok_or_else(|| ConsistencyError::MissingEmbedding(text.to_owned()))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let matrix = fill_pairs(langs, |i, j| {
        let mut sum = 0.0;
        for (u, v) in vectors[i].iter().zip(&vectors[j]) {
            sum += cosine(u.as_slice(), v.as_slice()).map_err(cosine_err)?;
        }
        Ok((sum / item_ids.len() as f64, false))
    })?;
    Ok(PairScore::from_matrix(matrix))
}

async fn embed_answers(
    answers: &AnswerSet,
    item_ids: &[&str],
    langs: &[LanguageCode],
    embedder: &Embedder,
) -> Result<EmbeddingTable, ConsistencyError> {
    answers.require(langs, item_ids)?;
    let texts = langs
        .iter()
        .flat_map(|l| item_ids.iter().map(move |id| answers.answer(l, id)));
    Ok(embedder.embed_all(texts).await?)
}

/// Cross-lingual semantic consistency.
pub async fn xsc(
    answers: &AnswerSet,
    dataset: &Dataset,
    embedder: &Embedder,
    opts: &ScoringOptions,
) -> Result<PairScore, ConsistencyError> {
    let langs = opts.resolve_languages(&dataset.languages)?;
    let ids = xsc_item_ids(dataset, opts);
    let table = embed_answers(answers, &ids, &langs, embedder).await?;
    xsc_from_table(answers, &ids, &langs, &table)
}

/// Per-language chrF of each QA answer against that language's own ground
/// truth, in dataset item order.
pub fn accuracy_vectors(
    answers: &AnswerSet,
    dataset: &Dataset,
    langs: &[LanguageCode],
    cfg: &ChrfConfig,
) -> Result<Vec<Vec<f64>>, ConsistencyError> {
    let ids: Vec<&str> = dataset.qa_items.iter().map(|i| i.id.as_str()).collect();
    answers.require(langs, &ids)?;
    Ok(langs
        .par_iter()
        .map(|lang| {
            dataset
                .qa_items
                .iter()
                .map(|item| {
                    let gold = item.answer(lang).unwrap_or("");
                    chrf(answers.answer(lang, &item.id), gold, cfg)
                })
                .collect()
        })
        .collect())
}

fn spearman_pairs(langs: &[LanguageCode], vectors: &[Vec<f64>]) -> Result<PairScore, ConsistencyError> {
    let matrix = fill_pairs(langs, |i, j| {
        let c = spearman(&vectors[i], &vectors[j])?;
        Ok((c.value, c.degenerate))
    })?;
    Ok(PairScore::from_matrix(matrix))
}

/// Cross-lingual accuracy consistency.
pub fn xac(
    answers: &AnswerSet,
    dataset: &Dataset,
    opts: &ScoringOptions,
) -> Result<PairScore, ConsistencyError> {
    let langs = opts.resolve_languages(&dataset.languages)?;
    if dataset.qa_items.len() < 2 {
        return Err(ConsistencyError::InsufficientItems {
            metric: "xAC",
            required: 2,
            got: dataset.qa_items.len(),
        });
    }
    let acc = accuracy_vectors(answers, dataset, &langs, &opts.chrf)?;
    spearman_pairs(&langs, &acc)
}

/// Timeliness score of one answer against candidates ordered newest first.
///
/// In [`TimelinessMode::Prose`] the best-matching candidate's rank `r`
/// (smallest rank on ties) divides its chrF. In [`TimelinessMode::Formula`]
/// the best chrF is divided by the candidate count. A best chrF of zero, or
/// below `tau`, scores zero.
pub fn timeliness_score(
    answer: &str,
    candidates: &[String],
    cfg: &ChrfConfig,
    mode: TimelinessMode,
    tau: f64,
) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::TooShort {
            required: 1,
            got: 0,
        });
    }
    let mut best = 0.0;
    let mut best_rank = 1usize;
    for (i, candidate) in candidates.iter().enumerate() {
        let s = chrf(answer, candidate, cfg);
        if s > best {
            best = s;
            best_rank = i + 1;
        }
    }
    if best <= 0.0 || best < tau {
        return Ok(0.0);
    }
    Ok(match mode {
        TimelinessMode::Prose => best / best_rank as f64,
        TimelinessMode::Formula => best / candidates.len() as f64,
    })
}

/// Per-language timeliness score vectors over the dataset's timeliness items.
pub fn timeliness_vectors(
    answers: &AnswerSet,
    dataset: &Dataset,
    langs: &[LanguageCode],
    opts: &ScoringOptions,
) -> Result<Vec<Vec<f64>>, ConsistencyError> {
    let ids: Vec<&str> = dataset
        .timeliness_items
        .iter()
        .map(|i| i.id.as_str())
        .collect();
    answers.require(langs, &ids)?;
    langs
        .par_iter()
        .map(|lang| {
            dataset
                .timeliness_items
                .iter()
                .map(|item| {
                    let candidates = item.candidates(lang).unwrap_or(&[]);
                    timeliness_score(
                        answers.answer(lang, &item.id),
                        candidates,
                        &opts.chrf,
                        opts.timeliness_mode,
                        opts.tau,
                    )
                    .map_err(|_| ConsistencyError::EmptyCandidates(item.id.clone()))
                })
                .collect()
        })
        .collect()
}

/// Cross-lingual timeliness consistency.
pub fn xtc(
    answers: &AnswerSet,
    dataset: &Dataset,
    opts: &ScoringOptions,
) -> Result<PairScore, ConsistencyError> {
    let langs = opts.resolve_languages(&dataset.languages)?;
    if dataset.timeliness_items.len() < 2 {
        return Err(ConsistencyError::InsufficientItems {
            metric: "xTC",
            required: 2,
            got: dataset.timeliness_items.len(),
        });
    }
    let scores = timeliness_vectors(answers, dataset, &langs, opts)?;
    spearman_pairs(&langs, &scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XcScore {
    pub value: f64,
    /// Set when a component was not positive and the value was floored to 0.
    pub degenerate: bool,
}

/// Overall consistency: harmonic mean of xSC, xAC and xTC. Defined as 0
/// (and flagged) unless all three are positive.
pub fn xc(xsc: f64, xac: f64, xtc: f64) -> XcScore {
    let parts = [xsc, xac, xtc];
    if parts.iter().all(|v| v.is_finite() && *v > 0.0) {
        XcScore {
            value: 3.0 / (1.0 / xsc + 1.0 / xac + 1.0 / xtc),
            degenerate: false,
        }
    } else {
        XcScore {
            value: 0.0,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub xsc: f64,
    pub items: usize,
}

/// xSC restricted to each domain's QA items.
pub fn domain_breakdown(
    answers: &AnswerSet,
    dataset: &Dataset,
    langs: &[LanguageCode],
    table: &EmbeddingTable,
) -> Result<BTreeMap<String, DomainScore>, ConsistencyError> {
    let mut domains = dataset.domains();
    for pooled in dataset.few_shot_pool.keys() {
        if pooled != TIMELINESS_DOMAIN && !domains.contains(pooled) {
            domains.push(pooled.clone());
        }
    }
    let mut out = BTreeMap::new();
    for domain in domains {
        let ids: Vec<&str> = dataset
            .qa_items
            .iter()
            .filter(|i| i.domain == domain)
            .map(|i| i.id.as_str())
            .collect();
        if ids.is_empty() {
            log::warn!("domain `{domain}` has no evaluation items; omitted from breakdown");
            continue;
        }
        let score = xsc_from_table(answers, &ids, langs, table)?;
        out.insert(
            domain,
            DomainScore {
                xsc: score.score,
                items: ids.len(),
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn timeliness_examples() {
        let cfg = ChrfConfig::default();
        let cands = s(&["Rishi Sunak", "Boris Johnson", "Theresa May"]);
        let prose = TimelinessMode::Prose;
        assert_eq!(timeliness_score("Rishi Sunak", &cands, &cfg, prose, 0.0).unwrap(), 1.0);
        let cands = s(&["abc", "xyz"]);
        assert_eq!(timeliness_score("xyz", &cands, &cfg, prose, 0.0).unwrap(), 0.5);
        assert_eq!(timeliness_score("qqq", &cands, &cfg, prose, 0.0).unwrap(), 0.0);
        assert_eq!(
            timeliness_score("xyz", &cands, &cfg, TimelinessMode::Formula, 0.0).unwrap(),
            0.5
        );
        assert_eq!(
            timeliness_score("abc", &cands, &cfg, TimelinessMode::Formula, 0.0).unwrap(),
            0.5
        );
        assert!(timeliness_score("abc", &[], &cfg, prose, 0.0).is_err());
    }

    #[test]
    fn timeliness_ties_pick_newest_and_tau_zeroes() {
        let cfg = ChrfConfig::default();
        let cands = s(&["abc", "abc"]);
        assert_eq!(
            timeliness_score("abc", &cands, &cfg, TimelinessMode::Prose, 0.0).unwrap(),
            1.0
        );
        let partial = timeliness_score("abd", &s(&["abc"]), &cfg, TimelinessMode::Prose, 0.0).unwrap();
        assert!(partial > 0.0);
        assert_eq!(
            timeliness_score("abd", &s(&["abc"]), &cfg, TimelinessMode::Prose, 0.99).unwrap(),
            0.0
        );
    }

    #[test]
    fn xc_examples() {
        assert_abs_diff_eq!(xc(0.706, 0.489, 0.508).value, 0.552, epsilon = 1e-3);
        assert_abs_diff_eq!(xc(0.530, 0.342, 0.413).value, 0.415, epsilon = 1e-3);
        assert_abs_diff_eq!(xc(0.5, 0.5, 0.5).value, 0.5, epsilon = 1e-15);
        assert_eq!(xc(0.5, -0.1, 0.5), XcScore { value: 0.0, degenerate: true });
        assert_eq!(xc(0.5, 0.0, 0.5).value, 0.0);
        assert!(xc(f64::NAN, 0.5, 0.5).degenerate);
    }
}
