//! Scoring primitives shared by every metric: character/word n-gram
//! F-score (chrF / chrF++), Spearman rank correlation, Pearson correlation
//! and cosine similarity.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {required} values, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("score {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid chrF config: {0}")]
    InvalidConfig(&'static str),
}

/// chrF settings. The default is chrF++ (character orders 1..=6, word
/// orders 1..=2, beta 2). Set `word_ngram_max` to 0 for plain chrF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChrfConfig {
    pub char_ngram_max: usize,
    pub word_ngram_max: usize,
    pub beta: f64,
    pub strip_whitespace_for_char_ngrams: bool,
    pub case_fold: bool,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self {
            char_ngram_max: 6,
            word_ngram_max: 2,
            beta: 2.0,
            strip_whitespace_for_char_ngrams: true,
            case_fold: false,
        }
    }
}

impl ChrfConfig {
    /// Plain character-only chrF.
    pub fn chrf() -> Self {
        Self {
            word_ngram_max: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.char_ngram_max < 1 {
            return Err(MetricError::InvalidConfig("char_ngram_max must be >= 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MetricError::InvalidConfig("beta must be positive"));
        }
        Ok(())
    }
}

/// Per-order n-gram statistics: totals on each side and clipped matches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub hyp_total: usize,
    pub ref_total: usize,
    pub matches: usize,
}

fn count_ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

fn order_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> NgramStats {
    let h = count_ngrams(hyp, n);
    let r = count_ngrams(reference, n);
    let matches = h
        .iter()
        .map(|(gram, &c)| r.get(gram).map_or(0, |&rc| c.min(rc)))
        .sum();
    NgramStats {
        hyp_total: h.values().sum(),
        ref_total: r.values().sum(),
        matches,
    }
}

fn prepare(text: &str, case_fold: bool) -> String {
    let text = nfc(text);
    if case_fold {
        text.to_lowercase()
    } else {
        text
    }
}

/// N-gram statistics for character orders `1..=char_ngram_max` followed by
/// word orders `1..=word_ngram_max`.
pub fn chrf_stats(hypothesis: &str, reference: &str, cfg: &ChrfConfig) -> Vec<NgramStats> {
    let hyp = prepare(hypothesis, cfg.case_fold);
    let reference = prepare(reference, cfg.case_fold);

    let chars = |s: &str| -> Vec<char> {
        if cfg.strip_whitespace_for_char_ngrams {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        } else {
            s.chars().collect()
        }
    };
    let (hc, rc) = (chars(&hyp), chars(&reference));
    let mut stats: Vec<NgramStats> = (1..=cfg.char_ngram_max)
        .map(|n| order_stats(&hc, &rc, n))
        .collect();

    if cfg.word_ngram_max > 0 {
        let hw: Vec<&str> = hyp.split_whitespace().collect();
        let rw: Vec<&str> = reference.split_whitespace().collect();
        stats.extend((1..=cfg.word_ngram_max).map(|n| order_stats(&hw, &rw, n)));
    }
    stats
}

fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// Combines per-order statistics into a score in `[0, 1]`.
///
/// Orders where either side has no n-grams are left out of the average.
/// With no usable order at all the score is 0.
pub fn chrf_from_stats(stats: &[NgramStats], beta: f64) -> f64 {
    let mut sum = 0.0;
    let mut orders = 0usize;
    for s in stats {
        if s.hyp_total == 0 || s.ref_total == 0 {
            continue;
        }
        let precision = s.matches as f64 / s.hyp_total as f64;
        let recall = s.matches as f64 / s.ref_total as f64;
        sum += f_beta(precision, recall, beta);
        orders += 1;
    }
    if orders == 0 {
        0.0
    } else {
        sum / orders as f64
    }
}

/// Sentence-level chrF between a hypothesis and a reference, in `[0, 1]`.
///
/// Inputs are NFC-normalized first. An empty hypothesis always scores 0.
pub fn chrf(hypothesis: &str, reference: &str, cfg: &ChrfConfig) -> f64 {
    chrf_from_stats(&chrf_stats(hypothesis, reference, cfg), cfg.beta)
}

/// Per-item scores in `[0, 1]` in a fixed item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(MetricError::NonFinite(index));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(MetricError::OutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A correlation coefficient plus whether it was undefined (an input had
/// zero variance), in which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort {
            required: 2,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i % x.len()));
    }
    Ok(())
}

/// Fractional ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(x, y))
}

/// Spearman rank correlation: Pearson correlation of average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CosineError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vectors must have at least one dimension")]
    Empty,
}

/// Cosine similarity accumulated in f64. A zero-norm operand gives 0.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, CosineError> {
    if u.len() != v.len() {
        return Err(CosineError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(CosineError::Empty);
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}
