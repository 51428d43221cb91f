#![allow(dead_code)]

pub mod criteria;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use xlingual_core::collection::{collect_answers, CollectionConfig, PromptSources};
use xlingual_core::consistency::{score, ScoringOptions};
use xlingual_core::dataset::{load_dataset, Dataset};
use xlingual_core::embedding::{Embedder, EmbeddingCache, MockProvider};
use xlingual_core::retry::RetryPolicy;
use xlingual_core::testing::{scripted_model, MockLlm};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn mini_dataset() -> Dataset {
    load_dataset(fixture("makqa_mini.jsonl")).expect("fixture loads")
}

/// Brute-force chrF: every n-gram is materialized as a `String` and counted
/// by linear scan. Whitespace is dropped for character n-grams; words split
/// on whitespace.
pub fn chrf_oracle(hyp: &str, reference: &str, char_max: usize, word_max: usize, beta: f64) -> f64 {
    fn grams(units: &[String], n: usize, joiner: &str) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        if units.len() < n {
            return out;
        }
        for start in 0..=units.len() - n {
            let g = units[start..start + n].join(joiner);
            match out.iter_mut().find(|(k, _)| *k == g) {
                Some((_, c)) => *c += 1,
                None => out.push((g, 1)),
            }
        }
        out
    }
    fn order_f(h: &[(String, usize)], r: &[(String, usize)], beta: f64) -> Option<f64> {
        let ht: usize = h.iter().map(|(_, c)| c).sum();
        let rt: usize = r.iter().map(|(_, c)| c).sum();
        if ht == 0 || rt == 0 {
            return None;
        }
        let mut m = 0usize;
        for (g, c) in h {
            for (g2, c2) in r {
                if g == g2 {
                    m += (*c).min(*c2);
                }
            }
        }
        let p = m as f64 / ht as f64;
        let rc = m as f64 / rt as f64;
        if p + rc == 0.0 {
            return Some(0.0);
        }
        let b2 = beta * beta;
        Some((1.0 + b2) * p * rc / (b2 * p + rc))
    }
    use unicode_normalization::UnicodeNormalization;
    let h: String = hyp.nfc().collect();
    let r: String = reference.nfc().collect();
    let hc: Vec<String> = h.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
    let rc: Vec<String> = r.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
    let hw: Vec<String> = h.split_whitespace().map(String::from).collect();
    let rw: Vec<String> = r.split_whitespace().map(String::from).collect();
    let mut fs = Vec::new();
    for n in 1..=char_max {
        fs.extend(order_f(&grams(&hc, n, ""), &grams(&rc, n, ""), beta));
    }
    for n in 1..=word_max {
        fs.extend(order_f(&grams(&hw, n, " "), &grams(&rw, n, " "), beta));
    }
    if fs.is_empty() {
        0.0
    } else {
        fs.iter().sum::<f64>() / fs.len() as f64
    }
}

/// Closed-form Spearman for tie-free data: 1 - 6 Σd² / (n (n² - 1)).
pub fn spearman_d2(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64)
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub const GOLDEN_SEED: u64 = 7;
pub const GOLDEN_DIMS: usize = 64;

pub fn golden_collection_config(endpoint: &str) -> CollectionConfig {
    CollectionConfig {
        endpoint: endpoint.to_owned(),
        model: "scripted-mock".into(),
        seed: GOLDEN_SEED,
        concurrency: 4,
        retry: RetryPolicy::immediate(3),
        ..CollectionConfig::default()
    }
}

/// Fixture → scripted mock model → mock embedder (cached at `cache_path`)
/// → report JSON. Returns the JSON and how many texts the embedding
/// provider had to compute.
pub async fn golden_run(work: &Path, cache_path: &Path) -> (String, usize) {
    let dataset = mini_dataset();
    let llm = MockLlm::start(scripted_model(&dataset)).await;
    let cfg = golden_collection_config(&llm.url);
    let run = collect_answers(
        &dataset,
        &dataset.languages,
        &cfg,
        &PromptSources::default(),
        work.join("answers.jsonl"),
    )
    .await
    .expect("collection succeeds");

    let provider = Arc::new(MockProvider::new(GOLDEN_DIMS, GOLDEN_SEED));
    let cache = Arc::new(EmbeddingCache::open(cache_path).expect("cache opens"));
    let embedder = Embedder::new(provider.clone(), cache, GOLDEN_DIMS, 16);
    let report = score(&run.answers, &dataset, &embedder, &ScoringOptions::default())
        .await
        .expect("scoring succeeds");
    embedder.cache().flush().expect("cache flush");
    (report.to_json(), provider.texts_embedded())
}

pub fn golden_report_path() -> PathBuf {
    fixture("golden/e2e_report.json")
}

/// Compares against the stored golden file, or rewrites it when
/// `XLINGUAL_BLESS` is set.
pub fn check_golden(path: &Path, actual: &str) -> Result<(), String> {
    if std::env::var_os("XLINGUAL_BLESS").is_some() {
        std::fs::write(path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e} (run with XLINGUAL_BLESS=1 to create)", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or(expected.lines().count().min(actual.lines().count()), |i| i)
            + 1;
        Err(format!("{} differs from output at line {line}", path.display()))
    }
}
