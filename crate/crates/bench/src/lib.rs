//! Synthetic workloads shared by the benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlingual_core::consistency::AnswerSet;
use xlingual_core::dataset::LanguageCode;
use xlingual_core::embedding::{EmbeddingTable, EmbeddingVector, MockProvider};

pub const LANGUAGES: [&str; 12] = [
    "En", "Zh", "Es", "Fr", "De", "Ja", "Ko", "Ru", "Ar", "Pt", "It", "Vi",
];

/// Short answer pairs in several scripts, as chrF sees them when scoring.
pub const ANSWER_PAIRS: [(&str, &str); 8] = [
    ("Buenos Aires, Argentina", "Argentina"),
    ("阿根廷共和国", "阿根廷"),
    ("アルゼンチン共和国", "アルゼンチン"),
    ("아르헨티나 공화국", "아르헨티나"),
    ("Республика Аргентина", "Аргентина"),
    ("الأرجنتين", "جمهورية الأرجنتين"),
    ("Albert Einstein", "Einstein"),
    ("the football club of Barcelona", "FC Barcelona"),
];

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Vector with many ties: values drawn from `levels` distinct values.
pub fn tied_vector(n: usize, levels: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| f64::from(rng.random_range(0..levels))).collect()
}

pub struct XscWorkload {
    pub answers: AnswerSet,
    pub item_ids: Vec<String>,
    pub languages: Vec<LanguageCode>,
    pub table: EmbeddingTable,
}

impl XscWorkload {
    pub fn ids(&self) -> Vec<&str> {
        self.item_ids.iter().map(String::as_str).collect()
    }
}

/// Distinct answers for every (language, item) cell, each with a mock
/// embedding of `dims` dimensions.
pub fn xsc_workload(languages: usize, items: usize, dims: usize) -> XscWorkload {
    let provider = MockProvider::new(dims, 1);
    let languages: Vec<LanguageCode> = LANGUAGES[..languages]
        .iter()
        .map(|c| LanguageCode::new(*c).expect("valid code"))
        .collect();
    let item_ids: Vec<String> = (0..items).map(|i| format!("q{i}")).collect();
    let mut answers = AnswerSet::new("bench", "mock");
    let mut table = EmbeddingTable::default();
    for lang in &languages {
        for id in &item_ids {
            let text = format!("{lang}-{id}");
            let v = EmbeddingVector::new(provider.vector_for(&text)).expect("finite vector");
            table.insert(&text, Arc::new(v));
            answers.insert(lang.clone(), id, text);
        }
    }
    XscWorkload {
        answers,
        item_ids,
        languages,
        table,
    }
}
