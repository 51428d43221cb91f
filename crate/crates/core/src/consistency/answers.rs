use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ConsistencyError;
use crate::dataset::LanguageCode;

/// Which question wording was used to prompt the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PromptVariant {
    /// The dataset question as written.
    #[default]
    P1,
    /// A relation template filled with the item's entity.
    P2,
    /// An externally supplied paraphrase.
    P3,
    /// A named, externally supplied question set.
    Custom(String),
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::P1 => f.write_str("p1"),
            Self::P2 => f.write_str("p2"),
            Self::P3 => f.write_str("p3"),
            Self::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "p3" => Ok(Self::P3),
            other => match other.strip_prefix("custom:") {
                Some(name) if !name.is_empty() => Ok(Self::Custom(name.to_owned())),
                _ => Err(format!(
                    "unknown prompt variant {other:?} (p1, p2, p3, custom:<name>)"
                )),
            },
        }
    }
}

impl TryFrom<String> for PromptVariant {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PromptVariant> for String {
    fn from(value: PromptVariant) -> Self {
        value.to_string()
    }
}

/// A model's answers keyed by language, then item id. A failed request is
/// stored as an empty string, never as an absent entry.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerSet {
    pub run_id: String,
    pub model_id: String,
    pub prompt_variant: PromptVariant,
    pub seed: u64,
    pub answers: BTreeMap<LanguageCode, BTreeMap<String, String>>,
}

impl AnswerSet {
    pub fn new(run_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            model_id: model_id.into(),
            ..Self::default()
        }
    }

    pub fn get(&self, lang: &LanguageCode, item: &str) -> Option<&str> {
        self.answers
            .get(lang)
            .and_then(|m| m.get(item))
            .map(String::as_str)
    }

    pub fn insert(&mut self, lang: LanguageCode, item: impl Into<String>, answer: impl Into<String>) {
        self.answers
            .entry(lang)
            .or_default()
            .insert(item.into(), answer.into());
    }

    pub fn len(&self) -> usize {
        self.answers.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every (language, item) pair the set does not cover.
    pub fn missing<'a>(
        &self,
        langs: &'a [LanguageCode],
        items: &'a [&'a str],
    ) -> Vec<(&'a LanguageCode, &'a str)> {
        langs
            .iter()
            .flat_map(|l| items.iter().map(move |i| (l, *i)))
            .filter(|(l, i)| self.get(l, i).is_none())
            .collect()
    }

    pub(crate) fn require(&self, langs: &[LanguageCode], items: &[&str]) -> Result<(), ConsistencyError> {
        let missing = self.missing(langs, items);
        match missing.first() {
            None => Ok(()),
            Some((language, item)) => Err(ConsistencyError::MissingAnswers {
                count: missing.len(),
                language: (*language).clone(),
                item: (*item).to_owned(),
            }),
        }
    }

    /// Answer lookup for scoring. Callers check coverage first.
    pub(crate) fn answer(&self, lang: &LanguageCode, item: &str) -> &str {
        self.get(lang, item).unwrap_or("")
    }
}
