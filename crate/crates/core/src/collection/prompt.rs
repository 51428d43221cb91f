use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CollectionError;
use crate::consistency::PromptVariant;
use crate::dataset::{LanguageCode, QaItem, TimelinessItem};
use crate::textmetrics::nfc;

pub const SYSTEM_PROMPT: &str = "Answer the question with a short factual answer.";
pub const ANSWER_CUE: &str = "A:";

/// Picks `k` distinct exemplars from `pool`, deterministically for a given
/// `(seed, domain)`. The returned order is the sampled order.
pub fn sample_exemplars<'a>(
    pool: &'a [QaItem],
    k: usize,
    seed: u64,
    domain: &str,
) -> Result<Vec<&'a QaItem>, CollectionError> {
    if k > pool.len() {
        return Err(CollectionError::PoolTooSmall {
            domain: domain.to_owned(),
            needed: k,
            available: pool.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| &pool[i])
        .collect())
}

/// The thing being asked about: a regular QA item or a timeliness item.
#[derive(Debug, Clone, Copy)]
pub enum PromptTarget<'a> {
    Qa(&'a QaItem),
    Timeliness(&'a TimelinessItem),
}

impl<'a> PromptTarget<'a> {
    pub fn id(&self) -> &'a str {
        match self {
            Self::Qa(i) => &i.id,
            Self::Timeliness(i) => &i.id,
        }
    }

    pub fn question(&self, lang: &LanguageCode) -> Option<&'a str> {
        match self {
            Self::Qa(i) => i.question(lang),
            Self::Timeliness(i) => i.question(lang),
        }
    }
}

/// Relation templates for the `p2` variant, e.g.
/// `{"templates": {"country": {"En": "In which country is {entity} located?"}},
///   "entities": {"Buenos Aires": {"Zh": "布宜诺斯艾利斯"}}}`.
/// `{entity}` is replaced by the entity's label in the prompt language, or
/// by the item's entity string when no label is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: BTreeMap<String, BTreeMap<LanguageCode, String>>,
    #[serde(default)]
    pub entities: BTreeMap<String, BTreeMap<LanguageCode, String>>,
}

impl TemplateSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CollectionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CollectionError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CollectionError::input(path, e))
    }

    pub fn render(&self, item: &QaItem, lang: &LanguageCode) -> Result<String, CollectionError> {
        let template = self
            .templates
            .get(&item.relation)
            .and_then(|m| m.get(lang))
            .ok_or_else(|| CollectionError::MissingTemplate {
                relation: item.relation.clone(),
                language: lang.clone(),
            })?;
        let entity = self
            .entities
            .get(&item.entity)
            .and_then(|m| m.get(lang))
            .unwrap_or(&item.entity);
        Ok(nfc(&template.replace("{entity}", entity)))
    }
}

/// Externally supplied question wordings keyed by item id, read from JSONL
/// lines `{"id": "...", "q": {"En": "...", ...}}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionOverrides {
    pub questions: BTreeMap<String, BTreeMap<LanguageCode, String>>,
}

#[derive(Deserialize)]
struct OverrideLine {
    id: String,
    q: BTreeMap<LanguageCode, String>,
}

impl QuestionOverrides {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CollectionError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CollectionError::input(path, e))?;
        let mut questions = BTreeMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CollectionError::input(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: OverrideLine = serde_json::from_str(&line)
                .map_err(|e| CollectionError::input(path, format!("line {}: {e}", n + 1)))?;
            let q = rec.q.into_iter().map(|(k, v)| (k, nfc(&v))).collect();
            questions.insert(rec.id, q);
        }
        Ok(Self { questions })
    }

    pub fn get(&self, id: &str, lang: &LanguageCode) -> Option<&str> {
        self.questions
            .get(id)
            .and_then(|m| m.get(lang))
            .map(String::as_str)
    }
}

/// Extra inputs some prompt variants need.
#[derive(Debug, Clone, Default)]
pub struct PromptSources {
    pub templates: Option<TemplateSet>,
    /// Used by `p3` and `custom:*` variants.
    pub overrides: Option<QuestionOverrides>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: &str) -> Self {
        Self {
            role: role.to_owned(),
            content: content.to_owned(),
        }
    }
}

/// A few-shot prompt: exemplar question/answer pairs, then the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub shots: Vec<(String, String)>,
    pub question: String,
}

impl Prompt {
    /// Plain-text rendering: each shot as `question\nA: answer`, blank-line
    /// separated, then `question\nA:`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, a) in &self.shots {
            out.push_str(q);
            out.push('\n');
            out.push_str(ANSWER_CUE);
            out.push(' ');
            out.push_str(a);
            out.push_str("\n\n");
        }
        out.push_str(&self.question);
        out.push('\n');
        out.push_str(ANSWER_CUE);
        out
    }

    /// Chat rendering: a system turn, one user/assistant turn per shot, then
    /// the question as the final user turn.
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let mut messages = vec![ChatMessage::new("system", SYSTEM_PROMPT)];
        for (q, a) in &self.shots {
            messages.push(ChatMessage::new("user", q));
            messages.push(ChatMessage::new("assistant", a));
        }
        messages.push(ChatMessage::new("user", &self.question));
        messages
    }
}

/// Builds the prompt for `target` in `lang`. Exemplars always use their
/// original question and answer; the variant only changes how the target
/// question is worded. Timeliness items have no relation template, so
/// `p2` falls back to their original question.
pub fn build_prompt(
    target: PromptTarget<'_>,
    lang: &LanguageCode,
    exemplars: &[&QaItem],
    variant: &PromptVariant,
    sources: &PromptSources,
) -> Result<Prompt, CollectionError> {
    let missing_question = || CollectionError::MissingQuestion {
        item: target.id().to_owned(),
        language: lang.clone(),
    };
    let question = match (variant, target) {
        (PromptVariant::P1, _) | (PromptVariant::P2, PromptTarget::Timeliness(_)) => {
            target.question(lang).ok_or_else(missing_question)?.to_owned()
        }
        (PromptVariant::P2, PromptTarget::Qa(item)) => sources
            .templates
            .as_ref()
            .ok_or(CollectionError::MissingSource("p2 needs a template file"))?
            .render(item, lang)?,
        (PromptVariant::P3 | PromptVariant::Custom(_), _) => sources
            .overrides
            .as_ref()
            .ok_or(CollectionError::MissingSource(
                "p3/custom variants need a question file",
            ))?
            .get(target.id(), lang)
            .ok_or_else(|| CollectionError::MissingParaphrase {
                item: target.id().to_owned(),
                language: lang.clone(),
            })?
            .to_owned(),
    };
    let shots = exemplars
        .iter()
        .map(|ex| {
            let q = ex.question(lang).ok_or_else(|| CollectionError::MissingQuestion {
                item: ex.id.clone(),
                language: lang.clone(),
            })?;
            let a = ex.answer(lang).unwrap_or("");
            Ok((q.to_owned(), a.to_owned()))
        })
        .collect::<Result<_, CollectionError>>()?;
    Ok(Prompt { shots, question })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(s: &str) -> LanguageCode {
        LanguageCode::new(s).unwrap()
    }

    fn qa(id: &str, q: &str, a: &str) -> QaItem {
        QaItem {
            id: id.into(),
            domain: "geography".into(),
            entity: "Buenos Aires".into(),
            relation: "country".into(),
            questions: [(lang("En"), q.to_owned())].into(),
            answers: [(lang("En"), a.to_owned())].into(),
        }
    }

    fn pool(n: usize) -> Vec<QaItem> {
        (0..n)
            .map(|i| qa(&format!("ex{i}"), &format!("Q{i}?"), &format!("A{i}")))
            .collect()
    }

    #[test]
    fn sampling_contract() {
        let p = pool(20);
        assert!(sample_exemplars(&p, 0, 1, "geography").unwrap().is_empty());
        let a = sample_exemplars(&p, 5, 42, "geography").unwrap();
        let b = sample_exemplars(&p, 5, 42, "geography").unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<&str> = a.iter().map(|e| e.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        let other = sample_exemplars(&p, 5, 42, "sports").unwrap();
        let other_seed = sample_exemplars(&p, 5, 43, "geography").unwrap();
        assert!(other != a || other_seed != a);
        assert!(matches!(
            sample_exemplars(&p, 21, 1, "geography"),
            Err(CollectionError::PoolTooSmall { needed: 21, available: 20, .. })
        ));
    }

    #[test]
    fn zero_shot_p1_is_question_plus_cue() {
        let item = qa("g1", "In which country is Buenos Aires located?", "Argentina");
        let p = build_prompt(
            PromptTarget::Qa(&item),
            &lang("En"),
            &[],
            &PromptVariant::P1,
            &PromptSources::default(),
        )
        .unwrap();
        assert_eq!(p.to_text(), "In which country is Buenos Aires located?\nA:");
        assert_eq!(p.to_messages().len(), 2);
    }

    #[test]
    fn exemplars_precede_query_in_order() {
        let item = qa("g1", "Where?", "Argentina");
        let p = pool(3);
        let ex = vec![&p[2], &p[0]];
        let prompt = build_prompt(
            PromptTarget::Qa(&item),
            &lang("En"),
            &ex,
            &PromptVariant::P1,
            &PromptSources::default(),
        )
        .unwrap();
        assert_eq!(prompt.to_text(), "Q2?\nA: A2\n\nQ0?\nA: A0\n\nWhere?\nA:");
        let messages = prompt.to_messages();
        let roles: Vec<&str> = messages.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user", "assistant", "user"]);
    }

    #[test]
    fn p3_requires_paraphrase() {
        let item = qa("g1", "Where?", "Argentina");
        let err = build_prompt(
            PromptTarget::Qa(&item),
            &lang("En"),
            &[],
            &PromptVariant::P3,
            &PromptSources {
                templates: None,
                overrides: Some(QuestionOverrides::default()),
            },
        )
        .unwrap_err();
        assert!(matches!(err, CollectionError::MissingParaphrase { .. }));
    }

    #[test]
    fn p2_renders_template_with_entity_label() {
        let item = qa("g1", "Where?", "Argentina");
        let templates: TemplateSet = serde_json::from_str(
            r#"{"templates":{"country":{"En":"In which country is {entity} located?","Zh":"{entity}属于哪个国家？"}},
                "entities":{"Buenos Aires":{"Zh":"布宜诺斯艾利斯"}}}"#,
        )
        .unwrap();
        assert_eq!(
            templates.render(&item, &lang("Zh")).unwrap(),
            "布宜诺斯艾利斯属于哪个国家？"
        );
        assert!(matches!(
            templates.render(&item, &lang("De")),
            Err(CollectionError::MissingTemplate { .. })
        ));
    }
}
