//! Answer collection: few-shot prompting of a chat-completions endpoint for
//! every (language, item) cell, persisted so interrupted runs can resume.

mod prompt;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prompt::{
    build_prompt, sample_exemplars, ChatMessage, Prompt, PromptSources, PromptTarget,
    QuestionOverrides, TemplateSet, ANSWER_CUE, SYSTEM_PROMPT,
};
pub use store::{
    load_answer_set, AnswerRecord, AnswerStore, CellStatus, StoreHeader, ANSWERS_SCHEMA,
};

use crate::consistency::{AnswerSet, PromptVariant};
use crate::dataset::{Dataset, LanguageCode, QaItem, TIMELINESS_DOMAIN};
use crate::retry::{RetryPolicy, TokenBucket};
use crate::textmetrics::nfc;

pub const API_KEY_ENV: &str = "XLINGUAL_API_KEY";
pub const MANIFEST_SCHEMA: &str = "xlingual-manifest/1";

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("invalid collection config: {0}")]
    Config(String),
    #[error("domain {domain:?} has {available} exemplars, {needed} needed")]
    PoolTooSmall {
        domain: String,
        needed: usize,
        available: usize,
    },
    #[error("{0}")]
    MissingSource(&'static str),
    #[error("no template for relation {relation:?} in {language}")]
    MissingTemplate {
        relation: String,
        language: LanguageCode,
    },
    #[error("no paraphrase for item {item:?} in {language}")]
    MissingParaphrase { item: String, language: LanguageCode },
    #[error("item {item:?} has no question in {language}")]
    MissingQuestion { item: String, language: LanguageCode },
    #[error("endpoint rejected credentials (HTTP {status}); check ${API_KEY_ENV}")]
    Auth { status: u16 },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("answer file line {line}: {message}")]
    StoreFormat { line: usize, message: String },
    #[error("{path} was written by a different run ({field} differs); use a new output path")]
    IncompatibleStore { path: PathBuf, field: &'static str },
}

impl CollectionError {
    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// How the model's raw text becomes the stored answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerExtraction {
    /// Trimmed text up to the first line break.
    #[default]
    FirstLine,
    Trim,
    Verbatim,
}

impl AnswerExtraction {
    pub fn apply(self, raw: &str) -> String {
        let s = match self {
            Self::FirstLine => raw.trim().lines().next().unwrap_or("").trim(),
            Self::Trim => raw.trim(),
            Self::Verbatim => raw,
        };
        nfc(s)
    }
}

impl std::str::FromStr for AnswerExtraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-line" => Ok(Self::FirstLine),
            "trim" => Ok(Self::Trim),
            "verbatim" => Ok(Self::Verbatim),
            other => Err(format!(
                "unknown answer extraction {other:?} (first-line, trim, verbatim)"
            )),
        }
    }
}

/// Request shape sent to the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFormat {
    /// `{"messages": [...]}`, answer at `choices[0].message.content`.
    #[default]
    Chat,
    /// `{"prompt": "..."}`, answer at `choices[0].text`.
    Completion,
}

impl std::str::FromStr for PromptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat" => Ok(Self::Chat),
            "completion" => Ok(Self::Completion),
            other => Err(format!("unknown prompt format {other:?} (chat, completion)")),
        }
    }
}

fn default_decoding() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("temperature".into(), Value::from(0));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    pub endpoint: String,
    pub model: String,
    /// Derived from the other settings and the dataset when unset.
    pub run_id: Option<String>,
    pub prompt_variant: PromptVariant,
    pub format: PromptFormat,
    pub shots: usize,
    /// Exemplar sampling seed.
    pub seed: u64,
    pub concurrency: usize,
    /// Requests per second; 0 means unlimited.
    pub rate_limit: f64,
    pub burst: u32,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Merged into every request body as-is.
    pub decoding: Map<String, Value>,
    pub extraction: AnswerExtraction,
    /// Re-request cells whose earlier attempts all failed.
    pub retry_failed: bool,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            run_id: None,
            prompt_variant: PromptVariant::P1,
            format: PromptFormat::Chat,
            shots: 5,
            seed: 0,
            concurrency: 4,
            rate_limit: 0.0,
            burst: 1,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            decoding: default_decoding(),
            extraction: AnswerExtraction::FirstLine,
            retry_failed: false,
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<(), CollectionError> {
        let bad = |m: &str| Err(CollectionError::Config(m.to_owned()));
        if self.endpoint.is_empty() {
            return bad("endpoint is required");
        }
        if self.model.is_empty() {
            return bad("model is required");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if !self.rate_limit.is_finite() || self.rate_limit < 0.0 {
            return bad("rate_limit must be a non-negative number");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1");
        }
        for key in ["model", "messages", "prompt"] {
            if self.decoding.contains_key(key) {
                return Err(CollectionError::Config(format!(
                    "decoding must not set {key:?}"
                )));
            }
        }
        Ok(())
    }

    /// Stable id for a (config, dataset) combination.
    pub fn derive_run_id(&self, dataset_hash: &str) -> String {
        let mut h = Sha256::new();
        for part in [
            self.model.as_str(),
            &self.prompt_variant.to_string(),
            &self.seed.to_string(),
            &self.shots.to_string(),
            dataset_hash,
        ] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        let digest = hex::encode(h.finalize());
        format!("{}-{}", self.prompt_variant, &digest[..12])
            .replace(':', "-")
    }
}

/// Everything needed to audit a collection run and rebuild any of its
/// prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub run_id: String,
    pub dataset_hash: String,
    pub languages: Vec<LanguageCode>,
    pub config: CollectionConfig,
    pub started_at: String,
    pub finished_at: String,
    /// Sampled exemplar ids per domain, in prompt order.
    pub exemplars: BTreeMap<String, Vec<String>>,
    pub ok: usize,
    pub failed: usize,
    pub requests: Vec<AnswerRecord>,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, CollectionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CollectionError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CollectionError::input(path, e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CollectionError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CollectionError::Store {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Rebuilds the prompt sent for `(lang, item)` from the dataset and the
    /// recorded exemplar ids.
    pub fn prompt_for(
        &self,
        dataset: &Dataset,
        sources: &PromptSources,
        lang: &LanguageCode,
        item: &str,
    ) -> Result<Prompt, CollectionError> {
        let record = self
            .requests
            .iter()
            .find(|r| &r.language == lang && r.item_id == item)
            .ok_or_else(|| CollectionError::Config(format!("no request for {lang}/{item}")))?;
        let pool: Vec<&QaItem> = dataset.few_shot_pool.values().flatten().collect();
        let exemplars: Vec<&QaItem> = record
            .exemplar_ids
            .iter()
            .map(|id| {
                pool.iter()
                    .copied()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| CollectionError::Config(format!("unknown exemplar {id:?}")))
            })
            .collect::<Result<_, _>>()?;
        let target = find_target(dataset, item)
            .ok_or_else(|| CollectionError::Config(format!("unknown item {item:?}")))?;
        build_prompt(target, lang, &exemplars, &self.config.prompt_variant, sources)
    }
}

/// The manifest path that goes with an answer file.
pub fn manifest_path(answers: &Path) -> PathBuf {
    answers.with_extension("manifest.json")
}

fn find_target<'a>(dataset: &'a Dataset, id: &str) -> Option<PromptTarget<'a>> {
    dataset
        .qa_items
        .iter()
        .find(|i| i.id == id)
        .map(PromptTarget::Qa)
        .or_else(|| {
            dataset
                .timeliness_items
                .iter()
                .find(|i| i.id == id)
                .map(PromptTarget::Timeliness)
        })
}

#[derive(Debug)]
pub struct CollectionRun {
    pub answers: AnswerSet,
    pub manifest: RunManifest,
}

struct Cell {
    language: LanguageCode,
    item_id: String,
    exemplar_ids: Vec<String>,
    prompt: Prompt,
}

enum AttemptError {
    Transient(String),
    Permanent(String),
    Fatal(CollectionError),
}

struct ChatClient {
    http: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    format: PromptFormat,
    decoding: Map<String, Value>,
    retry: RetryPolicy,
    bucket: TokenBucket,
}

impl ChatClient {
    fn body(&self, prompt: &Prompt) -> Value {
        let mut body = self.decoding.clone();
        body.insert("model".into(), Value::from(self.model.clone()));
        match self.format {
            PromptFormat::Chat => {
                body.insert(
                    "messages".into(),
                    serde_json::to_value(prompt.to_messages()).expect("messages serialize"),
                );
            }
            PromptFormat::Completion => {
                body.insert("prompt".into(), Value::from(prompt.to_text()));
            }
        }
        Value::Object(body)
    }

    async fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        self.bucket.acquire().await;
        let mut req = self.http.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(AttemptError::Fatal(CollectionError::Auth {
                status: status.as_u16(),
            }));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS
            || status == reqwest::StatusCode::REQUEST_TIMEOUT
            || status.is_server_error()
        {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(AttemptError::Permanent(format!("HTTP {status}: {body}")));
        }
        let value: Value = resp
            .json()
            .await
            .map_err(|e| AttemptError::Transient(format!("malformed response: {e}")))?;
        let choice = &value["choices"][0];
        let text = match self.format {
            PromptFormat::Chat => &choice["message"]["content"],
            PromptFormat::Completion => &choice["text"],
        };
        text.as_str()
            .map(str::to_owned)
            .ok_or_else(|| AttemptError::Transient("malformed response: no answer text".into()))
    }

    /// Returns `(raw, attempts, error)`; a fatal error aborts the run.
    async fn request(&self, prompt: &Prompt) -> Result<(Option<String>, u32, Option<String>), CollectionError> {
        let body = self.body(prompt);
        let max = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            match self.attempt(&body).await {
                Ok(raw) => return Ok((Some(raw), attempt, None)),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Permanent(m)) => return Ok((None, attempt, Some(m))),
                Err(AttemptError::Transient(m)) => {
                    log::debug!("attempt {attempt}/{max} failed: {m}");
                    last = m;
                    if attempt < max {
                        let delay = self.retry.backoff(attempt, &mut rand::rng());
                        tokio::time::sleep(delay).await;
                    }
                }
            }
        }
        Ok((None, max, Some(last)))
    }
}

/// Sampled exemplars per domain. Every language and item of a domain sees
/// the same exemplars.
fn exemplar_plan<'a>(
    dataset: &'a Dataset,
    cfg: &CollectionConfig,
) -> Result<BTreeMap<String, Vec<&'a QaItem>>, CollectionError> {
    let mut domains: Vec<String> = dataset.domains();
    if !dataset.timeliness_items.is_empty() {
        domains.push(TIMELINESS_DOMAIN.to_owned());
    }
    domains
        .into_iter()
        .map(|d| {
            let picked = sample_exemplars(dataset.exemplar_pool(&d), cfg.shots, cfg.seed, &d)?;
            Ok((d, picked))
        })
        .collect()
}

/// Collects answers for every `(language, item)` cell of `dataset`
/// (QA items, then timeliness items) into the JSONL file at `store_path`.
///
/// Cells already answered in an existing file are skipped, as are cells
/// that failed unless `cfg.retry_failed` is set. Each finished request is
/// appended before the next result is handled, so an interrupted run loses
/// at most the requests in flight. The manifest is written next to the
/// answer file when the run completes.
pub async fn collect_answers(
    dataset: &Dataset,
    languages: &[LanguageCode],
    cfg: &CollectionConfig,
    sources: &PromptSources,
    store_path: impl AsRef<Path>,
) -> Result<CollectionRun, CollectionError> {
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let store_path = store_path.as_ref();
    let dataset_hash = dataset.content_hash();
    let run_id = cfg
        .run_id
        .clone()
        .unwrap_or_else(|| cfg.derive_run_id(&dataset_hash));
    let plan = exemplar_plan(dataset, cfg)?;

    let header = StoreHeader {
        schema: ANSWERS_SCHEMA.into(),
        run_id: run_id.clone(),
        model_id: cfg.model.clone(),
        prompt_variant: cfg.prompt_variant.clone(),
        seed: cfg.seed,
        shots: cfg.shots,
        dataset_hash: dataset_hash.clone(),
    };
    let mut store = AnswerStore::open_or_create(store_path, header)?;

    let targets: Vec<(PromptTarget<'_>, &str)> = dataset
        .qa_items
        .iter()
        .map(|i| (PromptTarget::Qa(i), i.domain.as_str()))
        .chain(
            dataset
                .timeliness_items
                .iter()
                .map(|i| (PromptTarget::Timeliness(i), TIMELINESS_DOMAIN)),
        )
        .collect();

    let mut cells = Vec::new();
    for lang in languages {
        for (target, domain) in &targets {
            let done = store.record(lang, target.id()).is_some_and(|r| {
                r.status == CellStatus::Ok || !cfg.retry_failed
            });
            if done {
                continue;
            }
            let exemplars = &plan[*domain];
            let prompt = build_prompt(*target, lang, exemplars, &cfg.prompt_variant, sources)?;
            cells.push(Cell {
                language: lang.clone(),
                item_id: target.id().to_owned(),
                exemplar_ids: exemplars.iter().map(|e| e.id.clone()).collect(),
                prompt,
            });
        }
    }
    log::info!(
        "{}: {} requests to make, {} cells already stored",
        run_id,
        cells.len(),
        store.records().count()
    );

    if !cells.is_empty() {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| CollectionError::Config(e.to_string()))?;
        let client = Arc::new(ChatClient {
            http,
            endpoint: cfg.endpoint.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            model: cfg.model.clone(),
            format: cfg.format,
            decoding: cfg.decoding.clone(),
            retry: cfg.retry,
            bucket: TokenBucket::new(cfg.rate_limit, cfg.burst),
        });
        let mut results = stream::iter(cells)
            .map(|cell| {
                let client = Arc::clone(&client);
                async move {
                    let out = client.request(&cell.prompt).await;
                    (cell, out)
                }
            })
            .buffer_unordered(cfg.concurrency);
        while let Some((cell, out)) = results.next().await {
            let (raw, attempts, error) = out?;
            let status = if raw.is_some() {
                CellStatus::Ok
            } else {
                log::warn!(
                    "{}/{} failed after {attempts} attempts: {}",
                    cell.language,
                    cell.item_id,
                    error.as_deref().unwrap_or("")
                );
                CellStatus::Failed
            };
            let answer = raw
                .as_deref()
                .map(|r| cfg.extraction.apply(r))
                .unwrap_or_default();
            store.append(AnswerRecord {
                language: cell.language,
                item_id: cell.item_id,
                status,
                attempts,
                raw,
                answer,
                exemplar_ids: cell.exemplar_ids,
                error,
            })?;
        }
    }

    let requests: Vec<AnswerRecord> = store.records().cloned().collect();
    let failed = requests
        .iter()
        .filter(|r| r.status == CellStatus::Failed)
        .count();
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool: format!("xlingual {}", env!("CARGO_PKG_VERSION")),
        run_id,
        dataset_hash,
        languages: languages.to_vec(),
        config: cfg.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        exemplars: plan
            .iter()
            .map(|(d, ex)| (d.clone(), ex.iter().map(|e| e.id.clone()).collect()))
            .collect(),
        ok: requests.len() - failed,
        failed,
        requests,
    };
    manifest.write(manifest_path(store_path))?;
    Ok(CollectionRun {
        answers: store.to_answer_set(),
        manifest,
    })
}
