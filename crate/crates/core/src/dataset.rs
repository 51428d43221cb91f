//! MAKQA multilingual aligned QA dataset: types, JSONL format, loader and
//! alignment validation.
//!
//! File layout (one JSON object per line, UTF-8):
//!
//! ```text
//! {"schema":"makqa/1","languages":["En","Zh","De"]}
//! {"id":"geo-001","domain":"geography","entity":"Buenos Aires","relation":"country","q":{...},"a":{...}}
//! {"id":"time-001","type":"timeliness","q":{...},"candidates":{"En":["newest","older"],...}}
//! {"id":"ex-geo-01","type":"exemplar","domain":"geography","entity":"...","relation":"...","q":{...},"a":{...}}
//! ```
//!
//! QA lines may carry `"type":"qa"` or omit `type`. Exemplar lines form the
//! few-shot pool, keyed by their domain. All text is normalized to NFC on
//! load. Languages present in a record but not declared in the header are
//! kept (and written back out) but never scored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::textmetrics::nfc;

pub const SCHEMA: &str = "makqa/1";

/// Pool key used to look up few-shot exemplars for timeliness questions.
pub const TIMELINESS_DOMAIN: &str = "timeliness";

/// The twelve MAKQA languages, in the order the dataset paper lists them.
pub const MAKQA_LANGUAGES: [&str; 12] = [
    "En", "De", "Nl", "Fr", "Es", "It", "Pt", "El", "Ru", "Zh", "Ja", "Ko",
];

/// The six MAKQA knowledge domains.
pub const MAKQA_DOMAINS: [&str; 6] = [
    "sports",
    "movie",
    "science",
    "history",
    "geography",
    "literature",
];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {violation}")]
    Invalid { line: usize, violation: Violation },
    #[error("invalid language code {0:?}")]
    InvalidLanguage(String),
}

/// A language identifier such as `En` or `Zh`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: impl Into<String>) -> Result<Self, DatasetError> {
        let code = code.into();
        if code.trim().is_empty() || code.chars().any(char::is_whitespace) {
            return Err(DatasetError::InvalidLanguage(code));
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = DatasetError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LanguageCode> for String {
    fn from(value: LanguageCode) -> Self {
        value.0
    }
}

impl FromStr for LanguageCode {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for LanguageCode {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Parses a comma-separated language list such as `En,Zh,De`.
pub fn parse_language_list(list: &str) -> Result<Vec<LanguageCode>, DatasetError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(LanguageCode::new)
        .collect()
}

/// One aligned question with its answer in every language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaItem {
    pub id: String,
    pub domain: String,
    pub entity: String,
    pub relation: String,
    pub questions: BTreeMap<LanguageCode, String>,
    pub answers: BTreeMap<LanguageCode, String>,
}

impl QaItem {
    pub fn question(&self, lang: &LanguageCode) -> Option<&str> {
        self.questions.get(lang).map(String::as_str)
    }

    pub fn answer(&self, lang: &LanguageCode) -> Option<&str> {
        self.answers.get(lang).map(String::as_str)
    }
}

/// A time-sensitive question whose candidate answers are ordered newest
/// first (rank 1 is the most recent).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimelinessItem {
    pub id: String,
    pub questions: BTreeMap<LanguageCode, String>,
    pub candidates: BTreeMap<LanguageCode, Vec<String>>,
}

impl TimelinessItem {
    pub fn question(&self, lang: &LanguageCode) -> Option<&str> {
        self.questions.get(lang).map(String::as_str)
    }

    pub fn candidates(&self, lang: &LanguageCode) -> Option<&[String]> {
        self.candidates.get(lang).map(Vec::as_slice)
    }

    /// Number of ranked candidates (`R`), taken from the first language that
    /// has any. Validated datasets have the same count in every language.
    pub fn rank_count(&self) -> usize {
        self.candidates.values().map(Vec::len).next().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub languages: Vec<LanguageCode>,
    pub qa_items: Vec<QaItem>,
    pub timeliness_items: Vec<TimelinessItem>,
    /// Few-shot exemplars by domain. Timeliness exemplars live under
    /// [`TIMELINESS_DOMAIN`].
    pub few_shot_pool: BTreeMap<String, Vec<QaItem>>,
}

impl Dataset {
    /// Number of aligned languages (`L`).
    pub fn language_count(&self) -> usize {
        self.languages.len()
    }

    /// Number of regular QA items (`N`).
    pub fn len(&self) -> usize {
        self.qa_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qa_items.is_empty() && self.timeliness_items.is_empty()
    }

    pub fn domain_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.qa_items {
            *counts.entry(item.domain.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Domains in first-appearance order.
    pub fn domains(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.qa_items
            .iter()
            .filter(|item| seen.insert(item.domain.as_str()))
            .map(|item| item.domain.clone())
            .collect()
    }

    pub fn qa_item(&self, id: &str) -> Option<&QaItem> {
        self.qa_items.iter().find(|item| item.id == id)
    }

    pub fn exemplar_pool(&self, domain: &str) -> &[QaItem] {
        self.few_shot_pool
            .get(domain)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_dataset(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Question,
    Answer,
    Candidates,
    Domain,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Question => "question",
            Field::Answer => "answer",
            Field::Candidates => "candidates",
            Field::Domain => "domain",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    TooFewLanguages { count: usize },
    DuplicateLanguage { language: LanguageCode },
    DuplicateId,
    Missing { language: LanguageCode, field: Field },
    Empty { language: Option<LanguageCode>, field: Field },
    EmptyCandidate { language: LanguageCode, rank: usize },
    CandidateCountMismatch { counts: Vec<(LanguageCode, usize)> },
}

/// One broken dataset invariant. `item_id` is `None` for header-level
/// problems.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub item_id: Option<String>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.item_id {
            write!(f, "item `{id}`: ")?;
        }
        match &self.kind {
            ViolationKind::TooFewLanguages { count } => {
                write!(f, "dataset declares {count} language(s), at least 2 required")
            }
            ViolationKind::DuplicateLanguage { language } => {
                write!(f, "language `{language}` declared twice")
            }
            ViolationKind::DuplicateId => write!(f, "duplicate id"),
            ViolationKind::Missing { language, field } => {
                write!(f, "missing {field} for language `{language}`")
            }
            ViolationKind::Empty {
                language: Some(language),
                field,
            } => write!(f, "empty {field} for language `{language}`"),
            ViolationKind::Empty {
                language: None,
                field,
            } => write!(f, "empty {field}"),
            ViolationKind::EmptyCandidate { language, rank } => {
                write!(f, "empty candidate at rank {rank} for language `{language}`")
            }
            ViolationKind::CandidateCountMismatch { counts } => {
                write!(f, "candidate lists differ in length across languages (")?;
                for (i, (lang, n)) in counts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{lang}: {n}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: no violations");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks every dataset invariant and lists what is broken. An empty report
/// means the dataset is well formed.
pub fn validate_alignment(d: &Dataset) -> ValidationReport {
    let mut out = Vec::new();
    let header = |kind| Violation {
        item_id: None,
        kind,
    };

    if d.languages.len() < 2 {
        out.push(header(ViolationKind::TooFewLanguages {
            count: d.languages.len(),
        }));
    }
    let mut seen_langs = HashSet::new();
    for lang in &d.languages {
        if !seen_langs.insert(lang) {
            out.push(header(ViolationKind::DuplicateLanguage {
                language: lang.clone(),
            }));
        }
    }

    let mut seen_ids = HashSet::new();
    let qa_like = d
        .qa_items
        .iter()
        .chain(d.few_shot_pool.values().flatten());
    for item in qa_like {
        let v = |kind| Violation {
            item_id: Some(item.id.clone()),
            kind,
        };
        if !seen_ids.insert(item.id.as_str()) {
            out.push(v(ViolationKind::DuplicateId));
        }
        if item.domain.trim().is_empty() {
            out.push(v(ViolationKind::Empty {
                language: None,
                field: Field::Domain,
            }));
        }
        for lang in &d.languages {
            for (field, map) in [
                (Field::Question, &item.questions),
                (Field::Answer, &item.answers),
            ] {
                match map.get(lang) {
                    None => out.push(v(ViolationKind::Missing {
                        language: lang.clone(),
                        field,
                    })),
                    Some(text) if text.trim().is_empty() => out.push(v(ViolationKind::Empty {
                        language: Some(lang.clone()),
                        field,
                    })),
                    Some(_) => {}
                }
            }
        }
    }

    for item in &d.timeliness_items {
        let v = |kind| Violation {
            item_id: Some(item.id.clone()),
            kind,
        };
        if !seen_ids.insert(item.id.as_str()) {
            out.push(v(ViolationKind::DuplicateId));
        }
        let mut counts = Vec::new();
        for lang in &d.languages {
            match item.questions.get(lang) {
                None => out.push(v(ViolationKind::Missing {
                    language: lang.clone(),
                    field: Field::Question,
                })),
                Some(q) if q.trim().is_empty() => out.push(v(ViolationKind::Empty {
                    language: Some(lang.clone()),
                    field: Field::Question,
                })),
                Some(_) => {}
            }
            match item.candidates.get(lang) {
                None => out.push(v(ViolationKind::Missing {
                    language: lang.clone(),
                    field: Field::Candidates,
                })),
                Some(list) if list.is_empty() => out.push(v(ViolationKind::Empty {
                    language: Some(lang.clone()),
                    field: Field::Candidates,
                })),
                Some(list) => {
                    counts.push((lang.clone(), list.len()));
                    for (i, c) in list.iter().enumerate() {
                        if c.trim().is_empty() {
                            out.push(v(ViolationKind::EmptyCandidate {
                                language: lang.clone(),
                                rank: i + 1,
                            }));
                        }
                    }
                }
            }
        }
        if counts.windows(2).any(|w| w[0].1 != w[1].1) {
            out.push(v(ViolationKind::CandidateCountMismatch { counts }));
        }
    }

    ValidationReport { violations: out }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    schema: String,
    languages: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct QaLine {
    id: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    domain: String,
    #[serde(default)]
    entity: String,
    #[serde(default)]
    relation: String,
    q: BTreeMap<String, String>,
    a: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TimelinessLine {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    q: BTreeMap<String, String>,
    candidates: BTreeMap<String, Vec<String>>,
}

fn lang_map<V>(
    line: usize,
    map: BTreeMap<String, V>,
    mut f: impl FnMut(V) -> V,
) -> Result<BTreeMap<LanguageCode, V>, DatasetError> {
    map.into_iter()
        .map(|(k, v)| {
            let code = LanguageCode::new(k).map_err(|e| DatasetError::Malformed {
                line,
                message: e.to_string(),
            })?;
            Ok((code, f(v)))
        })
        .collect()
}

fn qa_from_line(line: usize, rec: QaLine) -> Result<QaItem, DatasetError> {
    Ok(QaItem {
        id: nfc(&rec.id),
        domain: nfc(&rec.domain),
        entity: nfc(&rec.entity),
        relation: nfc(&rec.relation),
        questions: lang_map(line, rec.q, |s| nfc(&s))?,
        answers: lang_map(line, rec.a, |s| nfc(&s))?,
    })
}

fn qa_to_line(item: &QaItem, kind: Option<&str>) -> QaLine {
    let strings = |m: &BTreeMap<LanguageCode, String>| {
        m.iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    };
    QaLine {
        id: item.id.clone(),
        kind: kind.map(str::to_owned),
        domain: item.domain.clone(),
        entity: item.entity.clone(),
        relation: item.relation.clone(),
        q: strings(&item.questions),
        a: strings(&item.answers),
    }
}

/// Line numbers (1-based) of each item id, used to locate violations.
#[derive(Default)]
struct LineIndex {
    by_id: HashMap<String, Vec<usize>>,
}

impl LineIndex {
    fn locate(&self, v: &Violation) -> usize {
        let Some(id) = &v.item_id else { return 1 };
        let lines = self.by_id.get(id).map(Vec::as_slice).unwrap_or(&[]);
        match v.kind {
            ViolationKind::DuplicateId => lines.get(1).copied(),
            _ => lines.first().copied(),
        }
        .unwrap_or(1)
    }
}

fn parse(reader: impl BufRead) -> Result<(Dataset, LineIndex), DatasetError> {
    let mut dataset = Dataset::default();
    let mut index = LineIndex::default();
    let mut saw_header = false;

    for (i, raw) in reader.split(b'\n').enumerate() {
        let line = i + 1;
        let raw = raw.map_err(|e| DatasetError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let text = String::from_utf8(raw).map_err(|_| DatasetError::Malformed {
            line,
            message: "invalid UTF-8".into(),
        })?;
        let text = text.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| DatasetError::Malformed {
            line,
            message: e.to_string(),
        };
        let value: Value = serde_json::from_str(text).map_err(malformed)?;

        if !saw_header {
            let header: HeaderLine = serde_json::from_value(value).map_err(|e| {
                DatasetError::Malformed {
                    line,
                    message: format!("expected header line: {e}"),
                }
            })?;
            if header.schema != SCHEMA {
                return Err(DatasetError::Malformed {
                    line,
                    message: format!("unsupported schema {:?}, expected {SCHEMA:?}", header.schema),
                });
            }
            dataset.languages = header
                .languages
                .into_iter()
                .map(LanguageCode::new)
                .collect::<Result<_, _>>()
                .map_err(|e| DatasetError::Malformed {
                    line,
                    message: e.to_string(),
                })?;
            saw_header = true;
            continue;
        }

        let kind = match value.get("type") {
            None => "qa".to_owned(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                return Err(DatasetError::Malformed {
                    line,
                    message: format!("`type` must be a string, got {other}"),
                })
            }
        };
        let id = match kind.as_str() {
            "qa" => {
                let item = qa_from_line(line, serde_json::from_value(value).map_err(malformed)?)?;
                let id = item.id.clone();
                dataset.qa_items.push(item);
                id
            }
            "exemplar" => {
                let item = qa_from_line(line, serde_json::from_value(value).map_err(malformed)?)?;
                let id = item.id.clone();
                dataset
                    .few_shot_pool
                    .entry(item.domain.clone())
                    .or_default()
                    .push(item);
                id
            }
            "timeliness" => {
                let rec: TimelinessLine = serde_json::from_value(value).map_err(malformed)?;
                let item = TimelinessItem {
                    id: nfc(&rec.id),
                    questions: lang_map(line, rec.q, |s| nfc(&s))?,
                    candidates: lang_map(line, rec.candidates, |v| {
                        v.iter().map(|s| nfc(s)).collect()
                    })?,
                };
                let id = item.id.clone();
                dataset.timeliness_items.push(item);
                id
            }
            other => {
                return Err(DatasetError::Malformed {
                    line,
                    message: format!("unknown record type {other:?}"),
                })
            }
        };
        index.by_id.entry(id).or_default().push(line);
    }

    if !saw_header {
        return Err(DatasetError::Malformed {
            line: 1,
            message: "missing header line".into(),
        });
    }
    Ok((dataset, index))
}

/// Parses a dataset without enforcing alignment invariants. Only syntax
/// errors fail; use [`validate_alignment`] to inspect the rest.
pub fn read_dataset_unchecked(reader: impl BufRead) -> Result<Dataset, DatasetError> {
    parse(reader).map(|(d, _)| d)
}

/// Parses and fully validates a dataset. The first violation (in file
/// order) is reported with its line number.
pub fn read_dataset(reader: impl BufRead) -> Result<Dataset, DatasetError> {
    let (dataset, index) = parse(reader)?;
    let report = validate_alignment(&dataset);
    if let Some(violation) = report
        .violations
        .into_iter()
        .min_by_key(|v| index.locate(v))
    {
        let line = index.locate(&violation);
        return Err(DatasetError::Invalid { line, violation });
    }
    Ok(dataset)
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>, DatasetError> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_dataset(open(path.as_ref())?)
}

pub fn load_dataset_unchecked(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_dataset_unchecked(open(path.as_ref())?)
}

/// Writes the canonical JSONL form: header, QA items, timeliness items,
/// then the exemplar pool grouped by domain.
pub fn write_dataset(d: &Dataset, mut w: impl Write) -> io::Result<()> {
    let header = HeaderLine {
        schema: SCHEMA.to_owned(),
        languages: d.languages.iter().map(ToString::to_string).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for item in &d.qa_items {
        serde_json::to_writer(&mut w, &qa_to_line(item, None))?;
        w.write_all(b"\n")?;
    }
    for item in &d.timeliness_items {
        let line = TimelinessLine {
            id: item.id.clone(),
            kind: "timeliness".to_owned(),
            q: item
                .questions
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            candidates: item
                .candidates
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    for item in d.few_shot_pool.values().flatten() {
        serde_json::to_writer(&mut w, &qa_to_line(item, Some("exemplar")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
