use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CollectionError;
use crate::consistency::{AnswerSet, PromptVariant};
use crate::dataset::LanguageCode;

pub const ANSWERS_SCHEMA: &str = "xlingual-answers/1";

/// First line of an answer file. Resuming requires every field except
/// `schema` to match the new run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub schema: String,
    pub run_id: String,
    pub model_id: String,
    pub prompt_variant: PromptVariant,
    pub seed: u64,
    pub shots: usize,
    pub dataset_hash: String,
}

impl StoreHeader {
    fn mismatch(&self, other: &StoreHeader) -> Option<&'static str> {
        if self.model_id != other.model_id {
            Some("model_id")
        } else if self.prompt_variant != other.prompt_variant {
            Some("prompt_variant")
        } else if self.seed != other.seed {
            Some("seed")
        } else if self.shots != other.shots {
            Some("shots")
        } else if self.dataset_hash != other.dataset_hash {
            Some("dataset_hash")
        } else if self.run_id != other.run_id {
            Some("run_id")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One answered (or given-up-on) request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub language: LanguageCode,
    pub item_id: String,
    pub status: CellStatus,
    pub attempts: u32,
    /// Model output before post-processing; absent when every attempt failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    pub answer: String,
    pub exemplar_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type CellKey = (LanguageCode, String);

/// Append-only JSONL answer file: a header line, then one record per
/// completed request. Later records for the same cell replace earlier ones.
#[derive(Debug)]
pub struct AnswerStore {
    path: PathBuf,
    file: File,
    header: StoreHeader,
    records: BTreeMap<CellKey, AnswerRecord>,
}

impl AnswerStore {
    /// Opens an existing store for appending, or creates one. An existing
    /// store must have a matching header. A partial last line (from an
    /// interrupted write) is cut off.
    pub fn open_or_create(path: impl AsRef<Path>, header: StoreHeader) -> Result<Self, CollectionError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| CollectionError::Store {
            path: path.clone(),
            source: e,
        };
        let existing = if path.exists() {
            let mut bytes = Vec::new();
            File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io)?;
            Some(bytes)
        } else {
            None
        };

        if let Some(bytes) = existing {
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            if complete > 0 {
                let (found, records) = parse(&bytes[..complete])?;
                if let Some(field) = found.mismatch(&header) {
                    return Err(CollectionError::IncompatibleStore {
                        path,
                        field,
                    });
                }
                let file = OpenOptions::new().write(true).open(&path).map_err(io)?;
                if complete < bytes.len() {
                    log::warn!(
                        "{}: dropping {} bytes of incomplete last line",
                        path.display(),
                        bytes.len() - complete
                    );
                    file.set_len(complete as u64).map_err(io)?;
                }
                drop(file);
                let file = OpenOptions::new().append(true).open(&path).map_err(io)?;
                return Ok(Self {
                    path,
                    file,
                    header,
                    records,
                });
            }
        }

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = File::create(&path).map_err(io)?;
        let mut line = serde_json::to_vec(&header).expect("header serializes");
        line.push(b'\n');
        file.write_all(&line).map_err(io)?;
        file.flush().map_err(io)?;
        Ok(Self {
            path,
            file,
            header,
            records: BTreeMap::new(),
        })
    }

    /// Reads a store without modifying it. A partial last line is ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<(StoreHeader, Vec<AnswerRecord>), CollectionError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CollectionError::Store {
            path: path.to_path_buf(),
            source: e,
        })?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let (header, records) = parse(&bytes[..complete])?;
        Ok((header, records.into_values().collect()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn record(&self, lang: &LanguageCode, item: &str) -> Option<&AnswerRecord> {
        self.records.get(&(lang.clone(), item.to_owned()))
    }

    pub fn records(&self) -> impl Iterator<Item = &AnswerRecord> {
        self.records.values()
    }

    /// Writes one record as a single line and flushes it.
    pub fn append(&mut self, record: AnswerRecord) -> Result<(), CollectionError> {
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|()| self.file.flush())
            .map_err(|e| CollectionError::Store {
                path: self.path.clone(),
                source: e,
            })?;
        self.records
            .insert((record.language.clone(), record.item_id.clone()), record);
        Ok(())
    }

    pub fn to_answer_set(&self) -> AnswerSet {
        answer_set(&self.header, self.records.values())
    }
}

fn answer_set<'a>(header: &StoreHeader, records: impl Iterator<Item = &'a AnswerRecord>) -> AnswerSet {
    let mut set = AnswerSet::new(&header.run_id, &header.model_id);
    set.prompt_variant = header.prompt_variant.clone();
    set.seed = header.seed;
    for r in records {
        set.insert(r.language.clone(), &r.item_id, &r.answer);
    }
    set
}

fn parse(bytes: &[u8]) -> Result<(StoreHeader, BTreeMap<CellKey, AnswerRecord>), CollectionError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CollectionError::StoreFormat {
        line: 0,
        message: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(CollectionError::StoreFormat {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: StoreHeader = serde_json::from_str(first).map_err(|e| CollectionError::StoreFormat {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema != ANSWERS_SCHEMA {
        return Err(CollectionError::StoreFormat {
            line: 1,
            message: format!("unsupported schema {:?}", header.schema),
        });
    }
    let mut records = BTreeMap::new();
    for (n, line) in lines {
        let r: AnswerRecord = serde_json::from_str(line).map_err(|e| CollectionError::StoreFormat {
            line: n + 1,
            message: e.to_string(),
        })?;
        records.insert((r.language.clone(), r.item_id.clone()), r);
    }
    Ok((header, records))
}

/// Loads the answers in a store file as an [`AnswerSet`].
pub fn load_answer_set(path: impl AsRef<Path>) -> Result<AnswerSet, CollectionError> {
    let (header, records) = AnswerStore::read(path)?;
    Ok(answer_set(&header, records.iter()))
}
