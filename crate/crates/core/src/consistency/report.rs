use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{
    domain_breakdown, xac, xc, xsc_from_table, xsc_item_ids, xtc, DomainScore, XcScore,
};
use super::{AnswerSet, ConsistencyError, PairMatrix, PromptVariant, ScoringOptions};
use crate::dataset::{Dataset, LanguageCode};
use crate::embedding::{Embedder, EmbeddingTable};

pub const REPORT_SCHEMA: &str = "xlingual-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_hash: String,
    pub run_id: String,
    pub model_id: String,
    pub prompt_variant: PromptVariant,
    pub seed: u64,
    pub embedding_provider: String,
    pub options: ScoringOptions,
    pub tool: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSet {
    pub xsc: PairMatrix,
    pub xac: Option<PairMatrix>,
    pub xtc: Option<PairMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCounts {
    pub qa: usize,
    pub timeliness: usize,
    pub xsc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateCounts {
    pub xac: usize,
    pub xtc: usize,
}

/// Scores for one answer set. `xac`/`xtc` (and so `xc`) are absent when the
/// dataset has fewer than two items of the needed kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub schema: String,
    pub languages: Vec<LanguageCode>,
    pub items: ItemCounts,
    pub xsc: f64,
    pub xac: Option<f64>,
    pub xtc: Option<f64>,
    pub xc: Option<XcScore>,
    pub degenerate_pairs: DegenerateCounts,
    pub matrices: MatrixSet,
    pub domains: BTreeMap<String, DomainScore>,
    pub provenance: Provenance,
}

impl ConsistencyReport {
    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConsistencyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| ConsistencyError::MatrixFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Looks up a matrix by metric name (`xsc`, `xac`, `xtc`).
    pub fn matrix(&self, metric: &str) -> Option<&PairMatrix> {
        match metric {
            "xsc" => Some(&self.matrices.xsc),
            "xac" => self.matrices.xac.as_ref(),
            "xtc" => self.matrices.xtc.as_ref(),
            _ => None,
        }
    }

    fn comment(&self) -> Vec<String> {
        vec![format!(
            "{} run={} model={} seed={}",
            self.schema, self.provenance.run_id, self.provenance.model_id, self.provenance.seed
        )]
    }
}

fn optional<T>(result: Result<T, ConsistencyError>) -> Result<Option<T>, ConsistencyError> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(ConsistencyError::InsufficientItems {
            metric,
            required,
            got,
        }) => {
            log::warn!("{metric} skipped: needs {required} items, dataset has {got}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Assembles a full report from precomputed answer embeddings.
pub fn build_report(
    answers: &AnswerSet,
    dataset: &Dataset,
    table: &EmbeddingTable,
    opts: &ScoringOptions,
    embedding_provider: &str,
) -> Result<ConsistencyReport, ConsistencyError> {
    let langs = opts.resolve_languages(&dataset.languages)?;
    let ids = xsc_item_ids(dataset, opts);

    let semantic = xsc_from_table(answers, &ids, &langs, table)?;
    let accuracy = optional(xac(answers, dataset, opts))?;
    let timeliness = optional(xtc(answers, dataset, opts))?;
    let overall = match (&accuracy, &timeliness) {
        (Some(a), Some(t)) => Some(xc(semantic.score, a.score, t.score)),
        _ => None,
    };
    let domains = domain_breakdown(answers, dataset, &langs, table)?;

    Ok(ConsistencyReport {
        schema: REPORT_SCHEMA.to_owned(),
        languages: langs,
        items: ItemCounts {
            qa: dataset.qa_items.len(),
            timeliness: dataset.timeliness_items.len(),
            xsc: ids.len(),
        },
        xsc: semantic.score,
        xac: accuracy.as_ref().map(|s| s.score),
        xtc: timeliness.as_ref().map(|s| s.score),
        xc: overall,
        degenerate_pairs: DegenerateCounts {
            xac: accuracy.as_ref().map_or(0, |s| s.degenerate_pairs),
            xtc: timeliness.as_ref().map_or(0, |s| s.degenerate_pairs),
        },
        matrices: MatrixSet {
            xsc: semantic.matrix,
            xac: accuracy.map(|s| s.matrix),
            xtc: timeliness.map(|s| s.matrix),
        },
        domains,
        provenance: Provenance {
            dataset_hash: dataset.content_hash(),
            run_id: answers.run_id.clone(),
            model_id: answers.model_id.clone(),
            prompt_variant: answers.prompt_variant.clone(),
            seed: answers.seed,
            embedding_provider: embedding_provider.to_owned(),
            options: opts.clone(),
            tool: format!("xlingual {}", env!("CARGO_PKG_VERSION")),
        },
    })
}

/// Embeds every answer text xSC needs for the selected languages. Texts
/// already in the embedder's cache are not fetched again.
pub async fn embed_answers(
    answers: &AnswerSet,
    dataset: &Dataset,
    embedder: &Embedder,
    opts: &ScoringOptions,
) -> Result<EmbeddingTable, ConsistencyError> {
    let langs = opts.resolve_languages(&dataset.languages)?;
    let ids = xsc_item_ids(dataset, opts);
    answers.require(&langs, &ids)?;
    let texts = langs
        .iter()
        .flat_map(|l| ids.iter().map(move |id| answers.answer(l, id)));
    Ok(embedder.embed_all(texts).await?)
}

/// Embeds the answers needed for xSC and builds the report.
pub async fn score(
    answers: &AnswerSet,
    dataset: &Dataset,
    embedder: &Embedder,
    opts: &ScoringOptions,
) -> Result<ConsistencyReport, ConsistencyError> {
    let table = embed_answers(answers, dataset, embedder, opts).await?;
    build_report(answers, dataset, &table, opts, embedder.describe())
}

/// Writes `report.json`, one CSV per available matrix and `domains.csv`
/// into `dir`. Returns the written paths.
pub fn write_report_files(
    dir: impl AsRef<Path>,
    report: &ConsistencyReport,
) -> Result<Vec<PathBuf>, ConsistencyError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    std::fs::write(&path, report.to_json())?;
    written.push(path);

    let comment = report.comment();
    for (name, matrix) in [
        ("xsc", Some(&report.matrices.xsc)),
        ("xac", report.matrices.xac.as_ref()),
        ("xtc", report.matrices.xtc.as_ref()),
    ] {
        let Some(matrix) = matrix else { continue };
        let path = dir.join(format!("{name}_matrix.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        matrix.write_csv(&mut w, &comment)?;
        w.flush()?;
        written.push(path);
    }

    let path = dir.join("domains.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    for line in &comment {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "domain,items,xsc")?;
    for (domain, score) in &report.domains {
        writeln!(w, "{domain},{},{}", score.items, score.xsc)?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

/// Reads a language-pair matrix CSV: a header row `label,<code>,<code>...`
/// and one row per language starting with its code. Rows may come in any
/// order but must name exactly the header's codes. Empty cells are unset;
/// the diagonal is ignored. Lines starting with `#` are skipped.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<PairMatrix, ConsistencyError> {
    let path = path.as_ref();
    let err = |message: String| ConsistencyError::MatrixFile {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;

    let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let columns: Vec<LanguageCode> = header
        .iter()
        .skip(1)
        .map(LanguageCode::new)
        .collect::<Result<_, _>>()
        .map_err(|e| err(e.to_string()))?;
    if columns.len() < 2 {
        return Err(err("need at least two language columns".into()));
    }
    let unique: HashSet<&LanguageCode> = columns.iter().collect();
    if unique.len() != columns.len() {
        return Err(err("duplicate language in header".into()));
    }

    let mut matrix = PairMatrix::new(columns.clone());
    let mut seen_rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let code = LanguageCode::new(record.get(0).unwrap_or(""))
            .map_err(|e| err(e.to_string()))?;
        seen_rows.push(code.clone());
        let Some(i) = matrix.index_of(&code) else { continue };
        for (j, cell) in record.iter().skip(1).enumerate() {
            if i == j || cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| err(format!("row {code}: cannot parse {cell:?} as a number")))?;
            if !v.is_finite() {
                return Err(err(format!("row {code}: non-finite value")));
            }
            matrix.set_cell(i, j, Some(v));
        }
    }

    let unexpected: Vec<String> = seen_rows
        .iter()
        .filter(|c| !columns.contains(c))
        .map(ToString::to_string)
        .collect();
    let missing: Vec<String> = columns
        .iter()
        .filter(|c| !seen_rows.contains(c))
        .map(ToString::to_string)
        .collect();
    let mut dup = HashSet::new();
    let duplicated: Vec<String> = seen_rows
        .iter()
        .filter(|c| !dup.insert(*c))
        .map(ToString::to_string)
        .collect();
    if !unexpected.is_empty() || !missing.is_empty() || !duplicated.is_empty() {
        return Err(err(format!(
            "row codes do not match column codes (missing rows: {missing:?}, unknown rows: {unexpected:?}, repeated rows: {duplicated:?})"
        )));
    }
    Ok(matrix)
}
