//! Run config file (`schema = "xlingual-run/1"`). Relative paths are
//! resolved against the file's directory. Command-line flags win over
//! anything set here.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use xlingual_core::collection::CollectionConfig;
use xlingual_core::consistency::ScoringOptions;
use xlingual_core::dataset::{parse_language_list, Dataset, LanguageCode};
use xlingual_core::embedding::{EmbeddingProviderConfig, ProviderKind};

use crate::error::{CliError, ResultExt};

pub const RUN_SCHEMA: &str = "xlingual-run/1";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<String>,
    pub dataset: Option<PathBuf>,
    pub languages: Option<Vec<LanguageCode>>,
    pub seed: Option<u64>,
    pub answers: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
    pub collection: CollectionConfig,
    pub embedding: EmbeddingSection,
    pub scoring: ScoringOptions,
}

/// Provider settings. `kind` has no default: scoring with the mock
/// provider by accident would produce meaningless numbers.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub kind: Option<ProviderKind>,
    #[serde(flatten)]
    pub provider: EmbeddingProviderConfig,
}

// Settings that have a single home elsewhere in the file.
const RELOCATED: &[(&str, &str, &str)] = &[
    ("collection", "seed", "seed"),
    ("embedding", "mock_seed", "seed"),
    ("scoring", "languages", "languages"),
];

impl RunConfig {
    /// Loads `path`, or returns an empty config when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).ctx(format!("reading {}", path.display()))?;
        let bad = |msg: String| CliError::usage(format!("{}: {msg}", path.display()));

        let table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        for (section, key, home) in RELOCATED {
            if table
                .get(*section)
                .and_then(|s| s.get(*key))
                .is_some()
            {
                return Err(bad(format!(
                    "`{section}.{key}` is not allowed; set top-level `{home}` instead"
                )));
            }
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        match cfg.schema.as_deref() {
            Some(RUN_SCHEMA) => {}
            Some(other) => return Err(bad(format!("unsupported schema {other:?}, expected {RUN_SCHEMA:?}"))),
            None => return Err(bad(format!("missing `schema = \"{RUN_SCHEMA}\"`"))),
        }

        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.dataset,
            &mut cfg.answers,
            &mut cfg.cache,
            &mut cfg.out,
            &mut cfg.templates,
            &mut cfg.paraphrases,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag value if given, else the config value; errors if neither is set.
pub fn required<T>(flag: Option<T>, file: Option<T>, what: &str, flag_name: &str) -> Result<T, CliError> {
    flag.or(file).ok_or_else(|| {
        CliError::usage(format!("no {what}: pass {flag_name} or set `{what}` in the config"))
    })
}

/// Like [`required`], and the path must exist.
pub fn existing(flag: Option<PathBuf>, file: Option<PathBuf>, what: &str, flag_name: &str) -> Result<PathBuf, CliError> {
    let path = required(flag, file, what, flag_name)?;
    check_exists(&path)?;
    Ok(path)
}

pub fn check_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{}: no such file", path.display())))
    }
}

/// The language subset from `--languages` or the config, checked against
/// the dataset. `None` means all dataset languages.
pub fn language_subset(
    flag: Option<&str>,
    file: Option<Vec<LanguageCode>>,
    dataset: &Dataset,
) -> Result<Option<Vec<LanguageCode>>, CliError> {
    let langs = match flag {
        Some(list) => Some(parse_language_list(list).ctx("--languages")?),
        None => file,
    };
    if let Some(langs) = &langs {
        if let Some(unknown) = langs.iter().find(|l| !dataset.languages.contains(l)) {
            let declared: Vec<&str> = dataset.languages.iter().map(LanguageCode::as_str).collect();
            return Err(CliError::usage(format!(
                "language `{unknown}` is not in the dataset (declared: {})",
                declared.join(", ")
            )));
        }
        if langs.len() < 2 {
            return Err(CliError::usage("at least 2 languages are needed"));
        }
    }
    Ok(langs)
}
