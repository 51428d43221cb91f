use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use xlingual_core::collection::{
    collect_answers, load_answer_set, manifest_path, PromptSources, QuestionOverrides,
    TemplateSet,
};
use xlingual_core::consistency::{
    correlate_matrices, embed_answers, read_matrix_csv, write_report_files, AnswerSet,
    ConsistencyReport, ScoringOptions,
};
use xlingual_core::dataset::{load_dataset, load_dataset_unchecked, validate_alignment, Dataset};
use xlingual_core::embedding::{Embedder, EmbeddingCache, ProviderKind};

use crate::config::{check_exists, existing, language_subset, required, RunConfig};
use crate::error::{CliError, ResultExt};
use crate::{render, CollectArgs, CorrelateArgs, EmbedArgs, EmbedFlags, ReportArgs, RunArgs, ScoreArgs, ValidateArgs};

pub fn validate(args: ValidateArgs) -> Result<(), CliError> {
    check_exists(&args.dataset)?;
    let dataset = load_dataset_unchecked(&args.dataset).ctx(args.dataset.display())?;
    let report = validate_alignment(&dataset);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    } else {
        let langs: Vec<&str> = dataset.languages.iter().map(|l| l.as_str()).collect();
        println!(
            "{}: {} qa items, {} timeliness items, languages {}",
            args.dataset.display(),
            dataset.qa_items.len(),
            dataset.timeliness_items.len(),
            langs.join(" ")
        );
        print!("{report}");
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(CliError::domain(format!(
            "{}: {} violation(s)",
            args.dataset.display(),
            report.len()
        )))
    }
}

fn open_dataset(run: &RunArgs, cfg: &RunConfig) -> Result<(PathBuf, Dataset), CliError> {
    let path = existing(run.dataset.clone(), cfg.dataset.clone(), "dataset", "--dataset")?;
    let dataset = load_dataset(&path).ctx(path.display())?;
    Ok((path, dataset))
}

pub async fn collect(args: CollectArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.run.config.as_deref())?;
    let (_, dataset) = open_dataset(&args.run, &cfg)?;
    let languages = language_subset(args.run.languages.as_deref(), cfg.languages.clone(), &dataset)?
        .unwrap_or_else(|| dataset.languages.clone());
    let answers = required(args.answers, cfg.answers.clone(), "answers", "--answers")?;

    let mut coll = cfg.collection.clone();
    coll.seed = args.run.seed.or(cfg.seed).unwrap_or(0);
    if let Some(v) = args.endpoint {
        coll.endpoint = v;
    }
    if let Some(v) = args.model {
        coll.model = v;
    }
    if let Some(v) = args.shots {
        coll.shots = v;
    }
    if let Some(v) = args.variant {
        coll.prompt_variant = v;
    }
    if let Some(v) = args.format {
        coll.format = v;
    }
    if let Some(v) = args.extraction {
        coll.extraction = v;
    }
    if let Some(v) = args.concurrency {
        coll.concurrency = v;
    }
    if let Some(v) = args.rate_limit {
        coll.rate_limit = v;
    }
    if let Some(v) = args.max_attempts {
        coll.retry.max_attempts = v;
    }
    if let Some(v) = args.timeout {
        coll.timeout_secs = v;
    }
    if args.run_id.is_some() {
        coll.run_id = args.run_id;
    }
    coll.retry_failed |= args.retry_failed;

    let mut sources = PromptSources::default();
    if let Some(path) = args.templates.or(cfg.templates) {
        check_exists(&path)?;
        sources.templates = Some(TemplateSet::load(&path)?);
    }
    if let Some(path) = args.paraphrases.or(cfg.paraphrases) {
        check_exists(&path)?;
        sources.overrides = Some(QuestionOverrides::load(&path)?);
    }

    let run = collect_answers(&dataset, &languages, &coll, &sources, &answers).await?;
    let m = &run.manifest;
    println!(
        "{}: run {}, {} ok, {} failed",
        answers.display(),
        m.run_id,
        m.ok,
        m.failed
    );
    println!("manifest {}", manifest_path(&answers).display());
    if m.failed > 0 {
        return Err(CliError::domain(format!(
            "{} cell(s) failed after retries; rerun with --retry-failed to request them again",
            m.failed
        )));
    }
    Ok(())
}

struct ScoringInputs {
    dataset: Dataset,
    answers: AnswerSet,
    opts: ScoringOptions,
    embedder: Embedder,
    cache: Option<PathBuf>,
}

fn scoring_inputs(run: &RunArgs, flags: &EmbedFlags, cfg: &RunConfig) -> Result<ScoringInputs, CliError> {
    let (_, dataset) = open_dataset(run, cfg)?;
    let answers_path = existing(flags.answers.clone(), cfg.answers.clone(), "answers", "--answers")?;
    let answers = load_answer_set(&answers_path).ctx(answers_path.display())?;

    let mut opts = cfg.scoring.clone();
    opts.languages = language_subset(run.languages.as_deref(), cfg.languages.clone(), &dataset)?;

    let mut provider = cfg.embedding.provider.clone();
    provider.kind = flags.embed_provider.or(cfg.embedding.kind).ok_or_else(|| {
        CliError::usage(
            "no embedding provider: pass --embed-provider (http, cache-only, mock) or set `embedding.kind`",
        )
    })?;
    if let Some(v) = &flags.embed_endpoint {
        provider.endpoint = Some(v.clone());
    }
    if let Some(v) = flags.dims {
        provider.expected_dims = v;
    }
    if let Some(v) = flags.batch_size {
        provider.batch_size = v;
    }
    provider.mock_seed = run.seed.or(cfg.seed).unwrap_or(0);

    let cache_path = flags.cache.clone().or(cfg.cache.clone());
    let cache = match &cache_path {
        Some(path) => {
            if provider.kind == ProviderKind::CacheOnly {
                check_exists(path)?;
            }
            EmbeddingCache::open(path).ctx(path.display())?
        }
        None if provider.kind == ProviderKind::CacheOnly => {
            return Err(CliError::usage("--embed-provider cache-only needs --cache"));
        }
        None => EmbeddingCache::in_memory(),
    };
    let embedder = Embedder::from_config(&provider, Arc::new(cache))?;
    Ok(ScoringInputs {
        dataset,
        answers,
        opts,
        embedder,
        cache: cache_path,
    })
}

pub async fn embed(args: EmbedArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.run.config.as_deref())?;
    if args.embed.cache.is_none() && cfg.cache.is_none() {
        return Err(CliError::usage("no cache: pass --cache or set `cache` in the config"));
    }
    let mut inputs = scoring_inputs(&args.run, &args.embed, &cfg)?;
    inputs.opts.include_timeliness_in_xsc |= args.include_timeliness_in_xsc;
    let cache = Arc::clone(inputs.embedder.cache());
    let before = cache.len();
    let table = embed_answers(&inputs.answers, &inputs.dataset, &inputs.embedder, &inputs.opts).await?;
    cache.flush()?;
    println!(
        "{}: {} distinct answer texts, {} new cache entries ({} total)",
        inputs.cache.as_deref().unwrap_or(Path::new("")).display(),
        table.len(),
        cache.len() - before,
        cache.len()
    );
    Ok(())
}

pub async fn score(args: ScoreArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.run.config.as_deref())?;
    let out = required(args.out, cfg.out.clone(), "out", "--out")?;
    let mut inputs = scoring_inputs(&args.run, &args.embed, &cfg)?;
    if let Some(v) = args.xtc_mode {
        inputs.opts.timeliness_mode = v;
    }
    if let Some(v) = args.tau {
        inputs.opts.tau = v;
    }
    inputs.opts.include_timeliness_in_xsc |= args.include_timeliness_in_xsc;

    let report = xlingual_core::consistency::score(
        &inputs.answers,
        &inputs.dataset,
        &inputs.embedder,
        &inputs.opts,
    )
    .await?;
    if inputs.cache.is_some() {
        inputs.embedder.cache().flush()?;
    }
    let written = write_report_files(&out, &report).ctx(out.display())?;
    print!("{}", render::summary(&report));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    check_exists(&args.report)?;
    let report = ConsistencyReport::read(&args.report)?;
    let metrics = if args.metric.is_empty() {
        vec!["xsc".to_owned(), "xac".to_owned(), "xtc".to_owned()]
    } else {
        for m in &args.metric {
            if !matches!(m.as_str(), "xsc" | "xac" | "xtc") {
                return Err(CliError::usage(format!("unknown metric {m:?} (xsc, xac, xtc)")));
            }
        }
        args.metric
    };
    if args.json {
        print!("{}", report.to_json());
    } else {
        print!("{}", render::full(&report, &metrics));
    }
    if let Some(dir) = args.out {
        for path in write_report_files(&dir, &report).ctx(dir.display())? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn correlate(args: CorrelateArgs) -> Result<(), CliError> {
    check_exists(&args.report)?;
    check_exists(&args.external)?;
    let report = ConsistencyReport::read(&args.report)?;
    let matrix = match args.metric.as_str() {
        "xsc" | "xac" | "xtc" => report.matrix(&args.metric).ok_or_else(|| {
            CliError::domain(format!("{} has no {} matrix", args.report.display(), args.metric))
        })?,
        other => return Err(CliError::usage(format!("unknown metric {other:?} (xsc, xac, xtc)"))),
    };
    let external = read_matrix_csv(&args.external)?;
    let result = correlate_matrices(matrix, &external).ctx(format!(
        "{} vs {}",
        args.report.display(),
        args.external.display()
    ))?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
    } else {
        print!("{}", render::correlation(&args.metric, &result));
    }
    if let Some(path) = args.out {
        let p = &report.provenance;
        let mut csv = format!(
            "# {} run={} model={} seed={}\nlanguage,{},external\n",
            report.schema, p.run_id, p.model_id, p.seed, args.metric
        );
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for row in &result.rows {
            csv.push_str(&format!(
                "{},{},{}\n",
                row.language,
                cell(row.consistency),
                cell(row.external)
            ));
        }
        std::fs::File::create(&path)
            .and_then(|mut f| f.write_all(csv.as_bytes()))
            .ctx(path.display())?;
    }
    Ok(())
}
