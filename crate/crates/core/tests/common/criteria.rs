use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlingual_core::collection::{collect_answers, load_answer_set, AnswerStore, PromptSources};
use xlingual_core::consistency::{
    build_report, timeliness_score, xac, xc, xsc_from_table, xtc, AnswerSet, ConsistencyReport,
    ScoringOptions, TimelinessMode,
};
use xlingual_core::dataset::{Dataset, LanguageCode, QaItem, TimelinessItem};
use xlingual_core::embedding::{EmbeddingTable, EmbeddingVector, MockProvider};
use xlingual_core::textmetrics::{average_ranks, chrf, spearman, ChrfConfig};
use xlingual_core::testing::{scripted_model, MockLlm};

use super::*;

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn lang(code: &str) -> LanguageCode {
    LanguageCode::new(code).unwrap()
}

/// `(xSC, xAC, xTC, reported xC)` for every model row of the published
/// results table.
pub const TABLE6: [(&str, f64, f64, f64, f64); 11] = [
    ("GPT-3.5", 0.706, 0.489, 0.508, 0.552),
    ("Bloomz 0.6B", 0.353, 0.261, 0.236, 0.275),
    ("Bloomz 1B", 0.389, 0.256, 0.199, 0.260),
    ("Bloomz 3B", 0.409, 0.298, 0.191, 0.272),
    ("Bloomz 7B", 0.414, 0.275, 0.193, 0.267),
    ("Llama2 7B", 0.577, 0.243, 0.297, 0.326),
    ("Llama2 13B", 0.563, 0.293, 0.321, 0.361),
    ("Baichuan2 7B", 0.530, 0.342, 0.413, 0.415),
    ("Baichuan2 13B", 0.564, 0.367, 0.391, 0.425),
    ("Mistral 7B", 0.527, 0.245, 0.349, 0.339),
    ("Mixtral 8x7B", 0.666, 0.430, 0.450, 0.496),
];

pub fn table6() -> Check {
    for (name, s, a, t, reported) in TABLE6 {
        let tol = if name == "GPT-3.5" || name == "Baichuan2 7B" {
            0.001
        } else {
            0.002
        };
        let got = xc(s, a, t);
        ensure(!got.degenerate && (got.value - reported).abs() <= tol, || {
            format!("{name}: xC {:.4} vs reported {reported} (tol {tol})", got.value)
        })?;
    }
    Ok(())
}

pub const CHRF_PAIRS: [(&str, &str); 50] = [
    ("Argentina", "Argentina"),
    ("Argentina", "Brazil"),
    ("Argentine", "Argentina"),
    ("the Republic of Argentina", "Argentina"),
    ("United Kingdom", "the United Kingdom"),
    ("United States of America", "United States"),
    ("South Africa", "Africa South"),
    ("New York City", "New York"),
    ("football", "Football"),
    ("ice hockey", "hockey"),
    ("abc", "xyz"),
    ("a", "a"),
    ("a", "b"),
    ("ab", "ba"),
    ("aaaa", "aa"),
    ("Au", "Ag"),
    ("Fe", "Fe "),
    ("  spaced   out  ", "spaced out"),
    ("Gabriel García Márquez", "Gabriel Garcia Marquez"),
    ("Garcı\u{301}a", "García"),
    ("Múnich", "Munich"),
    ("Alemania", "Alemanía"),
    ("Sudáfrica", "Sud África"),
    ("hockey sobre hielo", "hockey hielo"),
    ("阿根廷", "阿根廷"),
    ("阿根廷", "巴西"),
    ("布宜诺斯艾利斯", "布宜诺斯"),
    ("中华人民共和国", "中国"),
    ("北京市", "北京"),
    ("我不知道", "不知道"),
    ("東京都", "東京"),
    ("アルゼンチン", "アルゼンチン共和国"),
    ("サッカー", "サッカ"),
    ("日本語のテキスト", "日本語"),
    ("ひらがな", "カタカナ"),
    ("서울", "서울특별시"),
    ("대한민국", "한국"),
    ("아르헨티나", "아르헨티나"),
    ("축구 선수", "축구"),
    ("Москва", "Москва"),
    ("Россия", "Российская Федерация"),
    ("Deutschland", "Deutsch land"),
    ("Ελλάδα", "Ελλάδα"),
    ("مصر", "جمهورية مصر"),
    ("भारत", "भारत गणराज्य"),
    ("Việt Nam", "Viet Nam"),
    ("It is Argentina.", "Argentina"),
    ("I don't know", "Argentina"),
    ("1998", "1989"),
    ("Lionel Messi plays football", "football"),
];

pub fn chrf_suite() -> Check {
    let started = Instant::now();
    let plus = ChrfConfig::default();
    let plain = ChrfConfig::chrf();
    for s in ["Argentina", "阿根廷", "アルゼンチン", "아르헨티나", "hockey sobre hielo"] {
        ensure(chrf(s, s, &plus) == 1.0, || format!("identity failed for {s:?}"))?;
    }
    ensure(chrf("abc", "xyz", &plus) == 0.0, || "disjoint strings score above 0".into())?;
    ensure(chrf("", "abc", &plus) == 0.0 && chrf("", "", &plus) == 0.0, || {
        "empty hypothesis scores above 0".into()
    })?;
    for (h, r) in CHRF_PAIRS {
        for (cfg, words) in [(&plus, 2), (&plain, 0)] {
            let got = chrf(h, r, cfg);
            let want = chrf_oracle(h, r, 6, words, 2.0);
            ensure((got - want).abs() <= 1e-6, || {
                format!("chrf({h:?}, {r:?}) word orders {words}: {got} vs oracle {want}")
            })?;
        }
    }
    ensure(started.elapsed() < Duration::from_secs(1), || {
        format!("took {:?}", started.elapsed())
    })
}

fn tie_free(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[0] < w[1]) {
            return v;
        }
    }
}

pub fn spearman_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    for case in 0..1000 {
        let n = rng.random_range(2..=40);
        let (x, y) = (tie_free(&mut rng, n), tie_free(&mut rng, n));
        let got = spearman(&x, &y).map_err(|e| e.to_string())?.value;
        let want = spearman_d2(&x, &y);
        ensure((got - want).abs() <= 1e-12, || {
            format!("case {case} (n={n}): {got} vs d² oracle {want}")
        })?;
    }

    // ranks by hand: x → [1, 2.5, 2.5, 4, 5]; Σdxdy = Σdx² = 9.5, Σdy² = 10
    let x = [10.0, 20.0, 20.0, 30.0, 40.0];
    let y = [1.0, 2.0, 3.0, 4.0, 5.0];
    ensure(average_ranks(&x) == vec![1.0, 2.5, 2.5, 4.0, 5.0], || {
        format!("average ranks {:?}", average_ranks(&x))
    })?;
    let tied = spearman(&x, &y).unwrap().value;
    ensure((tied - 0.95f64.sqrt()).abs() <= 1e-12, || format!("tied case {tied}"))?;

    for case in 0..100 {
        let n = rng.random_range(3..=30);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
        let base = spearman(&x, &y).unwrap().value;
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 7.0).collect();
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        for (name, t) in [("2x+7", &affine), ("x^3", &cubed)] {
            let got = spearman(t, &y).unwrap().value;
            ensure((got - base).abs() <= 1e-12, || {
                format!("case {case}: {name} changed rho {base} -> {got}")
            })?;
        }
    }
    Ok(())
}

fn qa(id: &str, domain: &str, q: &[(&LanguageCode, String)], a: &[(&LanguageCode, String)]) -> QaItem {
    QaItem {
        id: id.to_owned(),
        domain: domain.to_owned(),
        entity: String::new(),
        relation: String::new(),
        questions: q.iter().map(|(l, s)| ((*l).clone(), s.clone())).collect(),
        answers: a.iter().map(|(l, s)| ((*l).clone(), s.clone())).collect(),
    }
}

/// Random 4-language dataset and answers over a small vocabulary so that
/// chrF scores vary and sometimes tie.
fn random_fixture(rng: &mut ChaCha8Rng) -> (Dataset, AnswerSet) {
    const WORDS: [&str; 12] = [
        "alpha", "beta", "gamma", "delta", "北京", "東京", "서울", "paris", "berlin", "roma",
        "lima", "oslo",
    ];
    let langs: Vec<LanguageCode> = ["En", "Zh", "Ja", "Ko"].iter().map(|c| lang(c)).collect();
    let phrase = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(1..=3);
        (0..n)
            .map(|_| *WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut dataset = Dataset {
        languages: langs.clone(),
        ..Dataset::default()
    };
    let mut answers = AnswerSet::new("random", "random");
    for i in 0..8 {
        let id = format!("q{i}");
        let q: Vec<_> = langs.iter().map(|l| (l, format!("question {i}"))).collect();
        let a: Vec<_> = langs.iter().map(|l| (l, phrase(rng))).collect();
        dataset.qa_items.push(qa(&id, "d", &q, &a));
        for l in &langs {
            answers.insert(l.clone(), &id, phrase(rng));
        }
    }
    for i in 0..6 {
        let id = format!("t{i}");
        let mut item = TimelinessItem {
            id: id.clone(),
            questions: BTreeMap::new(),
            candidates: BTreeMap::new(),
        };
        for l in &langs {
            item.questions.insert(l.clone(), format!("when {i}"));
            item.candidates
                .insert(l.clone(), (0..3).map(|_| phrase(rng)).collect());
            answers.insert(l.clone(), &id, phrase(rng));
        }
        dataset.timeliness_items.push(item);
    }
    (dataset, answers)
}

fn table_for<'a>(texts: impl Iterator<Item = &'a str>, provider: &MockProvider) -> EmbeddingTable {
    let mut table = EmbeddingTable::default();
    for t in texts {
        table.insert(t, Arc::new(EmbeddingVector::new(provider.vector_for(t)).unwrap()));
    }
    table
}

fn literal_cos(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
    let nu: f64 = u.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// Spearman with average ranks computed by counting, then Pearson.
fn literal_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Sum over ordered pairs i ≠ j divided by L(L-1).
fn ordered_mean(langs: usize, cell: impl Fn(usize, usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..langs {
        for j in 0..langs {
            if i != j {
                sum += cell(i, j);
            }
        }
    }
    sum / (langs * (langs - 1)) as f64
}

pub fn metric_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = ChrfConfig::default();
    let opts = ScoringOptions::default();
    for round in 0..20 {
        let (dataset, answers) = random_fixture(&mut rng);
        let langs = &dataset.languages;
        let l = langs.len();
        let provider = MockProvider::new(32, round);
        let ids: Vec<&str> = dataset.qa_items.iter().map(|i| i.id.as_str()).collect();
        let table = table_for(
            langs
                .iter()
                .flat_map(|lg| ids.iter().map(|id| answers.get(lg, id).unwrap())),
            &provider,
        );

        let xsc_lit = ordered_mean(l, |i, j| {
            ids.iter()
                .map(|id| {
                    literal_cos(
                        &provider.vector_for(answers.get(&langs[i], id).unwrap()),
                        &provider.vector_for(answers.get(&langs[j], id).unwrap()),
                    )
                })
                .sum::<f64>()
                / ids.len() as f64
        });
        let acc: Vec<Vec<f64>> = langs
            .iter()
            .map(|lg| {
                dataset
                    .qa_items
                    .iter()
                    .map(|it| chrf(answers.get(lg, &it.id).unwrap(), it.answer(lg).unwrap(), &cfg))
                    .collect()
            })
            .collect();
        let xac_lit = ordered_mean(l, |i, j| literal_spearman(&acc[i], &acc[j]));
        let tscore: Vec<Vec<f64>> = langs
            .iter()
            .map(|lg| {
                dataset
                    .timeliness_items
                    .iter()
                    .map(|it| {
                        let ans = answers.get(lg, &it.id).unwrap();
                        let cands = it.candidates(lg).unwrap();
                        let (mut best, mut r) = (0.0, 1);
                        for (k, c) in cands.iter().enumerate() {
                            let s = chrf(ans, c, &cfg);
                            if s > best {
                                best = s;
                                r = k + 1;
                            }
                        }
                        best / r as f64
                    })
                    .collect()
            })
            .collect();
        let xtc_lit = ordered_mean(l, |i, j| literal_spearman(&tscore[i], &tscore[j]));

        let got_xsc = xsc_from_table(&answers, &ids, langs, &table)
            .map_err(|e| e.to_string())?
            .score;
        let got_xac = xac(&answers, &dataset, &opts).map_err(|e| e.to_string())?.score;
        let got_xtc = xtc(&answers, &dataset, &opts).map_err(|e| e.to_string())?.score;
        for (name, got, want) in [
            ("xSC", got_xsc, xsc_lit),
            ("xAC", got_xac, xac_lit),
            ("xTC", got_xtc, xtc_lit),
        ] {
            ensure((got - want).abs() <= 1e-12, || {
                format!("round {round} {name}: {got} vs ordered-pair {want}")
            })?;
        }
    }
    Ok(())
}

/// Ground-truth answers of the fixture, with an embedder that maps each
/// item's aligned answers to one vector.
pub fn ground_truth_setup() -> (Dataset, AnswerSet, MockProvider) {
    let dataset = mini_dataset();
    let mut answers = AnswerSet::new("ground-truth", "oracle");
    let mut provider = MockProvider::new(GOLDEN_DIMS, GOLDEN_SEED);
    for item in &dataset.qa_items {
        let truths: Vec<&str> = dataset
            .languages
            .iter()
            .map(|l| item.answer(l).unwrap())
            .collect();
        provider = provider.with_synonyms(truths);
        for l in &dataset.languages {
            answers.insert(l.clone(), &item.id, item.answer(l).unwrap());
        }
    }
    (dataset, answers, provider)
}

fn xsc_with(dataset: &Dataset, answers: &AnswerSet, provider: &MockProvider) -> Result<f64, String> {
    let ids: Vec<&str> = dataset.qa_items.iter().map(|i| i.id.as_str()).collect();
    let table = table_for(
        dataset
            .languages
            .iter()
            .flat_map(|l| ids.iter().map(move |id| answers.get(l, id).unwrap())),
        provider,
    );
    xsc_from_table(answers, &ids, &dataset.languages, &table)
        .map(|s| s.score)
        .map_err(|e| e.to_string())
}

pub fn xsc_ceiling() -> Check {
    let (dataset, truth, provider) = ground_truth_setup();
    let ceiling = xsc_with(&dataset, &truth, &provider)?;
    ensure((ceiling - 1.0).abs() <= 1e-12, || format!("ceiling {ceiling}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..25 {
        let mut perturbed = truth.clone();
        for _ in 0..rng.random_range(1..=4) {
            let l = dataset.languages.choose(&mut rng).unwrap().clone();
            let item = dataset.qa_items.choose(&mut rng).unwrap();
            let other = dataset.qa_items.choose(&mut rng).unwrap();
            let replacement = if other.id == item.id {
                "I don't know".to_owned()
            } else {
                format!("{} maybe", other.answer(&l).unwrap())
            };
            perturbed.insert(l, &item.id, replacement);
        }
        let got = xsc_with(&dataset, &perturbed, &provider)?;
        ensure(got < ceiling - 1e-9, || {
            format!("round {round}: perturbed xSC {got} not below ceiling {ceiling}")
        })?;
    }
    Ok(())
}

/// Three timeliness items, two languages. `En` answers approximate the
/// newest candidate; `De` has the same candidate one rank further down
/// behind an unrelated newest candidate.
pub fn xtc_mode_fixture() -> (Dataset, AnswerSet) {
    let (a, b) = (lang("En"), lang("De"));
    let newest = ["Argentina", "Brazil", "Colombia"];
    let answer = ["Argent", "Brazil", "Col"];
    let mut dataset = Dataset {
        languages: vec![a.clone(), b.clone()],
        ..Dataset::default()
    };
    let mut answers = AnswerSet::new("modes", "modes");
    for (k, (n, ans)) in newest.iter().zip(answer).enumerate() {
        let id = format!("t{k}");
        let mut item = TimelinessItem {
            id: id.clone(),
            questions: BTreeMap::new(),
            candidates: BTreeMap::new(),
        };
        item.questions.insert(a.clone(), "q".into());
        item.questions.insert(b.clone(), "q".into());
        item.candidates
            .insert(a.clone(), vec![n.to_string(), "777".into(), "888".into()]);
        item.candidates
            .insert(b.clone(), vec!["999".into(), n.to_string(), "888".into()]);
        answers.insert(a.clone(), &id, ans);
        answers.insert(b.clone(), &id, ans);
        dataset.timeliness_items.push(item);
    }
    (dataset, answers)
}

pub fn xtc_modes() -> Check {
    let (dataset, answers) = xtc_mode_fixture();
    let cfg = ChrfConfig::default();
    let (a, b) = (&dataset.languages[0], &dataset.languages[1]);
    for item in &dataset.timeliness_items {
        let score = |l: &LanguageCode, mode| {
            timeliness_score(answers.get(l, &item.id).unwrap(), item.candidates(l).unwrap(), &cfg, mode, 0.0)
                .unwrap()
        };
        let (pa, pb) = (score(a, TimelinessMode::Prose), score(b, TimelinessMode::Prose));
        ensure(pa > 0.0 && pb == pa / 2.0, || {
            format!("{}: prose scores {pa} and {pb}, expected half", item.id)
        })?;
        let (fa, fb) = (score(a, TimelinessMode::Formula), score(b, TimelinessMode::Formula));
        ensure(fa == fb && fa > 0.0, || {
            format!("{}: formula scores {fa} and {fb}, expected equal", item.id)
        })?;
    }
    let prose = xtc(&answers, &dataset, &ScoringOptions::default()).map_err(|e| e.to_string())?;
    ensure((prose.score - 1.0).abs() <= 1e-12 && prose.degenerate_pairs == 0, || {
        format!("prose xTC {}", prose.score)
    })?;
    let formula = xtc(
        &answers,
        &dataset,
        &ScoringOptions {
            timeliness_mode: TimelinessMode::Formula,
            ..ScoringOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure((formula.score - 1.0).abs() <= 1e-12, || {
        format!("formula xTC {}", formula.score)
    })
}

pub async fn golden_e2e() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = dir.path().join("embeddings.bin");
    let cold_dir = dir.path().join("cold");
    let warm_dir = dir.path().join("warm");
    std::fs::create_dir_all(&cold_dir).unwrap();
    std::fs::create_dir_all(&warm_dir).unwrap();
    let (cold, computed) = golden_run(&cold_dir, &cache).await;
    let (warm, recomputed) = golden_run(&warm_dir, &cache).await;
    ensure(computed > 0 && recomputed == 0, || {
        format!("warm cache still computed {recomputed} embeddings")
    })?;
    ensure(cold == warm, || "cold and warm runs differ".into())?;
    check_golden(&golden_report_path(), &cold)?;
    ensure(started.elapsed() < Duration::from_secs(5), || {
        format!("took {:?}", started.elapsed())
    })
}

pub async fn resume_idempotence() -> Check {
    let dataset = mini_dataset();
    let total = dataset.languages.len() * (dataset.qa_items.len() + dataset.timeliness_items.len());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    let llm = MockLlm::start(scripted_model(&dataset)).await;
    let cfg = golden_collection_config(&llm.url);
    let full = collect_answers(&dataset, &dataset.languages, &cfg, &PromptSources::default(), dir.path().join("full.jsonl"))
        .await
        .map_err(|e| e.to_string())?
        .answers;

    // interrupt after several different amounts of progress
    for stop_after in [1usize, 17, 50] {
        let store = dir.path().join(format!("resumed-{stop_after}.jsonl"));
        let slow = MockLlm::start_with_delay(scripted_model(&dataset), Duration::from_millis(3)).await;
        let slow_cfg = golden_collection_config(&slow.url);
        let task = {
            let (dataset, store) = (dataset.clone(), store.clone());
            tokio::spawn(async move {
                collect_answers(&dataset, &dataset.languages, &slow_cfg, &PromptSources::default(), &store).await
            })
        };
        let deadline = Instant::now() + Duration::from_secs(10);
        while std::fs::read_to_string(&store).map_or(0, |s| s.lines().count()) <= stop_after {
            if Instant::now() > deadline {
                return Err("collection made no progress".into());
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
        task.abort();
        let _ = task.await;
        let partial = AnswerStore::read(&store).map_err(|e| e.to_string())?.1.len();
        ensure(partial < total, || format!("run of {stop_after} finished before interruption"))?;

        let resumed = collect_answers(&dataset, &dataset.languages, &cfg, &PromptSources::default(), &store)
            .await
            .map_err(|e| e.to_string())?
            .answers;
        ensure(resumed == full, || format!("resumed after {partial} cells differs"))?;
        let reloaded = load_answer_set(&store).map_err(|e| e.to_string())?;
        ensure(reloaded == full, || "stored answers differ".into())?;
    }
    Ok(())
}

pub fn fixture_report(langs: Option<&[&str]>) -> Result<ConsistencyReport, String> {
    let dataset = mini_dataset();
    let answers = load_answer_set(fixture("answers_mini.jsonl")).map_err(|e| e.to_string())?;
    let provider = MockProvider::new(GOLDEN_DIMS, GOLDEN_SEED);
    let texts: Vec<&str> = answers
        .answers
        .values()
        .flat_map(|m| m.values().map(String::as_str))
        .collect();
    let table = table_for(texts.into_iter(), &provider);
    let opts = ScoringOptions {
        languages: langs.map(|ls| ls.iter().map(|l| lang(l)).collect()),
        ..ScoringOptions::default()
    };
    build_report(&answers, &dataset, &table, &opts, "mock").map_err(|e| e.to_string())
}

fn same_bits(a: Option<f64>, b: Option<f64>) -> bool {
    a.map(f64::to_bits) == b.map(f64::to_bits)
}

pub fn invariances() -> Check {
    let base = fixture_report(None)?;
    let permuted = fixture_report(Some(&["Es", "En", "Zh"]))?;
    ensure(same_bits(Some(base.xsc), Some(permuted.xsc)), || "xSC changed under permutation".into())?;
    ensure(same_bits(base.xac, permuted.xac), || "xAC changed under permutation".into())?;
    ensure(same_bits(base.xtc, permuted.xtc), || "xTC changed under permutation".into())?;
    ensure(
        same_bits(base.xc.map(|x| x.value), permuted.xc.map(|x| x.value)),
        || "xC changed under permutation".into(),
    )?;
    for (d, s) in &base.domains {
        ensure(same_bits(Some(s.xsc), permuted.domains.get(d).map(|p| p.xsc)), || {
            format!("domain {d} changed under permutation")
        })?;
    }
    for name in ["xsc", "xac", "xtc"] {
        let (m, p) = (base.matrix(name).unwrap(), permuted.matrix(name).unwrap());
        for a in &m.languages {
            for b in &m.languages {
                ensure(same_bits(m.get_by_code(a, b), p.get_by_code(a, b)), || {
                    format!("{name}[{a}][{b}] changed under permutation")
                })?;
            }
        }
        ensure(m.is_symmetric(1e-12), || format!("{name} matrix not symmetric"))?;
    }

    for keep in [["En", "Es"], ["Zh", "Es"], ["Zh", "En"]] {
        let dropped = fixture_report(Some(&keep))?;
        for name in ["xsc", "xac", "xtc"] {
            let (m, d) = (base.matrix(name).unwrap(), dropped.matrix(name).unwrap());
            let (a, b) = (lang(keep[0]), lang(keep[1]));
            ensure(same_bits(m.get_by_code(&a, &b), d.get_by_code(&a, &b)), || {
                format!("{name}[{a}][{b}] changed when the third language was dropped")
            })?;
        }
    }
    Ok(())
}
