mod common;

use std::collections::BTreeMap;

use common::{fixture, mini_dataset};
use proptest::prelude::*;
use unicode_normalization::UnicodeNormalization;
use xlingual_core::dataset::{
    load_dataset, load_dataset_unchecked, read_dataset, read_dataset_unchecked, validate_alignment,
    write_dataset, DatasetError, Dataset, Field, LanguageCode, QaItem, TimelinessItem,
    ViolationKind,
};

#[test]
fn mini_fixture_shape() {
    let d = mini_dataset();
    let codes: Vec<&str> = d.languages.iter().map(LanguageCode::as_str).collect();
    assert_eq!(codes, ["En", "Zh", "Es"]);
    assert_eq!(d.qa_items.len(), 24);
    assert_eq!(d.timeliness_items.len(), 4);
    assert!(d.timeliness_items.iter().all(|t| t.rank_count() == 3));
    assert!(d.domain_counts().values().all(|&n| n == 6));
    assert!(validate_alignment(&d).is_empty());
    for domain in d.domains() {
        assert_eq!(d.exemplar_pool(&domain).len(), 5, "{domain}");
    }
    assert_eq!(d.exemplar_pool("timeliness").len(), 5);
}

#[test]
fn misaligned_fixture_lists_every_violation() {
    let path = fixture("makqa_misaligned.jsonl");
    let d = load_dataset_unchecked(&path).unwrap();
    let report = validate_alignment(&d);
    assert_eq!(report.len(), 2, "{report}");
    let zh = LanguageCode::new("Zh").unwrap();
    let es = LanguageCode::new("Es").unwrap();
    let found: Vec<(Option<&str>, &ViolationKind)> = report
        .violations
        .iter()
        .map(|v| (v.item_id.as_deref(), &v.kind))
        .collect();
    assert!(found.contains(&(
        Some("geo-03"),
        &ViolationKind::Missing {
            language: zh,
            field: Field::Question
        }
    )));
    assert!(found.contains(&(
        Some("ppl-01"),
        &ViolationKind::Empty {
            language: Some(es),
            field: Field::Answer
        }
    )));

    match load_dataset(&path) {
        Err(DatasetError::Invalid { line, violation }) => {
            assert_eq!(line, 4);
            assert_eq!(violation.item_id.as_deref(), Some("geo-03"));
        }
        other => panic!("expected an invalid-dataset error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        load_dataset(fixture("no_such_file.jsonl")),
        Err(DatasetError::Io { .. })
    ));
}

#[test]
fn fixture_rewrite_is_stable() {
    let d = mini_dataset();
    let mut first = Vec::new();
    write_dataset(&d, &mut first).unwrap();
    let back = read_dataset(first.as_slice()).unwrap();
    assert_eq!(back, d);
    let mut second = Vec::new();
    write_dataset(&back, &mut second).unwrap();
    assert_eq!(first, second);
    assert_eq!(back.content_hash(), d.content_hash());
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 éü中文가-힣ابت]{0,6}[a-zA-Z中é]".prop_map(|s| s.nfc().collect())
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    let langs = prop::sample::subsequence(vec!["En", "Zh", "De", "Ja", "Ar", "Ko"], 2..=4);
    (langs, 1usize..5, 0usize..3, 1usize..4)
        .prop_flat_map(|(langs, n_qa, n_time, ranks)| {
            let l = langs.len();
            (
                Just(langs),
                prop::collection::vec((text(), prop::collection::vec((text(), text()), l)), n_qa),
                prop::collection::vec(prop::collection::vec((text(), prop::collection::vec(text(), ranks)), l), n_time),
                prop::collection::vec(prop::collection::vec((text(), text()), l), 0..3),
            )
        })
        .prop_map(|(langs, qa, time, pool)| {
            let codes: Vec<LanguageCode> =
                langs.iter().map(|c| LanguageCode::new(*c).unwrap()).collect();
            let qa_item = |id: String, domain: &str, entity: String, per_lang: &[(String, String)]| QaItem {
                id,
                domain: domain.to_owned(),
                entity,
                relation: "rel".into(),
                questions: codes.iter().cloned().zip(per_lang.iter().map(|p| p.0.clone())).collect(),
                answers: codes.iter().cloned().zip(per_lang.iter().map(|p| p.1.clone())).collect(),
            };
            let qa_items = qa
                .iter()
                .enumerate()
                .map(|(k, (entity, per_lang))| qa_item(format!("q{k}"), "d", entity.clone(), per_lang))
                .collect();
            let timeliness_items = time
                .into_iter()
                .enumerate()
                .map(|(k, per_lang)| TimelinessItem {
                    id: format!("t{k}"),
                    questions: codes.iter().cloned().zip(per_lang.iter().map(|p| p.0.clone())).collect(),
                    candidates: codes.iter().cloned().zip(per_lang.into_iter().map(|p| p.1)).collect(),
                })
                .collect();
            let mut few_shot_pool = BTreeMap::new();
            if !pool.is_empty() {
                let items = pool
                    .iter()
                    .enumerate()
                    .map(|(k, per_lang)| qa_item(format!("x{k}"), "d", String::new(), per_lang))
                    .collect();
                few_shot_pool.insert("d".to_owned(), items);
            }
            Dataset {
                languages: codes,
                qa_items,
                timeliness_items,
                few_shot_pool,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_round_trips(d in dataset_strategy()) {
        prop_assert!(validate_alignment(&d).is_empty());
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset_unchecked(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.content_hash(), d.content_hash());
    }
}

/// Needs the full MAKQA file; set XLINGUAL_MAKQA to its path.
#[test]
fn full_makqa_domain_counts() {
    let Some(path) = std::env::var_os("XLINGUAL_MAKQA") else {
        eprintln!("skipped: XLINGUAL_MAKQA not set");
        return;
    };
    let d = load_dataset(std::path::Path::new(&path)).unwrap();
    let counts: BTreeMap<String, usize> = d
        .domain_counts()
        .into_iter()
        .map(|(k, v)| (k.to_lowercase(), v))
        .collect();
    let expected: BTreeMap<String, usize> = [
        ("sports", 253),
        ("movie", 432),
        ("science", 492),
        ("history", 389),
        ("geography", 286),
        ("literature", 165),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    assert_eq!(counts, expected);
    assert_eq!(d.timeliness_items.len(), 136);
}
