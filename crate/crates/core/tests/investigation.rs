mod common;

use common::oracle;
use litpilot::corpus::{parse_document, PaperDocument, SourceFormat};
use litpilot::embedding::EmbeddingVector;
use litpilot::investigation::{
    cluster_papers, compute_summary_stats, generate_review, scholar_survey, topic_search, trend_slope, InvestigationError, TopicDeps,
};
use litpilot::llm::MockBackend;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

fn paper(title: &str, year: Option<i32>) -> PaperDocument {
    let year = year.map_or(String::new(), |y| format!("Year: {y}\n"));
    parse_document(&format!("Title: {title}\n{year}\n# Abstract\n{title} studies graphs."), SourceFormat::Markdown).unwrap()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn vectors(points: &[Vec<f64>]) -> BTreeMap<String, EmbeddingVector> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("p{i:02}"), EmbeddingVector::from_raw(p.iter().map(|&x| x as f32).collect())))
        .collect()
}

fn as_f64(v: &BTreeMap<String, EmbeddingVector>) -> Vec<Vec<f64>> {
    v.values().map(|e| e.values().iter().map(|&x| f64::from(x)).collect()).collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| unit(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())).collect()
}

#[test]
fn stats_examples() {
    let ps = [paper("alpha", Some(2021)), paper("beta", Some(2021)), paper("gamma", Some(2023))];
    let refs: Vec<&PaperDocument> = ps.iter().collect();
    let stats = compute_summary_stats(&refs, &refs);
    assert_eq!(stats.paper_count, 3);
    assert_eq!(stats.year_histogram, BTreeMap::from([(2021, 2), (2023, 1)]));
    assert_eq!(stats.trend_slope, trend_slope(&stats.year_histogram));
    assert!(stats.recent_keywords.iter().any(|(t, _)| t == "gamma"));

    assert_eq!(trend_slope(&BTreeMap::from([(2021, 1), (2022, 2), (2023, 3)])), 1.0);
    assert_eq!(trend_slope(&BTreeMap::from([(2021, 2), (2023, 2)])), 0.0);
    assert_eq!(trend_slope(&BTreeMap::from([(2019, 5)])), 0.0);

    let undated = [paper("x", None), paper("y", Some(2020))];
    let refs: Vec<&PaperDocument> = undated.iter().collect();
    let stats = compute_summary_stats(&refs, &refs);
    assert_eq!(stats.paper_count, 2);
    assert_eq!(stats.year_histogram.values().sum::<usize>(), 1);
}

#[test]
fn k_equal_n_has_zero_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = vectors(&random_points(&mut rng, 6, 4));
    let a = cluster_papers(&v, 6, 0).unwrap();
    assert!(a.objective.abs() < 1e-9, "{}", a.objective);
    assert_eq!(a.members().iter().filter(|m| m.len() == 1).count(), 6);
}

#[test]
fn separated_groups_are_recovered() {
    let a = unit(&[1.0, 0.0, 0.0]);
    let b = unit(&[0.0, 1.0, 0.0]);
    let v = vectors(&[a.clone(), b.clone(), a.clone(), b.clone(), a, b]);
    let out = cluster_papers(&v, 2, 11).unwrap();
    let mut groups = out.members();
    groups.sort();
    assert_eq!(groups, [vec!["p00", "p02", "p04"], vec!["p01", "p03", "p05"]]);
    assert!(out.objective.abs() < 1e-9);
}

#[test]
fn lloyd_is_near_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10 {
        let v = vectors(&random_points(&mut rng, 8, 3));
        let points = as_f64(&v);
        let out = cluster_papers(&v, 2, trial).unwrap();
        let best = oracle::exhaustive_kmeans(&points, 2);
        assert!(out.objective <= best * 1.05 + 1e-9, "trial {trial}: {} vs {best}", out.objective);
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", out.objective_trace);
        }
        let labels: Vec<usize> = out.labels.values().copied().collect();
        let recomputed = oracle::labelling_objective(&points, &labels, 2).unwrap();
        assert!((recomputed - out.objective).abs() < 1e-5);
        assert_eq!(out, cluster_papers(&v, 2, trial).unwrap());
    }
}

#[test]
fn invalid_k_is_rejected() {
    let v = vectors(&[unit(&[1.0, 0.0]), unit(&[0.0, 1.0])]);
    assert!(matches!(cluster_papers(&v, 0, 0), Err(InvestigationError::InvalidK { k: 0, n: 2 })));
    assert!(matches!(cluster_papers(&v, 3, 0), Err(InvestigationError::InvalidK { k: 3, n: 2 })));
}

#[test]
fn scholar_survey_groups() {
    let dir = tempfile::tempdir().unwrap();
    let backend = common::mock();
    let (app, _) = common::fixture_app(dir.path(), Arc::clone(&backend));

    let one = scholar_survey("Gao Yan", &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap();
    assert_eq!(one.groups.len(), 1);
    assert_eq!(one.groups[0].doc_ids.len(), 1);

    assert!(matches!(
        scholar_survey("Nobody Here", &app.library, app.backend.as_ref(), &app.prompts, 0),
        Err(InvestigationError::ScholarNotFound(_))
    ));

    let survey = scholar_survey("li wei", &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap();
    let ids: Vec<String> = survey.groups.iter().flat_map(|g| g.doc_ids.clone()).collect();
    assert_eq!(ids.len(), 6);
    assert_eq!(survey.groups.len(), 2);
    assert!(survey.groups[0].doc_ids.len() >= survey.groups[1].doc_ids.len());

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (g, group) in survey.groups.iter().enumerate() {
        for id in &group.doc_ids {
            let p = app.library.paper(id).unwrap();
            let v = app.library.embed(&p.title_and_abstract()).unwrap();
            points.push(v.values().iter().map(|&x| f64::from(x)).collect::<Vec<f64>>());
            labels.push(g);
        }
    }
    let got = oracle::labelling_objective(&points, &labels, 2).unwrap();
    let best = oracle::exhaustive_kmeans(&points, 2);
    assert!(got <= best * 1.05 + 1e-9, "{got} vs {best}");
}

#[test]
fn review_limits_and_minimal_case() {
    let dir = tempfile::tempdir().unwrap();
    let backend = common::mock();
    let (app, ids) = common::fixture_app(dir.path(), Arc::clone(&backend));
    backend.clear_transcript();

    let many: Vec<String> = (0..31).map(|i| format!("{i:016x}")).collect();
    let err = generate_review(&many, &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap_err();
    assert!(matches!(err, InvestigationError::LimitExceeded { limit: 30, got: 31 }));
    assert!(err.to_string().contains("maximum of 30"));
    assert!(matches!(
        generate_review(&[], &app.library, app.backend.as_ref(), &app.prompts, 0),
        Err(InvestigationError::EmptySelection)
    ));
    assert!(matches!(
        generate_review(&["nope".into()], &app.library, app.backend.as_ref(), &app.prompts, 0),
        Err(InvestigationError::UnknownDocId(_))
    ));
    assert_eq!(backend.call_count(), 0);

    let review = generate_review(&ids[..1], &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap();
    assert_eq!(review.body_sections.len(), 1);
    assert_eq!(review.bibliography.len(), 1);
    assert_eq!(review.bibliography[0].doc_id, ids[0]);
    assert!(review.citations_resolve());
}

#[test]
fn unknown_citation_markers_are_removed() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(MockBackend::fixed("HEADING: Theme\nSee [2] and [99], also [1]."));
    let (app, ids) = common::fixture_app(dir.path(), Arc::clone(&backend));
    let review = generate_review(&ids[..3], &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap();
    assert!(review.citation_violations > 0);
    assert!(review.citations_resolve());
    assert!(!review.to_markdown().contains("[99]"));
    for s in &review.body_sections {
        assert!(!s.text.contains("  ") && !s.text.contains(" ,"), "{:?}", s.text);
    }
    assert_eq!(review.bibliography.len(), 3);
    let numbers: Vec<usize> = review.bibliography.iter().map(|b| b.ref_number).collect();
    assert_eq!(numbers, [1, 2, 3]);
    // The paper cited first becomes reference 1.
    assert_eq!(review.bibliography[0].doc_id, ids[1]);
}

#[test]
fn topic_search_degrades_without_backend() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(MockBackend::unavailable());
    let (app, _) = common::fixture_app(dir.path(), Arc::clone(&backend));
    let deps = TopicDeps {
        library: &app.library,
        backend: app.backend.as_ref(),
        prompts: &app.prompts,
        gazetteer: &app.gazetteer,
        plugins: &app.plugins,
    };
    let out = topic_search("dense passage retrieval", &deps, 5).unwrap();
    assert!(out.degraded);
    assert!(!out.hits.is_empty());
    assert_eq!(out.rewritten_query, "dense passage retrieval");
    assert_eq!(out.stats.paper_count, out.hits.len());
}

#[test]
fn empty_topic_search_skips_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let backend = common::mock();
    let (app, _) = common::fixture_app(dir.path(), Arc::clone(&backend));
    backend.clear_transcript();
    let deps = TopicDeps {
        library: &app.library,
        backend: app.backend.as_ref(),
        prompts: &app.prompts,
        gazetteer: &app.gazetteer,
        plugins: &app.plugins,
    };
    let out = topic_search("graph papers in 1950", &deps, 5).unwrap();
    assert!(out.hits.is_empty(), "{:?}", out.hits);
    assert_eq!(out.stats.paper_count, 0);
    assert_eq!(backend.call_count(), 1);
    assert!(backend.transcript_text().contains("Task: query rewriting."));
}

proptest! {
    #[test]
    fn slope_matches_closed_form(counts in prop::collection::vec(0usize..20, 2..12), start in 1990i32..2020) {
        let h: BTreeMap<i32, usize> = counts.iter().enumerate().map(|(i, &c)| (start + i as i32, c)).collect();
        let n = counts.len() as f64;
        let sx: f64 = (0..counts.len()).map(|i| i as f64).sum();
        let sy: f64 = counts.iter().map(|&c| c as f64).sum();
        let sxy: f64 = counts.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
        let sxx: f64 = (0..counts.len()).map(|i| (i * i) as f64).sum();
        let expected = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        prop_assert!((trend_slope(&h) - expected).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_dated_papers(years in prop::collection::vec(prop::option::of(2000i32..2010), 1..15)) {
        let ps: Vec<PaperDocument> = years.iter().enumerate().map(|(i, y)| paper(&format!("t{i}"), *y)).collect();
        let refs: Vec<&PaperDocument> = ps.iter().collect();
        let stats = compute_summary_stats(&refs, &refs);
        prop_assert_eq!(stats.paper_count, ps.len());
        prop_assert_eq!(stats.year_histogram.values().sum::<usize>(), years.iter().flatten().count());
    }
}
