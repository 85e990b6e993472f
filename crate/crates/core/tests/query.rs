use litpilot::llm::{MockBackend, MockRule, PromptLibrary};
use litpilot::query::{
    attribute_spans, dispatch, extract_entities, rewrite_query, Gazetteer, PluginRegistry, QueryError, SpanKind, StaticPlugin,
    StructuredQuery,
};
use litpilot::retrieval::SearchHit;
use proptest::prelude::*;
use std::sync::Arc;

const SCHOLARS: &[&str] = &["Chris Manning", "Li Wei", "Ana Costa"];
const INSTITUTIONS: &[&str] = &["Stanford University", "Stanford", "Tsinghua University"];
const DOMAINS: &[&str] = &["fake news", "language model", "large language model", "graph learning"];

fn gaz() -> Gazetteer {
    Gazetteer::new(SCHOLARS, INSTITUTIONS, DOMAINS).unwrap()
}

/// Leftmost-longest scan over word-aligned substrings, written directly.
fn lookup(query: &str) -> (Vec<String>, Vec<String>, Vec<String>) {
    let lower: Vec<char> = query.to_lowercase().chars().collect();
    let boundary = |i: usize| i == 0 || i == lower.len() || !lower[i - 1].is_alphanumeric() || !lower[i].is_alphanumeric();
    let mut found = (Vec::new(), Vec::new(), Vec::new());
    let all: Vec<(usize, &str)> = [SCHOLARS, INSTITUTIONS, DOMAINS]
        .iter()
        .enumerate()
        .flat_map(|(k, list)| list.iter().map(move |p| (k, *p)))
        .collect();
    let mut i = 0;
    while i < lower.len() {
        let best = all
            .iter()
            .filter(|(_, p)| {
                let p: Vec<char> = p.to_lowercase().chars().collect();
                i + p.len() <= lower.len() && lower[i..i + p.len()] == p[..] && boundary(i) && boundary(i + p.len())
            })
            .max_by_key(|(_, p)| p.chars().count());
        match best {
            Some(&(k, p)) => {
                let list = [&mut found.0, &mut found.1, &mut found.2];
                let target = list.into_iter().nth(k).unwrap();
                if !target.contains(&p.to_string()) {
                    target.push(p.to_string());
                }
                i += p.chars().count();
            }
            None => i += 1,
        }
    }
    found
}

fn entities(sq: &StructuredQuery) -> (Vec<String>, Vec<String>, Vec<String>) {
    (sq.scholars.clone(), sq.institutions.clone(), sq.domains.clone())
}

#[test]
fn investigation_copilot_queries() {
    let q1 = "What research has Chris Manning from Stanford University conducted";
    let sq = extract_entities(q1, &gaz()).unwrap();
    assert_eq!(entities(&sq), lookup(q1));
    assert_eq!(sq.scholars, ["Chris Manning"]);
    assert_eq!(sq.institutions, ["Stanford University"]);

    let q2 = "What are the recent papers of fake news section in 2023";
    let sq = extract_entities(q2, &gaz()).unwrap();
    assert_eq!(entities(&sq), lookup(q2));
    assert_eq!(sq.domains, ["fake news"]);
    assert_eq!(sq.years, [2023]);
    assert!(sq.keywords.contains(&"recent".to_string()));
}

#[test]
fn unmatched_query_is_all_keywords() {
    let sq = extract_entities("contrastive retrieval of chemistry papers", &gaz()).unwrap();
    assert_eq!(sq.keywords, ["contrastive", "retrieval", "chemistry", "papers"]);
    assert_eq!(entities(&sq), (vec![], vec![], vec![]));
    assert!(sq.years.is_empty() && sq.year_ranges.is_empty());
}

#[test]
fn longest_phrase_wins() {
    let sq = extract_entities("Large Language Model evaluation", &gaz()).unwrap();
    assert_eq!(sq.domains, ["large language model"]);
}

#[test]
fn rewrite_uses_backend_reply() {
    let q = "In the library, what LLM technologies can assist users in improving the efficiency of finding books?";
    let mock = MockBackend::new(vec![
        MockRule::contains("finding books", "\"Applications of large models in library search domain\""),
        MockRule::catch_all("?"),
    ])
    .unwrap();
    let out = rewrite_query(q, &mock, &PromptLibrary::builtin()).unwrap();
    assert_eq!(out, "Applications of large models in library search domain");
}

#[test]
fn rewrite_falls_back_to_cleaned_query() {
    let prompts = PromptLibrary::builtin();
    assert_eq!(rewrite_query("  graph  \t learning ", &MockBackend::unavailable(), &prompts).unwrap(), "graph learning");
    assert_eq!(rewrite_query("q", &MockBackend::fixed(" '' "), &prompts).unwrap(), "q");

    let echo = MockBackend::fixed("rewritten");
    rewrite_query("  q  ", &echo, &prompts).unwrap();
    assert!(echo.transcript_text().contains("Request: q\n"));
    assert_eq!(rewrite_query(" \n ", &echo, &prompts), Err(QueryError::EmptyQuery));
}

fn hit(id: &str) -> SearchHit {
    SearchHit {
        chunk_id: id.into(),
        score: 0.5,
        snippet: String::new(),
    }
}

fn registry(scholar_fails: bool) -> PluginRegistry {
    let mut reg = PluginRegistry::new();
    let scholar = if scholar_fails {
        StaticPlugin::failing("scholar-index", "offline")
    } else {
        StaticPlugin::new("scholar-index", vec![hit("s1"), hit("s2")])
    };
    assert!(reg.register(Arc::new(scholar)));
    assert!(reg.register(Arc::new(StaticPlugin::new("local-index", vec![hit("l1")]))));
    assert!(!reg.register(Arc::new(StaticPlugin::new("local-index", vec![]))));
    reg
}

#[test]
fn dispatch_routing_table() {
    let people = StructuredQuery {
        scholars: vec!["Li Wei".into()],
        ..StructuredQuery::default()
    };
    let out = dispatch(&people, &registry(false), 5).unwrap();
    assert_eq!(out.keys().collect::<Vec<_>>(), ["scholar-index"]);

    let both = StructuredQuery {
        keywords: vec!["graphs".into()],
        ..people.clone()
    };
    let out = dispatch(&both, &registry(false), 1).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out["scholar-index"].as_ref().unwrap().len(), 1);
    assert_eq!(out["local-index"].as_ref().unwrap()[0].chunk_id, "l1");

    let out = dispatch(&both, &registry(true), 5).unwrap();
    assert!(out["scholar-index"].is_err());
    assert!(out["local-index"].is_ok());

    let mut local_only = PluginRegistry::new();
    local_only.register(Arc::new(StaticPlugin::new("local-index", vec![])));
    assert_eq!(dispatch(&people, &local_only, 5).unwrap_err(), QueryError::NoPluginMatched);
    assert_eq!(dispatch(&people, &registry(false), 0).unwrap_err(), QueryError::InvalidK);
}

fn query_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        prop::sample::select(vec![
            "Chris Manning", "chris manning", "STANFORD", "Stanford University", "fake news", "large language model", "language model",
            "graph learning", "Li Wei",
        ])
        .prop_map(str::to_string),
        prop::sample::select(vec!["the", "of", "papers", "since", "2019", "2015-2017", "1850", "recent", "检索", "的", ",", "?"])
            .prop_map(str::to_string),
        "[a-z]{1,7}",
    ];
    prop::collection::vec(piece, 1..12).prop_map(|v| v.join(" "))
}

proptest! {
    #[test]
    fn extraction_matches_lookup_oracle(q in query_text()) {
        let sq = extract_entities(&q, &gaz()).unwrap();
        prop_assert_eq!(entities(&sq), lookup(&q));
        prop_assert!(sq.years.iter().all(|y| (1900..=2100).contains(y)));
    }

    #[test]
    fn every_character_is_attributed_once(q in query_text()) {
        let spans = attribute_spans(&q, &gaz());
        let mut at = 0;
        for a in &spans {
            prop_assert_eq!(a.span.start, at, "gap or overlap in {:?}", spans);
            at = a.span.end;
        }
        prop_assert_eq!(at, q.len());
        for a in spans.iter().filter(|a| a.kind == SpanKind::Keyword) {
            prop_assert!(!q[a.span.clone()].trim().is_empty());
        }
    }

    #[test]
    fn rewrite_is_never_empty(q in "[a-z ]{0,12}[a-z][a-z ]{0,12}", reply in "[ '\"]{0,4}[a-z ]{0,6}") {
        let out = rewrite_query(&q, &MockBackend::fixed(reply), &PromptLibrary::builtin()).unwrap();
        prop_assert!(!out.trim().is_empty());
    }
}
