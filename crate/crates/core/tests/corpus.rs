mod common;

use common::gen::{body, chunks_by_section, random_source, sentence};
use common::oracle;
use litpilot::corpus::{clean_text, parse_document, reconstruct_section, split_into_chunks, Chunk, ChunkPolicy, PaperDocument, Section, SourceFormat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

#[test]
fn clean_text_examples() {
    assert_eq!(clean_text("foo-\nbar"), "foobar");
    assert_eq!(clean_text("a  \t b"), "a b");
    let page = |body: &str| format!("Proc. of XYZ 2023\n{body}");
    let raw = [page("First page."), page("Second page."), page("Third page."), page("Fourth page.")].join("\x0C");
    assert_eq!(clean_text(&raw), "First page.\nSecond page.\nThird page.\nFourth page.");
}

#[test]
fn markdown_tree_example() {
    let doc = parse_document("# Intro\nA\n## Method\nB", SourceFormat::Markdown).unwrap();
    let expected = vec![Section {
        heading: "Intro".into(),
        depth: 1,
        body: "A".into(),
        children: vec![Section {
            heading: "Method".into(),
            depth: 2,
            body: "B".into(),
            children: vec![],
        }],
    }];
    assert_eq!(doc.sections, expected);
}

#[test]
fn headingless_source_is_front_matter() {
    let doc = parse_document("just some text\nover two lines", SourceFormat::Plain).unwrap();
    assert_eq!(doc.sections.len(), 1);
    assert_eq!(doc.sections[0].heading, "Front Matter");
    assert_eq!(doc.sections[0].depth, 1);
    assert!(doc.sections[0].children.is_empty());
}

#[test]
fn numbered_plain_text_tree() {
    let src = "Title: Numbered\n\n1. Introduction\nWhy it matters.\n2. Method\nOverview.\n2.1 Encoder\nEncodes.\n2.1.1 Features\nHashed n-grams.\n2.2 Decoder\nDecodes.\n3. Results\nGood.";
    let doc = parse_document(src, SourceFormat::Plain).unwrap();
    let leaf = |h: &str, depth: usize, body: &str| Section {
        heading: h.into(),
        depth,
        body: body.into(),
        children: vec![],
    };
    let mut encoder = leaf("Encoder", 2, "Encodes.");
    encoder.children.push(leaf("Features", 3, "Hashed n-grams."));
    let mut method = leaf("Method", 1, "Overview.");
    method.children = vec![encoder, leaf("Decoder", 2, "Decodes.")];
    let expected = vec![leaf("Introduction", 1, "Why it matters."), method, leaf("Results", 1, "Good.")];
    assert_eq!(doc.title, "Numbered");
    assert_eq!(doc.sections, expected);
}

#[test]
fn short_section_is_one_chunk() {
    let doc = parse_document("# One\none two three four five six seven eight nine ten", SourceFormat::Markdown).unwrap();
    let chunks = split_into_chunks(&doc, &ChunkPolicy::default()).unwrap();
    assert_eq!(chunks.len(), 1);
    assert_eq!(chunks[0].text, doc.sections[0].body);
    assert_eq!(chunks[0].token_count, 10);
}

#[test]
fn two_sections_two_chunks() {
    let doc = parse_document("# A\nalpha beta.\n# B\ngamma delta.", SourceFormat::Markdown).unwrap();
    let chunks = split_into_chunks(&doc, &ChunkPolicy::default()).unwrap();
    assert_eq!(chunks.len(), 2);
    assert_ne!(chunks[0].section_path, chunks[1].section_path);
    assert_eq!(chunks[0].text, "alpha beta.");
    assert_eq!(chunks[1].text, "gamma delta.");
}

#[test]
fn long_section_matches_reference_splitter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1200);
    let mut text = String::new();
    while oracle::tokens(&text).len() < 1200 {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&sentence(&mut rng));
    }
    let toks = oracle::tokens(&text);
    let text = text[..toks[1199].1].to_string();
    assert_eq!(oracle::tokens(&text).len(), 1200);

    let doc = parse_document(&format!("# Long\n{text}"), SourceFormat::Markdown).unwrap();
    assert_eq!(doc.sections[0].body, text);
    let policy = ChunkPolicy::new(512, 64, 32).unwrap();
    let chunks = split_into_chunks(&doc, &policy).unwrap();
    let spans: Vec<(usize, usize)> = chunks.iter().map(|c| c.char_span).collect();
    assert_eq!(spans, oracle::greedy_split(&text, 512, 64, 32));
    assert!(chunks.len() >= 3);
}

#[test]
fn generated_corpus_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut ids = HashSet::new();
    for i in 0..500 {
        let doc = parse_document(&random_source(&mut rng, i), SourceFormat::Markdown).unwrap();
        let max = rng.random_range(4..80);
        let overlap = rng.random_range(0..max);
        let min = rng.random_range(0..=max);
        let policy = ChunkPolicy::new(max, overlap, min).unwrap();
        let chunks = split_into_chunks(&doc, &policy).unwrap();
        for c in &chunks {
            assert!(c.token_count <= max, "doc {i}: {} > {max}", c.token_count);
            assert!(ids.insert(c.chunk_id.clone()), "duplicate chunk id");
        }
        for (body, section_chunks) in chunks_by_section(&doc, &chunks) {
            assert_eq!(reconstruct_section(&section_chunks), body, "doc {i}");
            let spans: Vec<(usize, usize)> = section_chunks.iter().map(|c| c.char_span).collect();
            assert_eq!(spans, oracle::greedy_split(&body, max, overlap, min), "doc {i} policy {policy:?}");
            for pair in section_chunks.windows(2) {
                let shared = oracle::tokens(&body[pair[1].char_span.0..pair[0].char_span.1]).len();
                assert!(pair[0].char_span.1 <= pair[1].char_span.0 || shared <= overlap);
            }
        }
    }
}

#[test]
fn parse_serialize_parse_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sources: Vec<String> = common::paper_paths().iter().map(|p| std::fs::read_to_string(p).unwrap()).collect();
    sources.extend((0..50).map(|i| random_source(&mut rng, i)));
    for src in sources {
        let once = parse_document(&src, SourceFormat::Markdown).unwrap();
        let twice = parse_document(&once.to_source(), SourceFormat::Markdown).unwrap();
        assert_eq!(once, twice);
        let json = serde_json::to_string(&once).unwrap();
        assert_eq!(serde_json::from_str::<PaperDocument>(&json).unwrap(), once);
    }
}

#[test]
fn doc_id_depends_on_content_only() {
    let a = parse_document("Title: T\n\n# S\nbody", SourceFormat::Markdown).unwrap();
    let b = parse_document("Title: T\nSource: elsewhere.md\n\n# S\nbody", SourceFormat::Markdown).unwrap();
    let c = parse_document("Title: T\n\n# S\nother body", SourceFormat::Markdown).unwrap();
    assert_eq!(a.doc_id, b.doc_id);
    assert_ne!(a.doc_id, c.doc_id);
    assert_eq!(a.doc_id.len(), 16);
}

fn messy_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("-\n".to_string()),
        Just("\x0C".to_string()),
        Just("\n".to_string()),
        Just("  ".to_string()),
        Just("\t".to_string()),
        Just("\r\n".to_string()),
        Just("\u{7}".to_string()),
        Just("Header line\n".to_string()),
        Just("检索".to_string()),
        "[a-zA-Z0-9]{1,6}",
    ];
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn clean_text_is_idempotent(raw in messy_text()) {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once.clone());
        prop_assert!(!once.chars().any(|c| c.is_control() && c != '\n'));
    }

    #[test]
    fn clean_text_is_idempotent_on_any_string(raw in any::<String>()) {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn chunks_reconstruct_any_body(seed in any::<u64>(), max in 2usize..40, overlap_frac in 0.0f64..1.0, min_frac in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let overlap = ((max as f64) * overlap_frac) as usize % max;
        let min = ((max as f64) * min_frac) as usize;
        let policy = ChunkPolicy::new(max, overlap, min).unwrap();
        let text = body(&mut rng, 12);
        let doc = parse_document(&format!("# S\n{text}"), SourceFormat::Markdown).unwrap();
        let chunks = split_into_chunks(&doc, &policy).unwrap();
        let refs: Vec<&Chunk> = chunks.iter().collect();
        prop_assert_eq!(reconstruct_section(&refs), doc.sections[0].body.clone());
        prop_assert!(chunks.iter().all(|c| c.token_count <= max));
    }
}
