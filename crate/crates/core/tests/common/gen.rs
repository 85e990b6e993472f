use super::oracle::Doc;
use litpilot::corpus::{Chunk, PaperDocument};
use litpilot::embedding::EmbeddingVector;
use litpilot::retrieval::{EntryMeta, IndexEntry, SearchFilter, SearchHit, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 16;
pub const VOCAB: &[&str] = &[
    "graph", "retrieval", "dense", "sparse", "translation", "node", "edge", "query", "index", "bleu", "neural", "model", "corpus",
    "attention", "loss",
];
pub const AUTHORS: &[&str] = &["Li Wei", "Ana Costa", "Wang Fang", "John Smith", "Li Na"];
pub const INSTITUTIONS: &[&str] = &["Tsinghua University", "MIT", "USTC", "ETH Zurich"];
pub const DOMAINS: &[&str] = &["information retrieval", "machine translation", "graph learning"];

pub fn unit(rng: &mut ChaCha8Rng) -> EmbeddingVector {
    loop {
        let raw: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(v) = EmbeddingVector::from_unnormalized(&raw) {
            return v;
        }
    }
}

pub fn pick(rng: &mut ChaCha8Rng, from: &[&str], n: std::ops::Range<usize>) -> Vec<String> {
    let n = rng.random_range(n);
    (0..n).map(|_| from[rng.random_range(0..from.len())].to_string()).collect()
}

/// Seeded entries; every tenth reuses an earlier vector so ties occur.
pub fn corpus(seed: u64, n: usize) -> Vec<IndexEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<IndexEntry> = Vec::with_capacity(n);
    for i in 0..n {
        let vector = if i % 10 == 9 {
            out[rng.random_range(0..i)].vector.clone()
        } else {
            unit(&mut rng)
        };
        let meta = EntryMeta {
            doc_id: format!("doc{}", i / 4),
            year: (!rng.random_bool(0.1)).then(|| rng.random_range(2005..2025)),
            authors: pick(&mut rng, AUTHORS, 1..3),
            institutions: pick(&mut rng, INSTITUTIONS, 1..2),
            domain_tags: pick(&mut rng, DOMAINS, 1..2),
            venue: None,
        };
        out.push(IndexEntry {
            chunk_id: format!("c{:05}", rng.random_range(0..100_000) * 1000 + i),
            text: pick(&mut rng, VOCAB, 3..12).join(" "),
            vector,
            meta,
        });
    }
    out
}

pub fn docs(entries: &[IndexEntry]) -> Vec<Doc> {
    entries
        .iter()
        .map(|e| Doc {
            id: e.chunk_id.clone(),
            text: e.text.clone(),
            vector: e.vector.values().to_vec(),
            meta: e.meta.clone(),
        })
        .collect()
}

pub fn index(entries: &[IndexEntry]) -> VectorIndex {
    let mut idx = VectorIndex::new(DIM);
    idx.upsert(entries.to_vec()).unwrap();
    idx
}

pub fn random_filter(rng: &mut ChaCha8Rng) -> SearchFilter {
    let mut f = SearchFilter::default();
    if rng.random_bool(0.3) {
        f.scholars = pick(rng, &["li", "costa", "WANG"], 1..3);
    }
    if rng.random_bool(0.2) {
        f.institutions = pick(rng, &["university", "mit"], 1..2);
    }
    if rng.random_bool(0.3) {
        let lo = rng.random_range(2005..2025);
        f.year_range = (Some(lo), rng.random_bool(0.5).then(|| lo + rng.random_range(0..6)));
    }
    if rng.random_bool(0.2) {
        f.domains = pick(rng, &["retrieval", "graph"], 1..2);
    }
    if rng.random_bool(0.2) {
        f.keywords = pick(rng, VOCAB, 1..3);
    }
    f
}

pub fn same(hits: &[SearchHit], expected: &[(String, f64)]) -> bool {
    hits.len() == expected.len()
        && hits
            .iter()
            .zip(expected)
            .all(|(h, (id, s))| &h.chunk_id == id && (h.score - s).abs() <= 1e-12)
}

// ---------------------------------------------------------------- documents

pub const WORDS: &[&str] = &[
    "retrieval", "graph", "model", "we", "the", "of", "attention", "corpus", "results", "show", "dense", "sparse",
    "a", "Section", "training", "loss", "e.g.", "3.5", "x-ray", "node",
];
pub const HAN: &[&str] = &["检", "索", "模", "型", "训", "练", "图", "学", "习"];

pub fn sentence(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.2) {
        let n = rng.random_range(3..15);
        let mut s: String = (0..n).map(|_| HAN[rng.random_range(0..HAN.len())]).collect();
        s.push(if rng.random_bool(0.8) { '。' } else { '？' });
        return s;
    }
    let n = rng.random_range(1..25);
    let mut s = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
    s.push(['.', '!', '?', ';'][rng.random_range(0..4)]);
    s
}

pub fn body(rng: &mut ChaCha8Rng, sentences: usize) -> String {
    (0..sentences).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
}

pub fn random_source(rng: &mut ChaCha8Rng, i: usize) -> String {
    let mut src = format!("Title: Generated paper {i}\nYear: {}\n\n# Abstract\n{}\n", 1990 + i % 30, body(rng, 2));
    let sections = rng.random_range(1..5);
    for s in 0..sections {
        let n = rng.random_range(0..40);
        src.push_str(&format!("\n# Part {s}\n{}\n", body(rng, n)));
        if rng.random_bool(0.4) {
            let n = rng.random_range(1..30);
            src.push_str(&format!("\n## Detail {s}\n{}\n", body(rng, n)));
        }
    }
    src
}

pub fn chunks_by_section<'a>(doc: &PaperDocument, chunks: &'a [Chunk]) -> Vec<(String, Vec<&'a Chunk>)> {
    doc.sections_preorder()
        .into_iter()
        .map(|(path, s)| (s.body.clone(), chunks.iter().filter(|c| c.section_path == path).collect()))
        .collect()
}
