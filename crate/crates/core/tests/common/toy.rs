//! Three-topic toy corpus for contrastive training checks.

use litpilot::embedding::{embed, ProjectionModel, TrainingTriple};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const TOPICS: [&[&str]; 3] = [
    &["retrieval", "query", "index", "ranking", "passage", "dense", "sparse", "recall", "lexical", "rerank", "bm25", "corpus"],
    &["translation", "bilingual", "decoder", "bleu", "alignment", "lexicon", "source", "target", "fluency", "phrase", "beam", "parallel"],
    &["graph", "node", "edge", "message", "neighbor", "spectral", "pooling", "walk", "citation", "link", "adjacency", "hop"],
];

pub struct Toy {
    pub texts: BTreeMap<String, String>,
    /// (question, chunk id) pairs; the question is the chunk's prefix.
    pub questions: Vec<(String, String)>,
    pub triples: Vec<TrainingTriple>,
}

/// 3 topics × 20 chunks; each triple takes 3 negatives from other topics.
pub fn corpus(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts = BTreeMap::new();
    let mut questions = Vec::new();
    let mut ids_by_topic: Vec<Vec<String>> = vec![Vec::new(); 3];
    for (t, vocab) in TOPICS.iter().enumerate() {
        for i in 0..20 {
            let words: Vec<&str> = (0..24).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
            let id = format!("t{t}c{i:02}");
            questions.push((words[..6].join(" "), id.clone()));
            texts.insert(id.clone(), words.join(" "));
            ids_by_topic[t].push(id);
        }
    }
    let triples = questions
        .iter()
        .map(|(q, id)| {
            let topic: usize = id[1..2].parse().unwrap();
            let mut others: Vec<&String> = ids_by_topic
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != topic)
                .flat_map(|(_, ids)| ids)
                .collect();
            others.shuffle(&mut rng);
            TrainingTriple {
                question: q.clone(),
                positive_chunk: id.clone(),
                negative_chunks: others[..3].iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect();
    Toy { texts, questions, triples }
}

/// Share of questions whose nearest chunk lies in the same topic.
pub fn topic_recall_at_1(model: &ProjectionModel, toy: &Toy) -> f64 {
    let chunks: Vec<(&String, Vec<f32>)> = toy
        .texts
        .iter()
        .map(|(id, t)| (id, embed(t, model).unwrap().values().to_vec()))
        .collect();
    let hits = toy
        .questions
        .iter()
        .filter(|(q, id)| {
            let qv = embed(q, model).unwrap();
            let best = chunks
                .iter()
                .max_by(|a, b| {
                    super::oracle::cosine(qv.values(), &a.1)
                        .total_cmp(&super::oracle::cosine(qv.values(), &b.1))
                        .then_with(|| b.0.cmp(a.0))
                })
                .unwrap();
            best.0[..2] == id[..2]
        })
        .count();
    hits as f64 / toy.questions.len() as f64
}
