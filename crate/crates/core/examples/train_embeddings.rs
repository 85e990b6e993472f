//! Train the linear projection with InfoNCE on a tiny two-topic corpus and
//! compare retrieval before and after.

use litpilot::embedding::{embed, train_projection, ProjectionModel, TrainParams, TrainingTriple};
use std::collections::BTreeMap;

const GRAPHS: &[&str] = &[
    "message passing over molecular graphs with edge features",
    "graph neural networks aggregate neighbour node states",
    "equivariant layers respect rotations of protein structures",
    "graph transformers attend over all node pairs",
];
const TRANSLATION: &[&str] = &[
    "terminology constraints for neural machine translation",
    "bilingual lexicons injected into translation prompts",
    "evaluating translation with bleu and human ratings",
    "domain adaptation of translation systems to scientific text",
];

fn main() {
    let mut texts = BTreeMap::new();
    for (topic, list) in [("g", GRAPHS), ("t", TRANSLATION)] {
        for (i, t) in list.iter().enumerate() {
            texts.insert(format!("{topic}{i}"), t.to_string());
        }
    }
    let mut triples = Vec::new();
    for (topic, other, list) in [("g", "t", GRAPHS), ("t", "g", TRANSLATION)] {
        for (i, t) in list.iter().enumerate() {
            let question = t.split_whitespace().take(3).collect::<Vec<_>>().join(" ");
            triples.push(TrainingTriple {
                question,
                positive_chunk: format!("{topic}{i}"),
                negative_chunks: (0..3).map(|j| format!("{other}{}", (i + j) % 4)).collect(),
            });
        }
    }

    let hp = TrainParams {
        d_out: 8,
        epochs: 20,
        ..TrainParams::default()
    };
    let (model, log) = train_projection(&triples, &texts, &hp).expect("train");
    println!("loss {:.4} -> {:.4}", log.initial_loss, log.final_loss);

    let best = |m: &ProjectionModel, q: &str| {
        let qv = embed(q, m).unwrap();
        texts
            .iter()
            .map(|(id, t)| (qv.cosine(&embed(t, m).unwrap()), id))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(s, id)| format!("{id} ({s:.3})"))
            .unwrap()
    };
    let untrained = ProjectionModel::init(hp.d_out, hp.tau, hp.seed);
    for q in ["graph neural networks", "terminology for translation"] {
        println!("{q:?}: before {}  after {}", best(&untrained, q), best(&model, q));
    }
}
