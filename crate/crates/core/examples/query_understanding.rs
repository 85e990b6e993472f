//! Entity extraction, span attribution and plugin dispatch for a query.

use litpilot::query::{attribute_spans, dispatch, extract_entities, Gazetteer, PluginRegistry, StaticPlugin};
use litpilot::retrieval::SearchHit;
use std::sync::Arc;

fn main() {
    let gaz = Gazetteer::new(
        &["Chris Manning", "Li Wei"],
        &["Stanford University", "Tsinghua University"],
        &["fake news", "large language model"],
    )
    .expect("gazetteer");
    let query = "Large language model papers by Li Wei at Tsinghua University since 2021";

    let sq = extract_entities(query, &gaz).expect("extract");
    println!("{sq:#?}");
    for a in attribute_spans(query, &gaz) {
        println!("{:>10?}  {:?}", a.kind, &query[a.span.clone()]);
    }

    let hit = |id: &str| SearchHit {
        chunk_id: id.into(),
        score: 1.0,
        snippet: String::new(),
    };
    let mut registry = PluginRegistry::new();
    registry.register(Arc::new(StaticPlugin::new("scholar-index", vec![hit("by-author")])));
    registry.register(Arc::new(StaticPlugin::failing("local-index", "index offline")));
    for (plugin, result) in dispatch(&sq, &registry, 5).expect("dispatch") {
        println!("{plugin}: {result:?}");
    }
}
