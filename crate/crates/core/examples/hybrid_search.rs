//! Filtered hybrid search over the bundled sample papers.

mod common;

use litpilot::retrieval::SearchFilter;

fn main() {
    let dir = std::env::temp_dir().join(format!("litpilot-search-{}", std::process::id()));
    let (app, _) = common::sample_app(&dir);

    let filter = SearchFilter {
        scholars: vec!["Li Wei".into()],
        year_range: (Some(2021), None),
        ..SearchFilter::default()
    };
    for (query, filter) in [("dense retrieval negatives", SearchFilter::default()), ("chunking sections", filter)] {
        println!("== {query}");
        for hit in app.library.search(query, 3, &filter).expect("search") {
            let doc = app.library.doc_of_chunk(&hit.chunk_id).unwrap_or_default();
            let title = app.library.paper(&doc).map(|p| p.title.clone()).unwrap_or_default();
            println!("{:.3}  {title}\n       {}", hit.score, hit.snippet);
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

