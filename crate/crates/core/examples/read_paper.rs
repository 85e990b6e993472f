//! Question routing, cited answers and paper comparison.

mod common;

use litpilot::reading::{answer_question, compare_papers, route_question, ReadingDeps, DEFAULT_ROUTE_THRESHOLD};

fn main() {
    let dir = std::env::temp_dir().join(format!("litpilot-read-{}", std::process::id()));
    let (app, ids) = common::sample_app(&dir);
    let paper = app.library.paper(&ids[1]).expect("paper");
    let deps = ReadingDeps {
        library: &app.library,
        backend: app.backend.as_ref(),
        prompts: &app.prompts,
        plugins: &app.plugins,
    };

    println!("reading: {}", paper.title);
    for question in ["How are chunks bounded?", "What related work studies dense retrieval?"] {
        let routed = route_question(question, &paper, &app.library, app.backend.as_ref(), &app.prompts, DEFAULT_ROUTE_THRESHOLD)
            .expect("route");
        let answer = answer_question(&routed, &deps, 3).expect("answer");
        println!("\nQ: {question}\n   route {:?} (evidence {:.3})", routed.route, routed.evidence);
        println!("A: {}\n   cites {:?}", answer.text, answer.cited_chunk_ids);
    }

    let report = compare_papers(&ids[..3], &app.library, app.backend.as_ref(), &app.prompts).expect("compare");
    println!("\n{}", report.to_markdown());
    std::fs::remove_dir_all(&dir).ok();
}
