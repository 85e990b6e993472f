//! Topic search, scholar survey and review generation over the samples.

mod common;

use litpilot::investigation::{generate_review, scholar_survey, topic_search, TopicDeps};

fn main() {
    let dir = std::env::temp_dir().join(format!("litpilot-investigate-{}", std::process::id()));
    let (app, ids) = common::sample_app(&dir);
    let deps = TopicDeps {
        library: &app.library,
        backend: app.backend.as_ref(),
        prompts: &app.prompts,
        gazetteer: &app.gazetteer,
        plugins: &app.plugins,
    };

    let topic = topic_search("Papers about retrieval augmented generation since 2020 by Li Wei", &deps, 5).expect("topic");
    println!("rewritten: {}", topic.rewritten_query);
    println!("years: {:?}  slope: {:.2}", topic.stats.year_histogram, topic.stats.trend_slope);
    for h in &topic.hits {
        println!("  {:.3} {} ({:?})", h.score, h.title, h.year);
    }
    println!("summary: {}\n", topic.summary);

    let survey = scholar_survey("Li Wei", &app.library, app.backend.as_ref(), &app.prompts, 0).expect("survey");
    for g in &survey.groups {
        println!("{}: {}", g.label, g.titles.join(" | "));
    }

    let review = generate_review(&ids[..6], &app.library, app.backend.as_ref(), &app.prompts, 0).expect("review");
    println!("\n{}", review.to_markdown());
    std::fs::remove_dir_all(&dir).ok();
}
