//! Prompt templates rendered and sent to a scripted backend.

use litpilot::llm::{Backend, ChatRequest, MockBackend, MockRule, PromptLibrary, PromptTemplate};

fn main() {
    let template = PromptTemplate::new(
        "define",
        "Define the term in one sentence.\nTerm: {term}",
        vec![("BLEU".into(), "An n-gram precision metric for machine translation.".into())],
    );
    let prompt = template.render([("term", "InfoNCE")]).expect("render");
    println!("{prompt}\n");

    let backend = MockBackend::new(vec![
        MockRule::contains("InfoNCE", "A contrastive loss that scores one positive against sampled negatives."),
        MockRule::catch_all("I do not know."),
    ])
    .expect("rules");
    let reply = backend.complete(&ChatRequest::user(prompt)).expect("complete");
    println!("reply: {}", reply.content);

    print!("streamed:");
    backend
        .complete_streaming(&ChatRequest::user("anything else"), &mut |piece| print!(" [{piece}]"))
        .expect("stream");
    println!();

    let builtin = PromptLibrary::builtin();
    println!("\nbuilt-in query rewrite prompt:\n{}", builtin.get("query_rewrite").expect("builtin").body);
}
