//! Terminology-aware translation and edit-tracked polishing.

mod common;

use litpilot::llm::PromptLibrary;
use litpilot::writing::{detect_terms, polish, translate, Direction, Lexicon, Style};

fn main() {
    let lexicon = Lexicon::load(&common::fixtures().join("lexicon.tsv")).expect("lexicon");
    let backend = common::scripted_backend();
    let prompts = PromptLibrary::builtin();

    let source = std::fs::read_to_string(common::fixtures().join("translate_en.txt")).expect("source");
    for t in detect_terms(&source, lexicon.entries(), None) {
        println!("term: {} => {}", t.source_term, t.target_term);
    }
    let tr = translate(&source, Direction::EnZh, &lexicon, None, backend.as_ref(), &prompts).expect("translate");
    println!("\n{}\n", tr.translated);

    let draft = std::fs::read_to_string(common::fixtures().join("polish_draft.txt")).expect("draft");
    let polished = polish(&draft, Style::Academic, backend.as_ref(), &prompts).expect("polish");
    for e in &polished.edits {
        println!("{:?} -> {:?}  ({})", e.original, e.replacement, e.rationale);
    }
    println!("{}", polished.polished);
}
