//! BLEU, MOS aggregation and SFT export.

mod common;

use litpilot::evalkit::{
    average_of_means, bleu_text, export_sft_dataset, mos_report, parse_mos_csv, read_transcripts, default_instruction,
};
use std::fs::File;
use std::io::BufReader;

fn main() {
    let refs = ["the cat is on the mat", "there is a cat on the mat"];
    for cand in ["the the the the the the the", "the cat is on the mat", "a cat sits on the mat"] {
        println!("BLEU-4 {:.4}  {cand:?}", bleu_text(cand, &refs, 4).unwrap());
    }

    let records = parse_mos_csv(File::open(common::fixtures().join("mos_ratings.csv")).unwrap()).expect("ratings");
    let report = mos_report(&records);
    for (task, m) in &report.task_average {
        println!("{task:<12} {} over {} criteria", m.display, m.count);
    }
    println!("average of 4.68 and 4.45: {}", average_of_means(&[4.68, 4.45]).display);

    let transcripts = read_transcripts(BufReader::new(File::open(common::fixtures().join("transcripts.jsonl")).unwrap())).unwrap();
    let export = export_sft_dataset(&transcripts, &default_instruction);
    print!("{}", export.to_jsonl());
    println!("dropped {}", export.dropped);
}
