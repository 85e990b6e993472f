//! Evaluation harness: BLEU, MOS aggregation, parallel corpora and SFT
//! record export.

use crate::text::tokenize;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read};
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_MAX_N: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("at least one reference is required")]
    EmptyReferences,
    #[error("max_n must be at least 1")]
    InvalidOrder,
    #[error("score {0} outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("unknown {kind} {value:?}")]
    UnknownTag { kind: &'static str, value: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for one order.
fn clipped(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; ties go to the shorter one.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("references nonempty")
}

pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn combine(matched: &[usize], totals: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 || matched[0] == 0 {
        return 0.0;
    }
    let max_n = matched.len() as f64;
    let log_sum: f64 = matched
        .iter()
        .zip(totals)
        .map(|(&m, &t)| {
            let p = if m == 0 { 1.0 / (2.0 * t.max(1) as f64) } else { m as f64 / t as f64 };
            p.ln() / max_n
        })
        .sum();
    brevity_penalty(c, r) * log_sum.exp()
}

/// Modified n-gram precisions `(matched, total)` for orders `1..=max_n`.
pub fn modified_precisions(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Vec<(usize, usize)> {
    (1..=max_n).map(|n| clipped(candidate, references, n)).collect()
}

/// Sentence BLEU with add-half smoothing for zero higher-order precisions
/// (an order with no candidate n-grams counts as one).
pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64, EvalError> {
    if references.is_empty() {
        return Err(EvalError::EmptyReferences);
    }
    if max_n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let (matched, totals): (Vec<usize>, Vec<usize>) = modified_precisions(candidate, references, max_n).into_iter().unzip();
    Ok(combine(&matched, &totals, candidate.len(), closest_ref_len(candidate.len(), references)))
}

/// Corpus BLEU: counts and lengths summed over segments before combining.
pub fn corpus_bleu(segments: &[(Vec<String>, Vec<Vec<String>>)], max_n: usize) -> Result<f64, EvalError> {
    if max_n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    let mut matched = vec![0; max_n];
    let mut totals = vec![0; max_n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in segments {
        if refs.is_empty() {
            return Err(EvalError::EmptyReferences);
        }
        for (n, (m, t)) in modified_precisions(cand, refs, max_n).into_iter().enumerate() {
            matched[n] += m;
            totals[n] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    Ok(combine(&matched, &totals, c, r))
}

/// BLEU on raw strings, tokenized the same way as the corpus module.
pub fn bleu_text(candidate: &str, references: &[&str], max_n: usize) -> Result<f64, EvalError> {
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    bleu(&tokenize(candidate), &refs, max_n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: String,
    pub references: Vec<String>,
}

impl ParallelPair {
    pub fn new(source: impl Into<String>, references: Vec<String>) -> Result<Self, EvalError> {
        let source = source.into();
        if references.is_empty() {
            return Err(EvalError::EmptyReferences);
        }
        if source.trim().is_empty() || references.iter().any(|r| r.trim().is_empty()) {
            return Err(EvalError::Parse {
                line: 0,
                message: "empty text in parallel pair".into(),
            });
        }
        Ok(Self { source, references })
    }
}

fn at_line(line: usize, e: EvalError) -> EvalError {
    match e {
        EvalError::Parse { message, .. } => EvalError::Parse { line, message },
        EvalError::EmptyReferences => EvalError::Parse {
            line,
            message: "no reference".into(),
        },
        other => other,
    }
}

/// TSV rows `source<TAB>reference[<TAB>reference...]`.
pub fn parse_parallel_tsv(raw: &str) -> Result<Vec<ParallelPair>, EvalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            let source = cols.next().unwrap_or_default().trim();
            ParallelPair::new(source, cols.map(|c| c.trim().to_string()).collect()).map_err(|e| at_line(i + 1, e))
        })
        .collect()
}

/// JSON lines `{"source": ..., "references": [...]}`.
pub fn parse_parallel_jsonl(raw: &str) -> Result<Vec<ParallelPair>, EvalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: ParallelPair = serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            ParallelPair::new(p.source, p.references).map_err(|e| at_line(i + 1, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub segments: usize,
    /// Mean of per-segment sentence BLEU.
    pub sentence_bleu_mean: f64,
    pub corpus_bleu: f64,
}

/// Scores `candidates[i]` against `pairs[i].references`.
pub fn score_parallel(pairs: &[ParallelPair], candidates: &[String], max_n: usize) -> Result<BleuReport, EvalError> {
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.references.clone()).collect();
    score_segments(candidates, &refs, max_n)
}

/// Reference file rows: one segment per line, alternative references
/// separated by tabs.
pub fn parse_reference_lines(raw: &str) -> Vec<Vec<String>> {
    raw.lines().map(|l| l.split('\t').map(|r| r.trim().to_string()).collect()).collect()
}

/// Scores `candidates[i]` against `references[i]`.
pub fn score_segments(candidates: &[String], references: &[Vec<String>], max_n: usize) -> Result<BleuReport, EvalError> {
    if references.len() != candidates.len() {
        return Err(EvalError::Parse {
            line: 0,
            message: format!("{} candidates for {} reference rows", candidates.len(), references.len()),
        });
    }
    let segments: Vec<(Vec<String>, Vec<Vec<String>>)> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| (tokenize(c), r.iter().map(|r| tokenize(r)).collect()))
        .collect();
    let mut sum = 0.0;
    for (c, r) in &segments {
        sum += bleu(c, r, max_n)?;
    }
    Ok(BleuReport {
        segments: segments.len(),
        sentence_bleu_mean: if segments.is_empty() { 0.0 } else { sum / segments.len() as f64 },
        corpus_bleu: corpus_bleu(&segments, max_n)?,
    })
}

macro_rules! tag_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = EvalError;
            fn from_str(s: &str) -> Result<Self, EvalError> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(EvalError::UnknownTag { kind: $kind, value: other.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

tag_enum!(EvalTask, "task", { Reading => "reading", Polishing => "polishing", Translation => "translation" });
tag_enum!(Criterion, "criterion", {
    Factuality => "factuality",
    Informativeness => "informativeness",
    Fluency => "fluency",
    Fidelity => "fidelity",
    Academic => "academic",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MosRecord {
    task: EvalTask,
    criterion: Criterion,
    rater_id: String,
    score: u8,
}

impl MosRecord {
    pub fn new(task: EvalTask, criterion: Criterion, rater_id: impl Into<String>, score: i64) -> Result<Self, EvalError> {
        if !(1..=5).contains(&score) {
            return Err(EvalError::ScoreOutOfRange(score));
        }
        Ok(Self {
            task,
            criterion,
            rater_id: rater_id.into(),
            score: score as u8,
        })
    }

    pub fn task(&self) -> EvalTask {
        self.task
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn rater_id(&self) -> &str {
        &self.rater_id
    }

    pub fn score(&self) -> u8 {
        self.score
    }
}

#[derive(Deserialize)]
struct MosRow {
    task: String,
    criterion: String,
    rater_id: String,
    score: i64,
}

/// CSV with header `task,criterion,rater_id,score`.
pub fn parse_mos_csv(input: impl Read) -> Result<Vec<MosRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<MosRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EvalError::Parse {
            line,
            message: e.to_string(),
        })?;
        let rec = MosRecord::new(row.task.parse()?, row.criterion.parse()?, row.rater_id, row.score).map_err(|e| {
            EvalError::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Criterion,
    Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub mean: f64,
    pub count: usize,
    /// Two decimals, half-up.
    pub display: String,
}

impl MeanScore {
    fn of(sum: f64, count: usize) -> Self {
        let mean = sum / count as f64;
        Self {
            mean,
            count,
            display: round_half_up_2(mean),
        }
    }
}

/// Two-decimal half-up rounding done on the decimal expansion, so values
/// like 4.565 (stored as 4.56499...) display as 4.57.
pub fn round_half_up_2(x: f64) -> String {
    let s = format!("{:.9}", x.abs());
    let (int, frac) = s.split_once('.').expect("fixed-point format");
    let mut cents: u64 = int.parse::<u64>().expect("digits") * 100 + frac[..2].parse::<u64>().expect("digits");
    if frac.as_bytes()[2] >= b'5' {
        cents += 1;
    }
    let sign = if x < 0.0 && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

/// Mean score per criterion or per task; groups without records are absent.
pub fn aggregate_mos(records: &[MosRecord], group_by: GroupBy) -> BTreeMap<String, MeanScore> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::Criterion => r.criterion.as_str(),
            GroupBy::Task => r.task.as_str(),
        };
        let e = acc.entry(key.to_string()).or_insert((0.0, 0));
        e.0 += f64::from(r.score);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, MeanScore::of(s, n))).collect()
}

/// Per task: the mean of its criterion means (the headline average).
pub fn criterion_average(records: &[MosRecord]) -> BTreeMap<String, MeanScore> {
    let mut by_task: BTreeMap<EvalTask, Vec<MosRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task).or_default().push(r.clone());
    }
    by_task
        .into_iter()
        .map(|(task, recs)| {
            let means = aggregate_mos(&recs, GroupBy::Criterion);
            let sum: f64 = means.values().map(|m| m.mean).sum();
            (task.as_str().to_string(), MeanScore::of(sum, means.len()))
        })
        .collect()
}

/// Mean of given criterion means, for reporting published figures.
pub fn average_of_means(means: &[f64]) -> MeanScore {
    MeanScore::of(means.iter().sum(), means.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    pub by_criterion: BTreeMap<String, MeanScore>,
    pub by_task: BTreeMap<String, MeanScore>,
    /// Per task, the mean of its criterion means.
    pub task_average: BTreeMap<String, MeanScore>,
}

pub fn mos_report(records: &[MosRecord]) -> MosReport {
    MosReport {
        by_criterion: aggregate_mos(records, GroupBy::Criterion),
        by_task: aggregate_mos(records, GroupBy::Task),
        task_average: criterion_average(records),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub task: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExport {
    pub records: Vec<SftRecord>,
    /// Transcripts skipped for an empty response or instruction.
    pub dropped: usize,
}

impl SftExport {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain strings serialize") + "\n")
            .collect()
    }
}

/// Instruction text for the built-in pipeline tasks.
pub fn default_instruction(task: &str) -> String {
    match task {
        "query_rewrite" => "Rewrite the literature-search request as a concise retrieval query.",
        "topic_summary" => "Summarize the retrieved literature for the query.",
        "read_answer" => "Answer the question from the numbered paper segments, citing them.",
        "extract_contrib" => "List the paper's contributions, approach and advantages.",
        "compare_summary" => "Compare the summarized papers.",
        "review_intro" | "review_section" | "review_conclusion" => "Write part of a literature review over the given papers.",
        "translate" => "Translate the academic text using the given terminology.",
        "polish" => "Polish the academic draft and list the edits.",
        _ => "Complete the task described in the input.",
    }
    .to_string()
}

pub fn export_sft_dataset(transcripts: &[Transcript], instruction_for: &dyn Fn(&str) -> String) -> SftExport {
    let mut records = Vec::new();
    let mut dropped = 0;
    for t in transcripts {
        let instruction = instruction_for(&t.task);
        if t.response.trim().is_empty() || instruction.trim().is_empty() {
            dropped += 1;
            continue;
        }
        records.push(SftRecord {
            instruction,
            input: t.prompt.clone(),
            output: t.response.clone(),
        });
    }
    SftExport { records, dropped }
}

/// Transcripts as JSON lines `{"task", "prompt", "response"}`.
pub fn read_transcripts(input: impl BufRead) -> Result<Vec<Transcript>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
