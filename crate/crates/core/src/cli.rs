//! Operator command line. Every subcommand is a thin shell over a library
//! call; `--json` prints that call's serialized result verbatim.

use crate::app::{App, ServiceConfig};
use crate::corpus::SourceFormat;
use crate::embedding::{mine_triples, train_projection, TrainParams, TrainingTriple};
use crate::evalkit::{
    default_instruction, export_sft_dataset, mos_report, parse_mos_csv, parse_reference_lines, read_transcripts,
    score_segments, DEFAULT_MAX_N,
};
use crate::investigation::{generate_review, scholar_survey, topic_search, TopicDeps};
use crate::llm::Backend;
use crate::reading::{answer_question, compare_papers, route_question, ReadingDeps};
use crate::retrieval::SearchFilter;
use crate::service::{serve, ServiceState};
use crate::writing::{polish, translate, Direction, Style};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

type Failure = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "litpilot", version, about = "Literature investigation, reading and writing assistant")]
struct Cli {
    /// Service config (TOML); falls back to $LITPILOT_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the result as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and index a document, or every .md/.txt file in a directory.
    Ingest {
        path: PathBuf,
        #[arg(long)]
        format: Option<SourceFormat>,
    },
    /// Index maintenance.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Hybrid search over the indexed chunks.
    Search {
        query: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "scholar")]
        scholars: Vec<String>,
        #[arg(long = "institution")]
        institutions: Vec<String>,
        #[arg(long)]
        from: Option<i32>,
        #[arg(long)]
        to: Option<i32>,
        #[arg(long = "domain")]
        domains: Vec<String>,
        #[arg(long = "keyword")]
        keywords: Vec<String>,
        #[arg(long = "doc")]
        doc_ids: Vec<String>,
    },
    /// Topic search with statistics and a summary.
    Topic {
        query: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Group a scholar's papers into research areas.
    Survey {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ask a question about one paper.
    Ask {
        doc_id: String,
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Generate a literature review over the given papers.
    Review {
        ids: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare two to five papers.
    Compare { ids: Vec<String> },
    /// Translate a text file with lexicon terminology.
    Translate {
        #[arg(long)]
        direction: Direction,
        file: PathBuf,
        #[arg(long)]
        domain: Option<String>,
    },
    /// Polish a draft.
    Polish {
        file: PathBuf,
        #[arg(long, default_value = "academic")]
        style: Style,
    },
    /// Train the embedding projection on (question, positive, negatives) triples.
    TrainEmbed {
        /// JSON lines of {question, positive_chunk, negative_chunks}.
        #[arg(long)]
        triples: PathBuf,
        /// Extra chunk texts as JSON lines of {chunk_id, text}.
        #[arg(long)]
        texts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate training triples from the library with the backend.
    MineTriples {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        negatives: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        metric: EvalMetric,
    },
    /// Convert pipeline transcripts into instruction-tuning records.
    ExportSft {
        transcripts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    /// Re-embed every stored paper and save the index.
    Build,
}

#[derive(Debug, Subcommand)]
enum EvalMetric {
    /// BLEU of a candidate file against a reference file, line by line.
    Bleu {
        #[arg(long)]
        cand: PathBuf,
        /// One line per segment; alternative references separated by tabs.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_N)]
        max_n: usize,
    },
    /// Aggregate MOS ratings from a task,criterion,rater_id,score CSV.
    Mos {
        #[arg(long)]
        records: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct ChunkText {
    chunk_id: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct TrainReport {
    model_path: PathBuf,
    log: crate::embedding::TrainLog,
}

struct Ctx<'a> {
    config: Option<PathBuf>,
    json: bool,
    backend: Option<Arc<dyn Backend>>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn config(&self) -> Result<ServiceConfig, Failure> {
        Ok(ServiceConfig::resolve(self.config.as_deref())?)
    }

    fn app(&self) -> Result<App, Failure> {
        self.app_with(self.config()?)
    }

    fn app_with(&self, config: ServiceConfig) -> Result<App, Failure> {
        Ok(match &self.backend {
            Some(b) => App::open_with_backend(config, Arc::clone(b))?,
            None => App::open(config)?,
        })
    }

    fn emit<T: Serialize>(&mut self, value: &T, text: impl FnOnce(&T) -> String) -> Result<(), Failure> {
        if self.json {
            writeln!(self.out, "{}", serde_json::to_string_pretty(value)?)?;
        } else {
            let t = text(value);
            write!(self.out, "{t}")?;
            if !t.is_empty() && !t.ends_with('\n') {
                writeln!(self.out)?;
            }
        }
        Ok(())
    }
}

/// Runs the CLI with the configured backend; returns the exit code.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    run_with_backend(args, None, out, err)
}

/// Like [`run`], with `backend` replacing the configured one.
pub fn run_with_backend(
    args: &[String],
    backend: Option<Arc<dyn Backend>>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    2
                }
            };
        }
    };
    let mut ctx = Ctx {
        config: cli.config,
        json: cli.json,
        backend,
        out,
        err,
    };
    match execute(cli.command, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            1
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn ingest_paths(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "md" || x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn format_of(path: &Path, explicit: Option<SourceFormat>) -> SourceFormat {
    explicit.unwrap_or(match path.extension().and_then(|x| x.to_str()) {
        Some("txt") => SourceFormat::Plain,
        _ => SourceFormat::Markdown,
    })
}

fn execute(command: Command, ctx: &mut Ctx<'_>) -> Result<(), Failure> {
    match command {
        Command::Ingest { path, format } => {
            let app = ctx.app()?;
            let mut reports = Vec::new();
            for p in ingest_paths(&path)? {
                let source = read(&p)?;
                reports.push(app.ingest_source(&source, format_of(&p, format), &p.display().to_string())?);
            }
            ctx.emit(&reports, |rs| {
                rs.iter()
                    .map(|r| format!("{}\t{} chunks\t{}\n", r.doc_id, r.chunks, r.title))
                    .collect()
            })
        }
        Command::Index {
            action: IndexAction::Build,
        } => {
            let mut app = ctx.app()?;
            let summary = app.rebuild_index()?;
            ctx.emit(&summary, |s| {
                format!("indexed {} papers, {} chunks ({} unindexed)", s.papers, s.chunks, s.unindexed)
            })
        }
        Command::Search {
            query,
            k,
            scholars,
            institutions,
            from,
            to,
            domains,
            keywords,
            doc_ids,
        } => {
            let app = ctx.app()?;
            let filter = SearchFilter {
                scholars,
                institutions,
                year_range: (from, to),
                domains,
                keywords,
                doc_ids,
            };
            let hits = app.library.search(&query, k.unwrap_or(app.config.default_k), &filter)?;
            ctx.emit(&hits, |hs| {
                hs.iter()
                    .map(|h| format!("{:.4}\t{}\t{}\n", h.score, h.chunk_id, h.snippet))
                    .collect()
            })
        }
        Command::Topic { query, k } => {
            let app = ctx.app()?;
            let deps = TopicDeps {
                library: &app.library,
                backend: app.backend.as_ref(),
                prompts: &app.prompts,
                gazetteer: &app.gazetteer,
                plugins: &app.plugins,
            };
            let result = topic_search(&query, &deps, k.unwrap_or(app.config.default_k))?;
            ctx.emit(&result, |r| {
                let mut s = format!("query: {}\n", r.rewritten_query);
                for h in &r.hits {
                    let year = h.year.map_or_else(|| "n.d.".to_string(), |y| y.to_string());
                    s.push_str(&format!("{:.4}\t{}\t{} ({year})\n", h.score, h.doc_id, h.title));
                }
                for (plugin, e) in &r.plugin_errors {
                    s.push_str(&format!("plugin {plugin} failed: {e}\n"));
                }
                if !r.summary.is_empty() {
                    s.push('\n');
                    s.push_str(&r.summary);
                }
                s
            })
        }
        Command::Survey { name, seed } => {
            let app = ctx.app()?;
            let survey = scholar_survey(
                &name,
                &app.library,
                app.backend.as_ref(),
                &app.prompts,
                seed.unwrap_or(app.config.seed),
            )?;
            ctx.emit(&survey, |s| {
                let mut t = String::new();
                for g in &s.groups {
                    t.push_str(&format!("## {}\n", g.label));
                    for title in &g.titles {
                        t.push_str(&format!("- {title}\n"));
                    }
                }
                t
            })
        }
        Command::Ask { doc_id, question, k } => {
            let app = ctx.app()?;
            let paper = app
                .library
                .paper(&doc_id)
                .ok_or_else(|| format!("unknown doc_id {doc_id:?}"))?;
            let rq = route_question(
                &question,
                &paper,
                &app.library,
                app.backend.as_ref(),
                &app.prompts,
                app.config.route_threshold,
            )?;
            let deps = ReadingDeps {
                library: &app.library,
                backend: app.backend.as_ref(),
                prompts: &app.prompts,
                plugins: &app.plugins,
            };
            let answer = answer_question(&rq, &deps, k.unwrap_or(app.config.default_k))?;
            ctx.emit(&answer, |a| a.text.clone())
        }
        Command::Review { ids, seed } => {
            let app = ctx.app()?;
            let outline = generate_review(
                &ids,
                &app.library,
                app.backend.as_ref(),
                &app.prompts,
                seed.unwrap_or(app.config.seed),
            )?;
            ctx.emit(&outline, |o| o.to_markdown())
        }
        Command::Compare { ids } => {
            let app = ctx.app()?;
            let report = compare_papers(&ids, &app.library, app.backend.as_ref(), &app.prompts)?;
            ctx.emit(&report, |r| r.to_markdown())
        }
        Command::Translate { direction, file, domain } => {
            let app = ctx.app()?;
            let source = read(&file)?;
            let result = translate(
                &source,
                direction,
                &app.lexicon,
                domain.as_deref(),
                app.backend.as_ref(),
                &app.prompts,
            )?;
            ctx.emit(&result, |r| r.translated.clone())
        }
        Command::Polish { file, style } => {
            let app = ctx.app()?;
            let draft = read(&file)?;
            let result = polish(&draft, style, app.backend.as_ref(), &app.prompts)?;
            ctx.emit(&result, |r| r.polished.clone())
        }
        Command::TrainEmbed {
            triples,
            texts,
            out,
            dim,
            tau,
            lr,
            epochs,
            batch,
            seed,
        } => {
            let config = ctx.config()?;
            let triples: Vec<TrainingTriple> = read(&triples)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()?;
            let mut resolver: BTreeMap<String, String> = BTreeMap::new();
            match texts {
                Some(path) => {
                    for line in read(&path)?.lines().filter(|l| !l.trim().is_empty()) {
                        let t: ChunkText = serde_json::from_str(line)?;
                        resolver.insert(t.chunk_id, t.text);
                    }
                }
                None => {
                    let app = ctx.app_with(config.clone())?;
                    resolver.extend(app.library.all_chunks().into_iter().map(|c| (c.chunk_id, c.text)));
                }
            }
            let defaults = TrainParams::default();
            let params = TrainParams {
                d_out: dim.unwrap_or(config.embedding_dim),
                tau: tau.unwrap_or(defaults.tau),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                epochs: epochs.unwrap_or(defaults.epochs),
                batch: batch.unwrap_or(defaults.batch),
                seed: seed.unwrap_or(config.seed),
            };
            let (model, log) = train_projection(&triples, &resolver, &params)?;
            let model_path = out.unwrap_or_else(|| config.data_dir.join("projection.model"));
            if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            model.save(&model_path)?;
            ctx.emit(&TrainReport { model_path, log }, |r| {
                format!(
                    "loss {:.4} -> {:.4}; model written to {}",
                    r.log.initial_loss,
                    r.log.final_loss,
                    r.model_path.display()
                )
            })
        }
        Command::MineTriples { out, negatives, seed } => {
            let app = ctx.app()?;
            let triples = mine_triples(
                &app.library.all_chunks(),
                app.backend.as_ref(),
                &app.prompts,
                negatives,
                seed.unwrap_or(app.config.seed),
            )?;
            let jsonl: String = triples
                .iter()
                .map(|t| serde_json::to_string(t).expect("triples serialize") + "\n")
                .collect();
            match out {
                Some(path) => {
                    std::fs::write(&path, &jsonl)?;
                    writeln!(ctx.err, "wrote {} triples to {}", triples.len(), path.display())?;
                    Ok(())
                }
                None => ctx.emit(&triples, |_| jsonl.clone()),
            }
        }
        Command::Eval {
            metric: EvalMetric::Bleu { cand, refs, max_n },
        } => {
            let candidates: Vec<String> = read(&cand)?.lines().map(str::to_string).collect();
            let references = parse_reference_lines(&read(&refs)?);
            let report = score_segments(&candidates, &references, max_n)?;
            ctx.emit(&report, |r| {
                format!(
                    "corpus BLEU {:.6}\nmean sentence BLEU {:.6}\nsegments {}\n",
                    r.corpus_bleu, r.sentence_bleu_mean, r.segments
                )
            })
        }
        Command::Eval {
            metric: EvalMetric::Mos { records },
        } => {
            let file = std::fs::File::open(&records).map_err(|e| format!("{}: {e}", records.display()))?;
            let report = mos_report(&parse_mos_csv(file)?);
            ctx.emit(&report, |r| {
                let mut s = String::new();
                for (label, group) in [
                    ("criterion", &r.by_criterion),
                    ("task", &r.by_task),
                    ("task average", &r.task_average),
                ] {
                    for (key, m) in group {
                        s.push_str(&format!("{label} {key}: {} (n = {})\n", m.display, m.count));
                    }
                }
                s
            })
        }
        Command::ExportSft { transcripts, out } => {
            let file = std::fs::File::open(&transcripts).map_err(|e| format!("{}: {e}", transcripts.display()))?;
            let export = export_sft_dataset(&read_transcripts(std::io::BufReader::new(file))?, &default_instruction);
            writeln!(ctx.err, "{} records, {} dropped", export.records.len(), export.dropped)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, export.to_jsonl())?;
                    if ctx.json {
                        ctx.emit(&export, |_| String::new())?;
                    }
                    Ok(())
                }
                None => ctx.emit(&export, |e| e.to_jsonl()),
            }
        }
        Command::Serve { listen } => {
            let mut config = ctx.config()?;
            if let Some(l) = listen {
                config.listen = l;
            }
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .with_writer(std::io::stderr)
                .try_init();
            let state = ServiceState::new(ctx.app_with(config)?)?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve(state))?;
            Ok(())
        }
    }
}
