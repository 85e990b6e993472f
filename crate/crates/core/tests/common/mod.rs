#![allow(dead_code)]

use litpilot::app::{App, BackendConfig, ServiceConfig};
use litpilot::corpus::SourceFormat;
use litpilot::llm::MockBackend;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn paper_paths() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures().join("papers"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
}

pub fn mock() -> Arc<MockBackend> {
    Arc::new(MockBackend::from_rules_file(&fixtures().join("mock_rules.json")).unwrap())
}

pub fn config(data_dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: data_dir.to_path_buf(),
        backend: BackendConfig::Mock {
            rules: fixtures().join("mock_rules.json"),
        },
        gazetteer: Some(fixtures().join("gazetteer.tsv")),
        lexicon: Some(fixtures().join("lexicon.tsv")),
        embedding_dim: 64,
        ..ServiceConfig::default()
    }
}

/// Writes `config` as TOML next to the data directory and returns its path.
pub fn write_config(data_dir: &Path) -> PathBuf {
    let f = fixtures();
    let toml = format!(
        "data_dir = {:?}\nembedding_dim = 64\ngazetteer = {:?}\nlexicon = {:?}\n\n[backend]\nkind = \"mock\"\nrules = {:?}\n",
        data_dir,
        f.join("gazetteer.tsv"),
        f.join("lexicon.tsv"),
        f.join("mock_rules.json"),
    );
    let path = data_dir.with_extension("toml");
    std::fs::write(&path, toml).unwrap();
    path
}

/// Opens an app over `data_dir` with the fixture papers ingested; returns
/// the doc ids in fixture-file order.
pub fn fixture_app(data_dir: &Path, backend: Arc<MockBackend>) -> (App, Vec<String>) {
    let app = App::open_with_backend(config(data_dir), backend).unwrap();
    let ids = paper_paths()
        .iter()
        .map(|p| {
            let src = std::fs::read_to_string(p).unwrap();
            app.ingest_source(&src, SourceFormat::Markdown, &p.file_name().unwrap().to_string_lossy())
                .unwrap()
                .doc_id
        })
        .collect();
    (app, ids)
}

/// Compares `actual` with the checked-in golden file, rewriting it when
/// UPDATE_GOLDEN is set.
pub fn check_golden(name: &str, actual: &str) -> bool {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return true;
    }
    match std::fs::read_to_string(&path) {
        Ok(expected) => {
            if expected != actual {
                eprintln!("golden mismatch for {name}");
            }
            expected == actual
        }
        Err(e) => {
            eprintln!("missing golden {}: {e} (run with UPDATE_GOLDEN=1)", path.display());
            false
        }
    }
}

pub struct GoldenRun {
    /// (golden file name, produced content)
    pub files: Vec<(String, String)>,
    pub review_violations: usize,
    pub review_citations_resolve: bool,
    /// Detected lexicon terms whose pair appears in the translation prompt.
    pub terms_in_prompt: (usize, usize),
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}

/// Runs the five scripted pipelines against the fixture library.
pub fn golden_run(data_dir: &Path) -> GoldenRun {
    use litpilot::investigation::{generate_review, topic_search, TopicDeps};
    use litpilot::reading::compare_papers;
    use litpilot::writing::{detect_terms, polish, translate, Direction, Style};

    let backend = mock();
    let (app, ids) = fixture_app(data_dir, Arc::clone(&backend));
    backend.clear_transcript();
    let mut files = Vec::new();
    let take = |name: &str, body: String, files: &mut Vec<(String, String)>| {
        files.push((format!("{name}.json"), body));
        files.push((format!("{name}.transcript.txt"), backend.transcript_text()));
        backend.clear_transcript();
    };

    let deps = TopicDeps {
        library: &app.library,
        backend: app.backend.as_ref(),
        prompts: &app.prompts,
        gazetteer: &app.gazetteer,
        plugins: &app.plugins,
    };
    let topic = topic_search("Papers about retrieval augmented generation since 2020 by Li Wei", &deps, 5).unwrap();
    take("topic_search", pretty(&topic), &mut files);

    let review = generate_review(&ids, &app.library, app.backend.as_ref(), &app.prompts, 0).unwrap();
    files.push(("review.md".into(), review.to_markdown()));
    take("review", pretty(&review), &mut files);

    let report = compare_papers(&ids[..3], &app.library, app.backend.as_ref(), &app.prompts).unwrap();
    files.push(("compare.md".into(), report.to_markdown()));
    take("compare", pretty(&report), &mut files);

    let source = std::fs::read_to_string(fixtures().join("translate_en.txt")).unwrap();
    let tr = translate(&source, Direction::EnZh, &app.lexicon, None, app.backend.as_ref(), &app.prompts).unwrap();
    let detected = detect_terms(&source, app.lexicon.entries(), None);
    let covered = detected
        .iter()
        .filter(|t| tr.prompt_used.contains(&format!("{} => {}", t.source_term, t.target_term)))
        .count();
    take("translate", pretty(&tr), &mut files);

    let draft = std::fs::read_to_string(fixtures().join("polish_draft.txt")).unwrap();
    let pr = polish(&draft, Style::Academic, app.backend.as_ref(), &app.prompts).unwrap();
    take("polish", pretty(&pr), &mut files);

    GoldenRun {
        files,
        review_violations: review.citation_violations,
        review_citations_resolve: review.citations_resolve(),
        terms_in_prompt: (covered, detected.len()),
    }
}

pub mod gen;
pub mod oracle;
pub mod toy;

pub mod http {
    use axum::body::{Body, Bytes};
    use axum::http::{HeaderMap, Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    pub struct Reply {
        pub status: StatusCode,
        pub headers: HeaderMap,
        pub body: Bytes,
    }

    impl Reply {
        pub fn json(&self) -> serde_json::Value {
            serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {:?}", self.body))
        }

        /// Payloads of the `data:` lines of an SSE body.
        pub fn events(&self) -> Vec<serde_json::Value> {
            std::str::from_utf8(&self.body)
                .unwrap()
                .lines()
                .filter_map(|l| l.strip_prefix("data: "))
                .map(|d| serde_json::from_str(d).unwrap())
                .collect()
        }
    }

    pub async fn send(router: &Router, method: &str, uri: &str, body: Option<&str>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        let resp = router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.into_body().collect().await.unwrap().to_bytes();
        Reply { status, headers, body }
    }
}
