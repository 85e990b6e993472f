#![allow(dead_code)]

use litpilot::app::{App, BackendConfig, ServiceConfig};
use litpilot::corpus::SourceFormat;
use litpilot::llm::MockBackend;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn scripted_backend() -> Arc<MockBackend> {
    Arc::new(MockBackend::from_rules_file(&fixtures().join("mock_rules.json")).expect("rules file"))
}

/// An app over a fresh data directory with the bundled sample papers
/// ingested. Returns the doc ids in file order.
pub fn sample_app(data_dir: &Path) -> (App, Vec<String>) {
    let config = ServiceConfig {
        data_dir: data_dir.to_path_buf(),
        backend: BackendConfig::Mock {
            rules: fixtures().join("mock_rules.json"),
        },
        gazetteer: Some(fixtures().join("gazetteer.tsv")),
        lexicon: Some(fixtures().join("lexicon.tsv")),
        embedding_dim: 64,
        ..ServiceConfig::default()
    };
    let app = App::open_with_backend(config, scripted_backend()).expect("open app");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures().join("papers"))
        .expect("papers dir")
        .map(|e| e.expect("entry").path())
        .collect();
    paths.sort();
    let ids = paths
        .iter()
        .map(|p| {
            let src = std::fs::read_to_string(p).expect("read paper");
            let name = p.file_name().unwrap().to_string_lossy();
            app.ingest_source(&src, SourceFormat::Markdown, &name).expect("ingest").doc_id
        })
        .collect();
    (app, ids)
}
