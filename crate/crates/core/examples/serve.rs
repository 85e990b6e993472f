//! Runs the HTTP API over the sample papers with the scripted backend.
//!
//!     cargo run --example serve
//!     curl -s localhost:8080/v1/health
//!     curl -s -XPOST localhost:8080/v1/search -d '{"query":"dense retrieval"}' -H 'content-type: application/json'

mod common;

use litpilot::service::{serve, ServiceState};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let dir = std::env::temp_dir().join("litpilot-serve-example");
    let (app, ids) = common::sample_app(&dir);
    println!("{} papers loaded; first doc_id {}", ids.len(), ids[0]);
    serve(ServiceState::new(app).expect("state")).await
}
