pub mod app;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod evalkit;
pub mod investigation;
pub mod library;
pub mod llm;
pub mod query;
pub mod reading;
pub mod retrieval;
pub mod service;
pub mod session;
pub mod text;
pub mod writing;
