//! `smartpilot` command-line tool: generation, training, ablation,
//! evaluation, serving, replay and ad-hoc questions.

pub mod cli;
pub mod commands;
pub mod config;

use std::fmt::Display;

/// Exit status 1 for validation errors, 2 for runtime errors.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON form written to stderr.
    pub fn to_json(&self) -> String {
        let (CliError::Validation(m) | CliError::Runtime(m)) = self;
        serde_json::json!({ "error": self.kind(), "message": m }).to_string()
    }
}

pub(crate) fn runtime<E: Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub(crate) fn invalid<E: Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

/// File names inside a data directory.
pub mod layout {
    pub const ASSEMBLY: &str = "assembly";
    pub const ONTOLOGY: &str = "ontology.json";
    pub const REPLAY: &str = "replay.tsv";
    pub const FORECAST: &str = "forecast.tsv";
    pub const CORPUS: &str = "corpus";
    pub const MANUALS: &str = "manuals";
    pub const GOLD: &str = "gold.json";
    pub const KEYWORDS: &str = "keywords.json";
    pub const METADATA: &str = "metadata.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const PREDICTIONS: &str = "predictions.jsonl";
}
