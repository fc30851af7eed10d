//! Deterministic synthetic data: assembly-line windows with planted
//! anomalies and a matching ontology, production series with exogenous
//! features, and a small manual corpus with gold questions.
//!
//! Every generator is a pure function of its config.

mod assembly;
mod corpus;
mod forecast;

pub use assembly::{
    gen_assembly, write_replay, AssemblyDataset, AssemblyMetadata, GenConfig, REPLAY_CAMERA_TAG,
    REPLAY_STATE_TAG,
};
pub use corpus::{gen_corpus, CorpusConfig, GeneratedCorpus, GoldQuestion};
pub use forecast::{
    gen_forecast, ForecastGenConfig, ForecastMetadata, GeneratedProduct, RAW_MATERIAL_FEATURE,
    SOLIDS_RATIO_FEATURE,
};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Ontology(#[from] crate::ontology::OntologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
