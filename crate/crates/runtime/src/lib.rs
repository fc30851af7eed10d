//! Multiagent runtime: message bus, tag-stream ingestion, agent pipeline,
//! live state and the HTTP/websocket service.

pub mod agents;
pub mod bus;
pub mod hub;
pub mod server;
pub mod tags;

pub use agents::{
    prediction_log_line, ForesightAgent, InsightBridge, Pipeline, PipelineConfig, PipelineStats, PredictxAgent,
    ProductForecaster,
};
pub use bus::{AgentMessage, Bus, Payload, Subscription};
pub use hub::{Facility, Hub, LiveCell, LiveEvent};
pub use tags::{ingest, IngestStats, Rate, Source, TagFrame, TagUpdate, TagValue};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("bad frame: {0}")]
    Frame(String),
    #[error("agent: {0}")]
    Agent(String),
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error("facility: {0}")]
    Facility(String),
}
