//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "smartpilot",
    version,
    about = "Anomaly prediction, production forecasting and manual question answering for assembly lines",
    after_help = "Settings are resolved as flags, then the config file, then built-in defaults.\nExit status: 0 success, 1 invalid input, 2 runtime failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Agent {
    Predictx,
    Foresight,
    Infoguide,
}

#[derive(Debug, Default, Args)]
pub struct Opts {
    /// Seed for every generator, split and initialization
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (gen: data root; others: reports)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Data directory written by `gen` [default: data]
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Ontology file [default: <data>/ontology.json]
    #[arg(long, global = true, value_name = "FILE")]
    pub ontology: Option<PathBuf>,
    /// Agent to train or evaluate
    #[arg(long, global = true, value_enum)]
    pub agent: Option<Agent>,
    /// PredictX fusion variant (B1, B2, P1, P2, P3) or ForeSight model (kil, base)
    #[arg(long, global = true, value_name = "NAME")]
    pub variant: Option<String>,
    /// Replay speed multiple of recorded time, or `inf`
    #[arg(long, global = true, value_name = "X")]
    pub rate: Option<String>,
    /// HTTP port to serve on, or of the server `ask` queries
    #[arg(long, global = true, value_name = "PORT")]
    pub port: Option<u16>,
    /// TOML config file
    #[arg(long, global = true, value_name = "FILE", env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Facility name for generated data and the served facility
    #[arg(long, global = true, value_name = "NAME")]
    pub facility: Option<String>,
    /// Log filter: error, warn, info, debug, trace or off
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
}

impl Opts {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            data: self.data.clone(),
            out: self.out.clone(),
            ontology: self.ontology.clone(),
            port: self.port,
            rate: self.rate.clone(),
            facility: self.facility.clone(),
            variant: self.variant.clone(),
            log_level: self.log_level.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the assembly dataset, ontology, replay stream, forecast series and manual corpus
    Gen,
    /// Train one agent's model into <data>/models
    Train,
    /// Train and score every fusion variant on one split
    Ablate,
    /// Score a trained agent on held-out data
    Eval,
    /// Run the agents on a tag stream and serve the HTTP/websocket API
    Serve,
    /// Run the agents over the replay file and log every prediction
    Replay,
    /// Ask a question of the manuals or of a running server
    Ask {
        /// The question
        query: String,
    },
}
