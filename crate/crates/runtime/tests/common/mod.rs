#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use smartpilot_core::datagen::{gen_assembly, gen_corpus, gen_forecast, write_replay, AssemblyDataset, CorpusConfig, ForecastGenConfig, GenConfig};
use smartpilot_core::foresight::{train_forecaster, ForesightConfig};
use smartpilot_core::infoguide::{build_index, InfoGuideConfig};
use smartpilot_core::kernel::TrainConfig;
use smartpilot_core::predictx::{train_fusion, AssemblySample, FusionModel, FusionVariant, PredictxConfig};
use smartpilot_runtime::{
    ingest, Facility, ForesightAgent, Hub, Pipeline, PipelineConfig, PipelineStats, PredictxAgent, ProductForecaster, Rate,
    Source,
};

pub const WINDOW: usize = 9;
pub const FORECAST_START: usize = 96;

pub struct Fixture {
    pub data: AssemblyDataset,
    pub model: Arc<FusionModel>,
    pub replay: PathBuf,
    pub corpus_dir: PathBuf,
    pub ontology_path: PathBuf,
    pub corpus: smartpilot_core::datagen::GeneratedCorpus,
    pub dir: tempfile::TempDir,
}

/// `n_windows` samples of `WINDOW + 1` frames each, a P3 model trained on
/// them, the replay file and the manual corpus.
pub fn fixture(n_windows: usize) -> Fixture {
    let data = gen_assembly(&GenConfig {
        seed: 5,
        window_len: WINDOW,
        n_windows,
        ..GenConfig::default()
    })
    .unwrap();
    let tc = |epochs| TrainConfig {
        learning_rate: 3e-3,
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let cfg = PredictxConfig {
        pretrain: tc(5),
        image_pretrain: tc(3),
        image_folds: 2,
        fusion: tc(10),
        ..PredictxConfig::default()
    };
    let samples: Vec<&AssemblySample> = data.samples.iter().collect();
    let model = train_fusion(FusionVariant::P3, &samples, &data.ontology, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let replay = dir.path().join("replay.tsv");
    write_replay(&replay, &data, "ff").unwrap();
    let corpus = gen_corpus(&CorpusConfig::default()).unwrap();
    let corpus_dir = dir.path().join("corpus");
    corpus.write(&corpus_dir).unwrap();
    let ontology_path = dir.path().join("ontology.json");
    data.ontology.save(&ontology_path).unwrap();
    Fixture {
        data,
        model: Arc::new(model),
        replay,
        corpus_dir,
        ontology_path,
        corpus,
        dir,
    }
}

impl Fixture {
    pub fn hub(&self) -> Arc<Hub> {
        let index = build_index(&self.corpus.manuals, &self.corpus.keywords, None, &InfoGuideConfig::default()).unwrap();
        Arc::new(Hub::new(
            Facility {
                name: "ff".into(),
                ontology: Arc::new(self.data.ontology.clone()),
                index: Arc::new(index),
                manuals: self.corpus.manuals.len(),
            },
            1000,
        ))
    }

    pub fn predictx(&self) -> PredictxAgent {
        PredictxAgent::new(self.model.clone(), self.data.metadata.channels.clone()).unwrap()
    }

    /// Replays the fixture file through a fresh pipeline.
    pub fn run(&self, hub: Arc<Hub>, foresight: ForesightAgent, log: Option<&Path>) -> (PipelineStats, usize, Duration) {
        let log = log.map(|p| Box::new(std::fs::File::create(p).unwrap()) as Box<dyn std::io::Write + Send>);
        let start = Instant::now();
        let p = Pipeline::start(self.predictx(), foresight, hub, &PipelineConfig::default(), log).unwrap();
        let ingested = ingest(Source::Replay(&self.replay), Rate::Unlimited, p.bus()).unwrap();
        let stats = p.join().unwrap();
        (stats, ingested.frames, start.elapsed())
    }
}

/// Small forecasters on 120-period series; forecasting starts at period 96.
pub fn foresight_agent() -> ForesightAgent {
    let (products, _) = gen_forecast(&ForecastGenConfig {
        periods: 120,
        ..ForecastGenConfig::default()
    })
    .unwrap();
    let cfg = ForesightConfig {
        lstm_units: (8, 4),
        dense_units: 4,
        train: TrainConfig {
            learning_rate: 5e-3,
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        },
        ..ForesightConfig::default()
    };
    let products = products
        .into_iter()
        .map(|p| {
            let m = train_forecaster(&p.series, &p.features, true, &cfg).unwrap();
            ProductForecaster::new(m, p.series, p.features, FORECAST_START).unwrap()
        })
        .collect();
    ForesightAgent { products }
}
