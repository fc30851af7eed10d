//! Settings resolution: defaults, then the TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use smartpilot_core::datagen::{CorpusConfig, ForecastGenConfig, GenConfig};
use smartpilot_core::foresight::ForesightConfig;
use smartpilot_core::infoguide::InfoGuideConfig;
use smartpilot_core::predictx::PredictxConfig;
use smartpilot_runtime::agents::{DEFAULT_INSIGHT_THRESHOLD, DEFAULT_INSIGHT_WINDOW};
use smartpilot_runtime::bus::DEFAULT_BUFFER;
use smartpilot_runtime::hub::DEFAULT_RECENT;

use crate::CliError;

pub const CONFIG_ENV: &str = "SMARTPILOT_CONFIG";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeSettings {
    pub buffer: usize,
    pub insight_window: usize,
    pub insight_threshold: f64,
    pub recent: usize,
    /// Live tag server (`host:port`) read by `serve` when no replay rate is
    /// given.
    pub tag_server: Option<String>,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self {
            buffer: DEFAULT_BUFFER,
            insight_window: DEFAULT_INSIGHT_WINDOW,
            insight_threshold: DEFAULT_INSIGHT_THRESHOLD,
            recent: DEFAULT_RECENT,
            tag_server: None,
        }
    }
}

/// Config file layout. Every key is optional; a component section only
/// needs the keys it changes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub port: Option<u16>,
    pub rate: Option<String>,
    pub facility: Option<String>,
    pub variant: Option<String>,
    pub log_level: Option<String>,
    pub generator: Option<String>,
    pub assembly: Option<GenConfig>,
    pub forecast: Option<ForecastGenConfig>,
    pub corpus: Option<CorpusConfig>,
    pub predictx: Option<PredictxConfig>,
    pub foresight: Option<ForesightConfig>,
    pub infoguide: Option<InfoGuideConfig>,
    pub runtime: Option<RuntimeSettings>,
    pub forecast_train_fraction: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    models: Option<PathBuf>,
    ontology: Option<PathBuf>,
    port: Option<u16>,
    rate: Option<String>,
    facility: Option<String>,
    variant: Option<String>,
    log_level: Option<String>,
    /// Address (`host:port`) of an external text generator. Without one,
    /// summaries and answers are extractive.
    generator: Option<String>,
    assembly: Option<toml::Value>,
    forecast: Option<toml::Value>,
    corpus: Option<toml::Value>,
    predictx: Option<toml::Value>,
    foresight: Option<toml::Value>,
    infoguide: Option<toml::Value>,
    runtime: Option<toml::Value>,
    /// Share of each forecast series used for training.
    forecast_train_fraction: Option<f64>,
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// First key of `given` with no counterpart in `kept`.
fn dropped_key(given: &serde_json::Value, kept: &serde_json::Value, path: &str) -> Option<String> {
    let (serde_json::Value::Object(g), serde_json::Value::Object(k)) = (given, kept) else {
        return None;
    };
    g.iter().find_map(|(key, v)| {
        let p = format!("{path}.{key}");
        match k.get(key) {
            None => Some(p),
            Some(kv) => dropped_key(v, kv, &p),
        }
    })
}

/// Overlays a section on the component's defaults. Keys the component does
/// not know are rejected.
fn section<T>(name: &str, raw: Option<toml::Value>) -> Result<Option<T>, CliError>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let Some(raw) = raw else { return Ok(None) };
    let err = |m: String| CliError::Validation(format!("config [{name}]: {m}"));
    let given = serde_json::to_value(raw).map_err(|e| err(e.to_string()))?;
    let mut merged = serde_json::to_value(T::default()).expect("defaults serialize");
    merge(&mut merged, &given);
    let value: T = serde_json::from_value(merged).map_err(|e| err(e.to_string()))?;
    let kept = serde_json::to_value(&value).expect("config serializes");
    if let Some(key) = dropped_key(&given, &kept, name) {
        return Err(err(format!("unknown key `{key}`")));
    }
    Ok(Some(value))
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(Self {
            seed: raw.seed,
            data: raw.data,
            out: raw.out,
            models: raw.models,
            ontology: raw.ontology,
            port: raw.port,
            rate: raw.rate,
            facility: raw.facility,
            variant: raw.variant,
            log_level: raw.log_level,
            generator: raw.generator,
            assembly: section("assembly", raw.assembly)?,
            forecast: section("forecast", raw.forecast)?,
            corpus: section("corpus", raw.corpus)?,
            predictx: section("predictx", raw.predictx)?,
            foresight: section("foresight", raw.foresight)?,
            infoguide: section("infoguide", raw.infoguide)?,
            runtime: section("runtime", raw.runtime)?,
            forecast_train_fraction: raw.forecast_train_fraction,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }
}

/// Effective settings of one run. Locations and log level are left out of
/// the serialized form, so the hash identifies what a run computes, not
/// where it writes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    #[serde(skip)]
    pub data: PathBuf,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub models: Option<PathBuf>,
    #[serde(skip)]
    pub ontology: Option<PathBuf>,
    #[serde(skip)]
    pub port: Option<u16>,
    pub rate: Option<String>,
    pub facility: Option<String>,
    pub variant: Option<String>,
    #[serde(skip)]
    pub log_level: String,
    pub generator: Option<String>,
    pub assembly: GenConfig,
    pub forecast: ForecastGenConfig,
    pub corpus: CorpusConfig,
    pub predictx: PredictxConfig,
    pub foresight: ForesightConfig,
    pub infoguide: InfoGuideConfig,
    pub runtime: RuntimeSettings,
    pub forecast_train_fraction: f64,
}

/// Values given on the command line; `None` when absent.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub port: Option<u16>,
    pub rate: Option<String>,
    pub facility: Option<String>,
    pub variant: Option<String>,
    pub log_level: Option<String>,
}

impl Settings {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, CliError> {
        let seed = flags.seed.or(file.seed);
        let mut s = Settings {
            seed: seed.unwrap_or(DEFAULT_SEED),
            data: flags.data.or(file.data).unwrap_or_else(|| PathBuf::from("data")),
            out: flags.out.or(file.out),
            models: file.models,
            ontology: flags.ontology.or(file.ontology),
            port: flags.port.or(file.port),
            rate: flags.rate.or(file.rate),
            facility: flags.facility.or(file.facility),
            variant: flags.variant.or(file.variant),
            log_level: flags.log_level.or(file.log_level).unwrap_or_else(|| "info".into()),
            generator: file.generator,
            assembly: file.assembly.unwrap_or_default(),
            forecast: file.forecast.unwrap_or_default(),
            corpus: file.corpus.unwrap_or_default(),
            predictx: file.predictx.unwrap_or_default(),
            foresight: file.foresight.unwrap_or_default(),
            infoguide: file.infoguide.unwrap_or_default(),
            runtime: file.runtime.unwrap_or_default(),
            forecast_train_fraction: file.forecast_train_fraction.unwrap_or(0.8),
        };
        // A top-level seed drives every component.
        if let Some(seed) = seed {
            s.assembly.seed = seed;
            s.forecast.seed = seed;
            s.corpus.seed = seed;
            s.predictx.seed = seed;
            s.foresight.seed = seed;
        }
        if let Some(f) = &s.facility {
            s.assembly.facility_id = f.clone();
        }
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        let v = |m: String| CliError::Validation(m);
        self.assembly.validate().map_err(|e| v(e.to_string()))?;
        self.forecast.validate().map_err(|e| v(e.to_string()))?;
        self.infoguide.validate().map_err(|e| v(e.to_string()))?;
        if !(self.forecast_train_fraction > 0.0 && self.forecast_train_fraction < 1.0) {
            return Err(v(format!(
                "forecast_train_fraction must be in (0, 1), got {}",
                self.forecast_train_fraction
            )));
        }
        if self.runtime.insight_window == 0 {
            return Err(v("runtime.insight_window must be at least 1".into()));
        }
        if let Some(r) = &self.rate {
            r.parse::<smartpilot_runtime::Rate>().map_err(v)?;
        }
        if !matches!(self.log_level.as_str(), "error" | "warn" | "info" | "debug" | "trace" | "off") {
            return Err(v(format!("unknown log level '{}'", self.log_level)));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn serve_port(&self) -> u16 {
        self.port.unwrap_or(DEFAULT_PORT)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models.clone().unwrap_or_else(|| self.data.join("models"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.data.join("reports"))
    }

    pub fn ontology_path(&self) -> PathBuf {
        self.ontology.clone().unwrap_or_else(|| self.data.join(crate::layout::ONTOLOGY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = FileConfig::parse("seed = 7\nport = 9000\n[predictx]\nlatent_dim = 5\n").unwrap();
        let s = Settings::resolve(file.clone(), Overrides::default()).unwrap();
        assert_eq!((s.seed, s.port, s.predictx.latent_dim), (7, Some(9000), 5));
        assert_eq!(s.assembly.seed, 7);
        let flags = Overrides {
            seed: Some(3),
            ..Overrides::default()
        };
        let s = Settings::resolve(file, flags).unwrap();
        assert_eq!((s.seed, s.port, s.predictx.seed), (3, Some(9000), 3));
        let d = Settings::resolve(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!((d.seed, d.serve_port()), (DEFAULT_SEED, DEFAULT_PORT));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("sed = 1").is_err());
        assert!(FileConfig::parse("[runtime]\nbufer = 3").is_err());
        assert!(FileConfig::parse("[predictx.fusion]\nepoch = 3").is_err());
    }

    #[test]
    fn partial_sections_keep_component_defaults() {
        let f = FileConfig::parse("[foresight.train]\nepochs = 1\n[predictx.fusion.loss_weights]\npenalty = 0.5\n").unwrap();
        let fs = f.foresight.unwrap();
        assert_eq!(fs.train.epochs, 1);
        assert_eq!(fs.train.learning_rate, ForesightConfig::default().train.learning_rate);
        assert_eq!(fs.lookback, ForesightConfig::default().lookback);
        let px = f.predictx.unwrap();
        assert_eq!(px.fusion.loss_weights["penalty"], 0.5);
        assert_eq!(px.fusion.epochs, PredictxConfig::default().fusion.epochs);
    }

    #[test]
    fn hash_tracks_computation_not_locations() {
        let a = Settings::resolve(FileConfig::default(), Overrides::default()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.data = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.infoguide.k += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let file = FileConfig::parse("rate = \"-2\"").unwrap();
        assert!(matches!(Settings::resolve(file, Overrides::default()), Err(CliError::Validation(_))));
        let file = FileConfig::parse("forecast_train_fraction = 1.5").unwrap();
        assert!(Settings::resolve(file, Overrides::default()).is_err());
    }
}
