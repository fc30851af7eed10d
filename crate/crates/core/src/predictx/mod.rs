//! Anomaly prediction from fused sensor windows and image features.
//!
//! A time-series autoencoder and an image classifier feed a dense fusion head
//! that regresses the next frame and classifies the anomaly type. Five
//! variants are trained for ablation; the last adds the ontology range
//! penalty to the loss.

mod ablation;
mod dataset;
mod metrics;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::KernelError;
use crate::ontology::{Explanation, OntologyError};
use crate::Real;

pub use ablation::{run_ablation, split_indices, AblationReport, VariantRow, ZERO_IMAGE_ROW};
pub use dataset::{read_dataset, write_dataset, DATASET_FILE, FEATURES_FILE};
pub use metrics::{compute_weighted_metrics, ClassMetrics, Detection, WeightedMetrics};
pub use model::{
    evaluate_detection, evaluate_variant, fuse_predict, fusion_loss, train_autoencoder,
    train_fusion, Autoencoder, FusionModel, PredictxConfig, Standardizer,
};

#[derive(Debug, thiserror::Error)]
pub enum PredictxError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anomaly classes in their fixed report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyClass {
    Normal,
    NoNose,
    NoBody1,
    NoBody2,
    #[serde(rename = "NoNose_NoBody2")]
    NoNoseNoBody2,
    #[serde(rename = "NoBody2_NoBody1")]
    NoBody2NoBody1,
    #[serde(rename = "NoNose_NoBody2_NoBody1")]
    NoNoseNoBody2NoBody1,
}

/// Assembly components whose absence makes up the anomaly classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Nose,
    Body1,
    Body2,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Nose, Component::Body1, Component::Body2];
}

impl AnomalyClass {
    pub const COUNT: usize = 7;
    pub const ALL: [AnomalyClass; 7] = [
        AnomalyClass::Normal,
        AnomalyClass::NoNose,
        AnomalyClass::NoBody1,
        AnomalyClass::NoBody2,
        AnomalyClass::NoNoseNoBody2,
        AnomalyClass::NoBody2NoBody1,
        AnomalyClass::NoNoseNoBody2NoBody1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_anomalous(self) -> bool {
        self != AnomalyClass::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            AnomalyClass::Normal => "Normal",
            AnomalyClass::NoNose => "NoNose",
            AnomalyClass::NoBody1 => "NoBody1",
            AnomalyClass::NoBody2 => "NoBody2",
            AnomalyClass::NoNoseNoBody2 => "NoNose_NoBody2",
            AnomalyClass::NoBody2NoBody1 => "NoBody2_NoBody1",
            AnomalyClass::NoNoseNoBody2NoBody1 => "NoNose_NoBody2_NoBody1",
        }
    }

    /// Missing components.
    pub fn components(self) -> &'static [Component] {
        use Component::*;
        match self {
            AnomalyClass::Normal => &[],
            AnomalyClass::NoNose => &[Nose],
            AnomalyClass::NoBody1 => &[Body1],
            AnomalyClass::NoBody2 => &[Body2],
            AnomalyClass::NoNoseNoBody2 => &[Nose, Body2],
            AnomalyClass::NoBody2NoBody1 => &[Body2, Body1],
            AnomalyClass::NoNoseNoBody2NoBody1 => &[Nose, Body2, Body1],
        }
    }
}

impl fmt::Display for AnomalyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyClass {
    type Err = PredictxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PredictxError::Input(format!("unknown anomaly class '{s}'")))
    }
}

/// Fixed-length window of frames, `frames[t][c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub frames: Vec<Vec<Real>>,
    pub state_ids: Vec<String>,
    /// Timestamp (ms) of the last frame.
    pub timestamp: i64,
    pub label: AnomalyClass,
}

impl SensorWindow {
    pub fn window_len(&self) -> usize {
        self.frames.len()
    }

    pub fn n_channels(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), PredictxError> {
        let n = self.n_channels();
        if self.frames.is_empty() || n == 0 {
            return Err(PredictxError::Input("window has no frames".into()));
        }
        if self.frames.iter().any(|f| f.len() != n) {
            return Err(PredictxError::Input("frames in one window differ in channel count".into()));
        }
        if self.state_ids.len() != self.frames.len() {
            return Err(PredictxError::Input(format!(
                "{} state ids for {} frames",
                self.state_ids.len(),
                self.frames.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<Real>) {
        for f in &self.frames {
            out.extend_from_slice(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub vector: Vec<Real>,
    pub source_camera: String,
    pub timestamp: i64,
}

impl ImageFeatures {
    pub fn zeros(dim: usize, timestamp: i64) -> Self {
        Self {
            vector: vec![0.0; dim],
            source_camera: String::new(),
            timestamp,
        }
    }
}

/// One training example: a window, its image features and the next frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblySample {
    pub window: SensorWindow,
    pub image: ImageFeatures,
    pub target: Vec<Real>,
    pub target_state: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub id: u64,
    pub timestamp: i64,
    pub next_frame: Vec<Real>,
    pub class_probs: Vec<Real>,
    pub predicted_class: AnomalyClass,
    #[serde(default)]
    pub explanation: Option<Explanation>,
    pub latency_ms: Real,
}

impl PredictionResult {
    /// Builds a result from a probability vector; the class is its argmax
    /// with ties going to the earlier class.
    pub fn from_probs(next_frame: Vec<Real>, class_probs: Vec<Real>) -> Self {
        let predicted_class = AnomalyClass::from_index(argmax(&class_probs)).unwrap_or(AnomalyClass::Normal);
        Self {
            id: 0,
            timestamp: 0,
            next_frame,
            class_probs,
            predicted_class,
            explanation: None,
            latency_ms: 0.0,
        }
    }

    /// Equality ignoring latency.
    pub fn same_outputs(&self, other: &Self) -> bool {
        let bits = |v: &[Real]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.id == other.id
            && self.timestamp == other.timestamp
            && bits(&self.next_frame) == bits(&other.next_frame)
            && bits(&self.class_probs) == bits(&other.class_probs)
            && self.predicted_class == other.predicted_class
            && self.explanation == other.explanation
    }
}

/// First index of the maximum.
pub fn argmax(v: &[Real]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionVariant {
    B1,
    B2,
    P1,
    P2,
    P3,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::B1,
        FusionVariant::B2,
        FusionVariant::P1,
        FusionVariant::P2,
        FusionVariant::P3,
    ];

    pub fn uses_series(self) -> bool {
        self != FusionVariant::B2
    }

    pub fn uses_image(self) -> bool {
        self != FusionVariant::B1
    }

    pub fn freezes_encoder(self) -> bool {
        matches!(self, FusionVariant::P2 | FusionVariant::P3)
    }

    pub fn uses_penalty(self) -> bool {
        self == FusionVariant::P3
    }

    pub fn description(self) -> &'static str {
        match self {
            FusionVariant::B1 => "time-series autoencoder only",
            FusionVariant::B2 => "image classifier only (detection)",
            FusionVariant::P1 => "decision-level fusion",
            FusionVariant::P2 => "fusion with frozen pretrained encoder",
            FusionVariant::P3 => "frozen encoder with ontology range penalty",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for FusionVariant {
    type Err = PredictxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| PredictxError::Input(format!("unknown variant '{s}'")))
    }
}
