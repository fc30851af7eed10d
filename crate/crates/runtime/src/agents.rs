//! Agents as single-threaded state machines, and the pipeline that runs
//! each on its own thread between bus topics:
//!
//! frames → PredictX → predictions → bridge → insights → ForeSight → forecasts
//!
//! A sink thread subscribed to the three output topics feeds the [`Hub`]
//! and the optional prediction log.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;

use smartpilot_core::datagen::{REPLAY_CAMERA_TAG, REPLAY_STATE_TAG};
use smartpilot_core::foresight::{
    forecast_next, ForecastModel, ForecastResult, ForecastSeries, StructuredFeatures, ANOMALY_RATE_FEATURE,
};
use smartpilot_core::live::AnomalyInsight;
use smartpilot_core::ontology::Explanation;
use smartpilot_core::predictx::{fuse_predict, AnomalyClass, FusionModel, ImageFeatures, PredictionResult, SensorWindow};
use smartpilot_core::Real;

use crate::bus::{Bus, Payload, Subscription, FORECASTS, FRAMES, INSIGHTS, PREDICTIONS};
use crate::hub::Hub;
use crate::tags::TagFrame;
use crate::RuntimeError;

pub const DEFAULT_INSIGHT_WINDOW: usize = 10;
pub const DEFAULT_INSIGHT_THRESHOLD: Real = 0.3;

/// Keeps the last `window_len` frames and predicts whenever a frame
/// carries camera features.
pub struct PredictxAgent {
    model: Arc<FusionModel>,
    channels: Vec<String>,
    frames: VecDeque<(Vec<Real>, String)>,
    next_id: u64,
}

impl PredictxAgent {
    /// `channels` names the model inputs in order.
    pub fn new(model: Arc<FusionModel>, channels: Vec<String>) -> Result<Self, RuntimeError> {
        if channels.len() != model.n_channels {
            return Err(RuntimeError::Config(format!(
                "{} channels given, model expects {}",
                channels.len(),
                model.n_channels
            )));
        }
        Ok(Self {
            frames: VecDeque::with_capacity(model.window_len),
            model,
            channels,
            next_id: 1,
        })
    }

    /// Consumes one frame. Explanations use `hub`'s active ontology when
    /// given.
    pub fn on_frame(&mut self, frame: &TagFrame, hub: Option<&Hub>) -> Result<Option<PredictionResult>, RuntimeError> {
        let bad = |m: String| RuntimeError::Frame(format!("frame at {}: {m}", frame.timestamp));
        let mut values = Vec::with_capacity(self.channels.len());
        for c in &self.channels {
            let v = frame.values.get(c).and_then(|v| v.as_number());
            values.push(v.ok_or_else(|| bad(format!("missing numeric channel '{c}'")))?);
        }
        let state = frame
            .values
            .get(REPLAY_STATE_TAG)
            .and_then(|v| v.as_text())
            .ok_or_else(|| bad("missing state tag".into()))?
            .to_string();
        let camera = match frame.values.get(REPLAY_CAMERA_TAG) {
            None => None,
            Some(v) => Some(parse_camera(v.as_text(), v.as_number()).ok_or_else(|| bad("unreadable camera features".into()))?),
        };
        if self.frames.len() == self.model.window_len {
            self.frames.pop_front();
        }
        self.frames.push_back((values, state));
        let Some(vector) = camera else { return Ok(None) };
        if self.frames.len() < self.model.window_len {
            return Ok(None);
        }
        let window = SensorWindow {
            frames: self.frames.iter().map(|f| f.0.clone()).collect(),
            state_ids: self.frames.iter().map(|f| f.1.clone()).collect(),
            timestamp: frame.timestamp,
            label: AnomalyClass::Normal,
        };
        let image = ImageFeatures {
            vector,
            source_camera: REPLAY_CAMERA_TAG.into(),
            timestamp: frame.timestamp,
        };
        let mut p = fuse_predict(&self.model, &window, &image).map_err(|e| bad(e.to_string()))?;
        p.id = self.next_id;
        self.next_id += 1;
        if let Some(hub) = hub {
            let (last, state) = self.frames.back().expect("window is full");
            match hub.facility().ontology.explain(&p, last, state) {
                Ok(e) => p.explanation = Some(e),
                Err(e) => log::warn!("prediction {}: no explanation: {e}", p.id),
            }
        }
        Ok(Some(p))
    }
}

fn parse_camera(text: Option<&str>, number: Option<f64>) -> Option<Vec<Real>> {
    if let Some(x) = number {
        return Some(vec![x]);
    }
    text?.split(',').map(|s| s.trim().parse::<Real>().ok().filter(|v| v.is_finite())).collect()
}

/// Sliding-window anomaly rate over the latest predictions.
pub struct InsightBridge {
    window: usize,
    threshold: Real,
    recent: VecDeque<AnomalyClass>,
}

impl InsightBridge {
    pub fn new(window: usize, threshold: Real) -> Result<Self, RuntimeError> {
        if window == 0 {
            return Err(RuntimeError::Config("insight window must be at least 1".into()));
        }
        Ok(Self {
            window,
            threshold,
            recent: VecDeque::with_capacity(window),
        })
    }

    pub fn push(&mut self, p: &PredictionResult) -> AnomalyInsight {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(p.predicted_class);
        let classes: Vec<AnomalyClass> = self.recent.iter().copied().collect();
        AnomalyInsight::from_classes(&classes, self.threshold, p.timestamp)
    }
}

/// Walks one product's held-out periods, one per insight.
pub struct ProductForecaster {
    model: ForecastModel,
    series: ForecastSeries,
    feats: StructuredFeatures,
    cursor: usize,
    forecasts: Vec<Real>,
    actuals: Vec<Real>,
}

impl ProductForecaster {
    /// Forecasting starts at period `start`, which needs `lookback`
    /// periods of history.
    pub fn new(
        model: ForecastModel,
        series: ForecastSeries,
        feats: StructuredFeatures,
        start: usize,
    ) -> Result<Self, RuntimeError> {
        if start < model.lookback || start >= series.values.len() {
            return Err(RuntimeError::Config(format!(
                "product {}: start {start} outside [{}, {})",
                series.product_id,
                model.lookback,
                series.values.len()
            )));
        }
        if feats.names != model.feature_names || feats.rows.len() != series.values.len() {
            return Err(RuntimeError::Config(format!(
                "product {}: features do not match the model",
                series.product_id
            )));
        }
        Ok(Self {
            model,
            series,
            feats,
            cursor: start,
            forecasts: Vec::new(),
            actuals: Vec::new(),
        })
    }

    pub fn product_id(&self) -> &str {
        &self.series.product_id
    }

    /// Forecasts the next period with the insight's rate injected as the
    /// `anomaly_rate` feature. `None` once the series is exhausted.
    pub fn step(&mut self, insight: &AnomalyInsight) -> Result<Option<ForecastResult>, RuntimeError> {
        let t = self.cursor;
        if t >= self.series.values.len() {
            return Ok(None);
        }
        let mut row = self.feats.rows[t].clone();
        if let Some(c) = self.feats.column(ANOMALY_RATE_FEATURE) {
            row[c] = insight.window_anomaly_rate;
        }
        let window = &self.series.values[t - self.model.lookback..t];
        let f = forecast_next(&self.model, window, &row).map_err(|e| RuntimeError::Agent(e.to_string()))?;
        self.forecasts.push(f.value);
        self.actuals.push(self.series.values[t]);
        self.cursor += 1;
        ForecastResult::from_pairs(self.series.product_id.clone(), self.forecasts.clone(), self.actuals.clone())
            .map(Some)
            .map_err(|e| RuntimeError::Agent(e.to_string()))
    }
}

#[derive(Default)]
pub struct ForesightAgent {
    pub products: Vec<ProductForecaster>,
}

impl ForesightAgent {
    pub fn on_insight(&mut self, insight: &AnomalyInsight) -> Result<Vec<ForecastResult>, RuntimeError> {
        let mut out = Vec::new();
        for p in &mut self.products {
            out.extend(p.step(insight)?);
        }
        Ok(out)
    }
}

/// One line of the prediction log; latency is left out so that replays are
/// byte-comparable.
#[derive(Serialize)]
struct LogLine<'a> {
    id: u64,
    timestamp: i64,
    predicted_class: AnomalyClass,
    class_probs: &'a [Real],
    next_frame: &'a [Real],
    explanation: &'a Option<Explanation>,
}

pub fn prediction_log_line(p: &PredictionResult) -> String {
    serde_json::to_string(&LogLine {
        id: p.id,
        timestamp: p.timestamp,
        predicted_class: p.predicted_class,
        class_probs: &p.class_probs,
        next_frame: &p.next_frame,
        explanation: &p.explanation,
    })
    .expect("log line serializes")
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub buffer: usize,
    pub insight_window: usize,
    pub insight_threshold: Real,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            buffer: crate::bus::DEFAULT_BUFFER,
            insight_window: DEFAULT_INSIGHT_WINDOW,
            insight_threshold: DEFAULT_INSIGHT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub predictions: usize,
    pub insights: usize,
    pub forecasts: usize,
    pub skipped_frames: usize,
    pub dropped: u64,
}

type Worker = JoinHandle<Result<usize, RuntimeError>>;

/// Agent threads wired to a bus. Feed frames through [`Pipeline::bus`],
/// close [`FRAMES`], then [`Pipeline::join`].
pub struct Pipeline {
    bus: Bus,
    predictx: Worker,
    bridge: Worker,
    foresight: Worker,
    sink: Worker,
}

fn spawn(name: &str, f: impl FnOnce() -> Result<usize, RuntimeError> + Send + 'static) -> Worker {
    std::thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .expect("agent thread spawns")
}

fn relay<T>(
    sub: Subscription,
    bus: Bus,
    out: &'static str,
    mut f: impl FnMut(&Payload) -> Result<Vec<T>, RuntimeError>,
    wrap: fn(T) -> Payload,
) -> Result<usize, RuntimeError> {
    let mut n = 0;
    let result = (|| {
        for m in sub.iter() {
            for x in f(&m.payload)? {
                bus.publish(out, wrap(x));
                n += 1;
            }
        }
        Ok(n)
    })();
    // Downstream must finish even when this agent fails.
    bus.close(out);
    result
}

impl Pipeline {
    /// Subscribes every agent before returning, so no frame published
    /// afterwards is missed.
    pub fn start(
        mut predictx: PredictxAgent,
        mut foresight: ForesightAgent,
        hub: Arc<Hub>,
        config: &PipelineConfig,
        mut log: Option<Box<dyn Write + Send>>,
    ) -> Result<Self, RuntimeError> {
        let mut bridge = InsightBridge::new(config.insight_window, config.insight_threshold)?;
        let bus = Bus::new(config.buffer);
        let frames = bus.subscribe(FRAMES);
        let predictions = bus.subscribe(PREDICTIONS);
        let insights = bus.subscribe(INSIGHTS);
        let outputs = bus.subscribe_many(&[PREDICTIONS, INSIGHTS, FORECASTS]);

        let (b, h) = (bus.clone(), hub.clone());
        let predictx = spawn("predictx", move || {
            let mut skipped = 0usize;
            let r = relay(
                frames,
                b,
                PREDICTIONS,
                |p| match p {
                    Payload::Frame(f) => match predictx.on_frame(f, Some(&h)) {
                        Ok(p) => Ok(p.into_iter().collect()),
                        Err(e) => {
                            skipped += 1;
                            log::warn!("{e}");
                            Ok(Vec::new())
                        }
                    },
                    _ => Ok(Vec::new()),
                },
                Payload::Prediction,
            );
            if skipped > 0 {
                log::warn!("{skipped} frames skipped");
            }
            r.map(|_| skipped)
        });
        let b = bus.clone();
        let bridge = spawn("bridge", move || {
            relay(
                predictions,
                b,
                INSIGHTS,
                |p| match p {
                    Payload::Prediction(p) => Ok(vec![bridge.push(p)]),
                    _ => Ok(Vec::new()),
                },
                Payload::Insight,
            )
        });
        let b = bus.clone();
        let foresight = spawn("foresight", move || {
            relay(
                insights,
                b,
                FORECASTS,
                |p| match p {
                    Payload::Insight(i) => foresight.on_insight(i),
                    _ => Ok(Vec::new()),
                },
                Payload::Forecast,
            )
        });
        let sink = spawn("sink", move || {
            let mut n = 0;
            for m in outputs.iter() {
                hub.apply(&m.payload);
                if let (Some(w), Payload::Prediction(p)) = (log.as_mut(), &m.payload) {
                    writeln!(w, "{}", prediction_log_line(p)).map_err(|e| RuntimeError::Io(e.to_string()))?;
                    n += 1;
                }
            }
            if let Some(w) = log.as_mut() {
                w.flush().map_err(|e| RuntimeError::Io(e.to_string()))?;
            }
            Ok(n)
        });
        Ok(Self {
            bus,
            predictx,
            bridge,
            foresight,
            sink,
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// Waits for every agent to drain. Call after [`FRAMES`] is closed.
    pub fn join(self) -> Result<PipelineStats, RuntimeError> {
        let wait = |h: Worker| h.join().map_err(|_| RuntimeError::Agent("agent thread panicked".into()))?;
        let skipped_frames = wait(self.predictx)?;
        let insights = wait(self.bridge)?;
        let forecasts = wait(self.foresight)?;
        wait(self.sink)?;
        Ok(PipelineStats {
            predictions: self.bus.published(PREDICTIONS) as usize,
            insights,
            forecasts,
            skipped_frames,
            dropped: self.bus.total_dropped(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(c: AnomalyClass) -> PredictionResult {
        let mut probs = vec![0.0; AnomalyClass::COUNT];
        probs[c.index()] = 1.0;
        PredictionResult::from_probs(Vec::new(), probs)
    }

    #[test]
    fn ten_normal_predictions_give_zero_rate() {
        let mut b = InsightBridge::new(10, 0.3).unwrap();
        let mut last = None;
        for _ in 0..10 {
            last = Some(b.push(&pred(AnomalyClass::Normal)));
        }
        let i = last.unwrap();
        assert_eq!(i.window_anomaly_rate, 0.0);
        assert!(!i.degraded);
    }

    #[test]
    fn four_of_ten_anomalous_is_degraded() {
        let mut b = InsightBridge::new(10, 0.3).unwrap();
        for _ in 0..20 {
            b.push(&pred(AnomalyClass::NoNose));
        }
        for _ in 0..6 {
            b.push(&pred(AnomalyClass::Normal));
        }
        let mut i = None;
        for _ in 0..4 {
            i = Some(b.push(&pred(AnomalyClass::NoBody1)));
        }
        let i = i.unwrap();
        assert_eq!(i.window_anomaly_rate, 0.4);
        assert!(i.degraded);
        assert_eq!(i.window, 10);
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(InsightBridge::new(0, 0.3).is_err());
    }

    #[test]
    fn camera_values_parse() {
        assert_eq!(parse_camera(Some("1.5, -2,3e-1"), None), Some(vec![1.5, -2.0, 0.3]));
        assert_eq!(parse_camera(None, Some(4.0)), Some(vec![4.0]));
        assert_eq!(parse_camera(Some("1,x"), None), None);
    }
}
