//! Shared read side of the runtime: the live-state cell, recent
//! predictions, latest forecasts, the active facility and the event feed.
//! Written by the pipeline sink only; read by the server.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use smartpilot_core::foresight::ForecastResult;
use smartpilot_core::infoguide::InfoIndex;
use smartpilot_core::live::{AnomalyInsight, LiveState};
use smartpilot_core::ontology::ProcessOntology;
use smartpilot_core::predictx::PredictionResult;

use crate::bus::Payload;

pub const DEFAULT_RECENT: usize = 1000;
const EVENT_BUFFER: usize = 1024;

/// Single-writer, multi-reader snapshot cell. Writers build a new state and
/// swap it in whole, so readers never see a half-applied update.
#[derive(Default)]
pub struct LiveCell {
    inner: RwLock<Arc<LiveState>>,
}

impl LiveCell {
    pub fn load(&self) -> Arc<LiveState> {
        self.inner.read().expect("live lock").clone()
    }

    /// Applies `f` to a copy and swaps it in. `updated_at` never decreases.
    pub fn update(&self, at: i64, f: impl FnOnce(&mut LiveState)) {
        let mut guard = self.inner.write().expect("live lock");
        let mut next = LiveState::clone(&guard);
        f(&mut next);
        next.updated_at = next.updated_at.max(at);
        *guard = Arc::new(next);
    }
}

/// Event pushed to stream clients as `{kind, payload}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum LiveEvent {
    Prediction(PredictionResult),
    Forecast(ForecastResult),
    Insight(AnomalyInsight),
}

/// Manuals index and ontology in use.
#[derive(Debug)]
pub struct Facility {
    pub name: String,
    pub ontology: Arc<ProcessOntology>,
    pub index: Arc<InfoIndex>,
    pub manuals: usize,
}

pub struct Hub {
    pub live: LiveCell,
    recent: RwLock<VecDeque<PredictionResult>>,
    recent_capacity: usize,
    forecasts: RwLock<BTreeMap<String, ForecastResult>>,
    facility: RwLock<Arc<Facility>>,
    events: broadcast::Sender<LiveEvent>,
}

impl Hub {
    pub fn new(facility: Facility, recent_capacity: usize) -> Self {
        Self {
            live: LiveCell::default(),
            recent: RwLock::default(),
            recent_capacity: recent_capacity.max(1),
            forecasts: RwLock::default(),
            facility: RwLock::new(Arc::new(facility)),
            events: broadcast::channel(EVENT_BUFFER).0,
        }
    }

    pub fn facility(&self) -> Arc<Facility> {
        self.facility.read().expect("facility lock").clone()
    }

    pub fn set_facility(&self, f: Facility) {
        *self.facility.write().expect("facility lock") = Arc::new(f);
    }

    pub fn subscribe_events(&self) -> broadcast::Receiver<LiveEvent> {
        self.events.subscribe()
    }

    /// Last `n` predictions, oldest first.
    pub fn recent(&self, n: usize) -> Vec<PredictionResult> {
        let r = self.recent.read().expect("recent lock");
        r.iter().skip(r.len().saturating_sub(n)).cloned().collect()
    }

    pub fn prediction(&self, id: u64) -> Option<PredictionResult> {
        self.recent.read().expect("recent lock").iter().rev().find(|p| p.id == id).cloned()
    }

    pub fn forecast(&self, product: &str) -> Option<ForecastResult> {
        self.forecasts.read().expect("forecast lock").get(product).cloned()
    }

    pub fn forecasts(&self) -> Vec<ForecastResult> {
        self.forecasts.read().expect("forecast lock").values().cloned().collect()
    }

    /// Records one agent output. Frames are ignored.
    pub fn apply(&self, payload: &Payload) {
        let event = match payload {
            Payload::Frame(_) => return,
            Payload::Prediction(p) => {
                {
                    let mut r = self.recent.write().expect("recent lock");
                    if r.len() == self.recent_capacity {
                        r.pop_front();
                    }
                    r.push_back(p.clone());
                }
                self.live.update(p.timestamp, |s| s.latest_prediction = Some(p.clone()));
                LiveEvent::Prediction(p.clone())
            }
            Payload::Insight(i) => {
                self.live.update(i.timestamp, |s| s.latest_insight = Some(i.clone()));
                LiveEvent::Insight(i.clone())
            }
            Payload::Forecast(f) => {
                self.forecasts
                    .write()
                    .expect("forecast lock")
                    .insert(f.product_id.clone(), f.clone());
                self.live.update(0, |s| s.latest_forecast = Some(f.clone()));
                LiveEvent::Forecast(f.clone())
            }
        };
        // No receivers is not an error.
        let _ = self.events.send(event);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smartpilot_core::ontology::{CycleState, VariableRange};
    use smartpilot_core::predictx::AnomalyClass;

    fn hub(cap: usize) -> Hub {
        let state = CycleState {
            state_id: "S".into(),
            description: String::new(),
            robot_functions: Default::default(),
            variable_ranges: [("x".to_string(), VariableRange { lo: 0.0, hi: 1.0, unit: "u".into() })].into_iter().collect(),
        };
        let onto = ProcessOntology::new("1", "f", vec![state]).unwrap();
        Hub::new(
            Facility {
                name: "f".into(),
                ontology: Arc::new(onto),
                index: Arc::new(InfoIndex::empty(8)),
                manuals: 0,
            },
            cap,
        )
    }

    fn prediction(id: u64, ts: i64) -> PredictionResult {
        let mut probs = vec![0.0; AnomalyClass::COUNT];
        probs[1] = 1.0;
        let mut p = PredictionResult::from_probs(vec![0.0], probs);
        p.id = id;
        p.timestamp = ts;
        p
    }

    #[test]
    fn recent_keeps_the_newest() {
        let h = hub(3);
        for i in 1..=5 {
            h.apply(&Payload::Prediction(prediction(i, i as i64 * 10)));
        }
        let ids: Vec<u64> = h.recent(10).iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
        assert_eq!(h.recent(1)[0].id, 5);
        assert!(h.prediction(1).is_none());
        assert_eq!(h.live.load().updated_at, 50);
    }

    #[test]
    fn updated_at_is_monotone() {
        let h = hub(3);
        h.apply(&Payload::Prediction(prediction(1, 100)));
        h.apply(&Payload::Prediction(prediction(2, 40)));
        let s = h.live.load();
        assert_eq!(s.updated_at, 100);
        assert_eq!(s.latest_prediction.as_ref().unwrap().id, 2);
    }
}
