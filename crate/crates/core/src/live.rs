//! Latest agent outputs, as read by live-status answers and the serving
//! layer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::foresight::ForecastResult;
use crate::predictx::{AnomalyClass, PredictionResult};
use crate::Real;

/// Anomaly summary over the most recent predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInsight {
    pub window_anomaly_rate: Real,
    pub recent_classes: BTreeMap<AnomalyClass, usize>,
    pub degraded: bool,
    /// Predictions currently in the window.
    pub window: usize,
    pub timestamp: i64,
}

impl AnomalyInsight {
    /// Insight over `classes`, oldest first. The rate is the anomalous share.
    pub fn from_classes(classes: &[AnomalyClass], threshold: Real, timestamp: i64) -> Self {
        let mut recent_classes = BTreeMap::new();
        for c in classes {
            *recent_classes.entry(*c).or_insert(0) += 1;
        }
        let anomalous = classes.iter().filter(|c| c.is_anomalous()).count();
        let rate = if classes.is_empty() {
            0.0
        } else {
            anomalous as Real / classes.len() as Real
        };
        Self {
            window_anomaly_rate: rate,
            recent_classes,
            degraded: rate > threshold,
            window: classes.len(),
            timestamp,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveState {
    pub latest_prediction: Option<PredictionResult>,
    pub latest_forecast: Option<ForecastResult>,
    pub latest_insight: Option<AnomalyInsight>,
    pub updated_at: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_counts_anomalous_share() {
        let mut classes = vec![AnomalyClass::Normal; 6];
        classes.extend([AnomalyClass::NoNose; 4]);
        let i = AnomalyInsight::from_classes(&classes, 0.3, 0);
        assert_eq!(i.window_anomaly_rate, 0.4);
        assert!(i.degraded);
        assert_eq!(i.recent_classes[&AnomalyClass::NoNose], 4);
        let calm = AnomalyInsight::from_classes(&[AnomalyClass::Normal; 10], 0.3, 0);
        assert_eq!(calm.window_anomaly_rate, 0.0);
        assert!(!calm.degraded);
    }
}
