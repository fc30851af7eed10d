use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnomalyClass, PredictxError};
use crate::Real;

/// Binary label used when a model is scored only as a detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detection {
    Normal,
    Anomaly,
}

impl From<AnomalyClass> for Detection {
    fn from(c: AnomalyClass) -> Self {
        if c.is_anomalous() {
            Detection::Anomaly
        } else {
            Detection::Normal
        }
    }
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "L: Serialize + Ord",
    deserialize = "L: Deserialize<'de> + Ord"
))]
pub struct WeightedMetrics<L = AnomalyClass> {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub accuracy: Real,
    pub support: usize,
    /// Every class seen in either labels or predictions.
    pub per_class: BTreeMap<L, ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> Real {
    if den == 0 {
        0.0
    } else {
        num as Real / den as Real
    }
}

/// Support-weighted precision, recall and F1 plus exact-match accuracy.
/// A ratio with a zero denominator counts as 0.
pub fn compute_weighted_metrics<L: Ord + Copy>(
    predictions: &[L],
    labels: &[L],
) -> Result<WeightedMetrics<L>, PredictxError> {
    if predictions.len() != labels.len() {
        return Err(PredictxError::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(PredictxError::Input("no samples to score".into()));
    }
    // (true positives, predicted count, actual count)
    let mut counts: BTreeMap<L, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        counts.entry(p).or_default().1 += 1;
        let e = counts.entry(l).or_default();
        e.2 += 1;
        if p == l {
            e.0 += 1;
            correct += 1;
        }
    }
    let n = labels.len();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    let per_class = counts
        .into_iter()
        .map(|(class, (tp, predicted, actual))| {
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            let w = actual as Real / n as Real;
            wp += w * precision;
            wr += w * recall;
            wf += w * f1;
            (
                class,
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: actual,
                },
            )
        })
        .collect();
    Ok(WeightedMetrics {
        precision: wp,
        recall: wr,
        f1: wf,
        accuracy: ratio(correct, n),
        support: n,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use AnomalyClass::*;

    #[test]
    fn perfect_classifier_scores_one() {
        let l = [Normal, NoNose, NoBody1, NoNose];
        let m = compute_weighted_metrics(&l, &l).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_normal_against_all_nonose() {
        let m = compute_weighted_metrics(&[Normal; 5], &[NoNose; 5]).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.per_class[&Normal].support, 0);
    }

    #[test]
    fn length_mismatch_is_an_input_error() {
        assert!(matches!(
            compute_weighted_metrics(&[Normal], &[Normal, NoNose]),
            Err(PredictxError::Input(_))
        ));
    }

    #[test]
    fn detection_metrics() {
        let p = [Detection::Anomaly, Detection::Normal];
        let l = [Detection::Anomaly, Detection::Anomaly];
        let m = compute_weighted_metrics(&p, &l).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[&Detection::Anomaly].recall, 0.5);
    }
}
