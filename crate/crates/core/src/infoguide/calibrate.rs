//! Grid calibration of the chunk-selection and refusal thresholds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{retrieve, select_relevant_chunks, Chunk, InfoIndex, KeywordSet};
use crate::Real;

/// Thresholds 0.05, 0.10, ..., 0.95.
pub const GRID: [Real; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `(threshold, score)` over [`GRID`].
    pub curve: Vec<(Real, Real)>,
    /// Midpoint of the first maximal run of the curve, snapped to the grid.
    pub best: Real,
    pub best_score: Real,
}

fn plateau_midpoint(curve: Vec<(Real, Real)>) -> Calibration {
    let best_score = curve.iter().map(|c| c.1).fold(Real::NEG_INFINITY, Real::max);
    let first = curve.iter().position(|c| c.1 == best_score).unwrap_or(0);
    let len = curve[first..].iter().take_while(|c| c.1 == best_score).count();
    let best = curve[first + (len - 1) / 2].0;
    Calibration { curve, best, best_score }
}

/// F1 of chunk selection against `relevant` chunk ids at every grid value.
pub fn calibrate_chunk_threshold(chunks: &[Chunk], keywords: &KeywordSet, relevant: &BTreeSet<String>) -> Calibration {
    let curve = GRID
        .iter()
        .map(|&t| {
            let picked: BTreeSet<String> = select_relevant_chunks(chunks, keywords, t)
                .into_iter()
                .map(|(c, _)| c.chunk_id)
                .collect();
            let tp = picked.intersection(relevant).count() as Real;
            let f1 = if picked.is_empty() && relevant.is_empty() {
                1.0
            } else {
                2.0 * tp / (picked.len() + relevant.len()) as Real
            };
            (t, f1)
        })
        .collect();
    plateau_midpoint(curve)
}

/// Balanced accuracy of refusal at every grid value: the mean of the answer
/// rate on `in_domain` and the refusal rate on `out_of_domain`.
pub fn calibrate_refusal(
    index: &InfoIndex,
    in_domain: &[String],
    out_of_domain: &[String],
    k: usize,
    alpha: Real,
) -> Calibration {
    let best = |q: &String| retrieve(q, index, k, alpha).first().map_or(Real::NEG_INFINITY, |r| r.combined);
    let inside: Vec<Real> = in_domain.iter().map(best).collect();
    let outside: Vec<Real> = out_of_domain.iter().map(best).collect();
    let rate = |xs: &[Real], f: &dyn Fn(Real) -> bool| {
        if xs.is_empty() {
            1.0
        } else {
            xs.iter().filter(|x| f(**x)).count() as Real / xs.len() as Real
        }
    };
    let curve = GRID
        .iter()
        .map(|&t| (t, 0.5 * (rate(&inside, &|s| s >= t) + rate(&outside, &|s| s < t))))
        .collect();
    plateau_midpoint(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_midpoint_picks_center_of_first_max_run() {
        let curve = GRID.iter().enumerate().map(|(i, &t)| (t, if (3..=7).contains(&i) { 1.0 } else { 0.5 })).collect();
        let c = plateau_midpoint(curve);
        assert_eq!(c.best, GRID[5]);
        assert_eq!(c.best_score, 1.0);
    }
}
