use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{ClassMetrics, WeightedMetrics};
use super::model::{
    evaluate_detection, evaluate_variant, normal_windows, train_autoencoder, train_fusion_from,
    PredictxConfig,
};
use super::{AnomalyClass, AssemblySample, FusionVariant, PredictxError};
use crate::ontology::ProcessOntology;
use crate::Real;

/// Label of the extra row: fusion evaluated with zeroed image features.
pub const ZERO_IMAGE_ROW: &str = "P1 (TS + zero image)";

const TRAIN_FRACTION: Real = 0.8;

/// Shuffled 80/20 train/test split of `0..n`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as Real) * TRAIN_FRACTION).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    pub variant: FusionVariant,
    /// True when scored as normal-vs-anomaly detection only.
    pub detection_only: bool,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub accuracy: Real,
    pub support: usize,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl VariantRow {
    fn from_metrics<L: Ord + Copy + ToString>(
        name: String,
        variant: FusionVariant,
        detection_only: bool,
        m: &WeightedMetrics<L>,
        classes: &[L],
    ) -> Self {
        Self {
            name,
            variant,
            detection_only,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            accuracy: m.accuracy,
            support: m.support,
            per_class: classes
                .iter()
                .map(|c| (c.to_string(), m.per_class.get(c).copied().unwrap_or_default()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<VariantRow>,
}

impl AblationReport {
    pub fn row(&self, variant: FusionVariant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant && r.name == variant.to_string())
    }

    pub fn accuracy(&self, variant: FusionVariant) -> Option<Real> {
        self.row(variant).map(|r| r.accuracy)
    }

    /// Tab-separated table: one row per variant, then per-class F1.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variant\tprecision\trecall\tf1\taccuracy\tsupport");
        for r in &self.rows {
            let tag = if r.detection_only { " [detection]" } else { "" };
            let _ = writeln!(
                out,
                "{}{tag}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                r.name, r.precision, r.recall, r.f1, r.accuracy, r.support
            );
        }
        out.push('\n');
        let classes: Vec<&str> = AnomalyClass::ALL.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "per-class f1\t{}", classes.join("\t"));
        for r in self.rows.iter().filter(|r| !r.detection_only) {
            let cells: Vec<String> = classes
                .iter()
                .map(|c| format!("{:.4}", r.per_class.get(*c).map_or(0.0, |m| m.f1)))
                .collect();
            let _ = writeln!(out, "{}\t{}", r.name, cells.join("\t"));
        }
        out
    }
}

/// Trains and scores all five variants on one shared split and seed.
///
/// The pretrained autoencoder and image classifier are shared by every
/// variant that uses them, so variants differ only in the fusion stage. B2
/// is scored as detection.
pub fn run_ablation(
    dataset: &[AssemblySample],
    onto: &ProcessOntology,
    config: &PredictxConfig,
) -> Result<AblationReport, PredictxError> {
    if dataset.len() < 2 {
        return Err(PredictxError::Input("ablation needs at least two samples".into()));
    }
    let (train_idx, test_idx) = split_indices(dataset.len(), config.seed);
    let train: Vec<&AssemblySample> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let test: Vec<&AssemblySample> = test_idx.iter().map(|&i| &dataset[i]).collect();
    let ae = train_autoencoder(&normal_windows(&train)?, config)?;
    let b2 = train_fusion_from(FusionVariant::B2, &train, onto, config, None, None)?;
    let image = b2.image.clone();

    let mut rows = Vec::new();
    let mut p1_zero = None;
    for variant in FusionVariant::ALL {
        if variant == FusionVariant::B2 {
            let m = evaluate_detection(&b2, &test)?;
            rows.push(VariantRow::from_metrics(
                variant.to_string(),
                variant,
                true,
                &m,
                &[super::Detection::Normal, super::Detection::Anomaly],
            ));
            continue;
        }
        let model = train_fusion_from(variant, &train, onto, config, Some(&ae), image.as_ref())?;
        let m = evaluate_variant(&model, &test, false)?;
        log::info!("{variant}: accuracy {:.4} f1 {:.4}", m.accuracy, m.f1);
        rows.push(VariantRow::from_metrics(variant.to_string(), variant, false, &m, &AnomalyClass::ALL));
        if variant == FusionVariant::P1 {
            p1_zero = Some(evaluate_variant(&model, &test, true)?);
        }
    }
    if let Some(m) = p1_zero {
        rows.push(VariantRow::from_metrics(
            ZERO_IMAGE_ROW.to_string(),
            FusionVariant::P1,
            false,
            &m,
            &AnomalyClass::ALL,
        ));
    }
    Ok(AblationReport {
        seed: config.seed,
        train_size: train.len(),
        test_size: test.len(),
        rows,
    })
}
