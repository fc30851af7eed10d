use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::foresight::{ForecastSeries, StructuredFeatures, ANOMALY_RATE_FEATURE, DEFAULT_PERIOD_MS};
use crate::Real;

pub const RAW_MATERIAL_FEATURE: &str = "raw_material";
pub const SOLIDS_RATIO_FEATURE: &str = "is_ts_ratio";
const START_MS: i64 = 1_700_000_000_000;

/// Production series per product:
/// `target(t) = a·raw_material(t) + b·target(t−1) + N(0, noise_sigma)`,
/// floored at zero. Raw material sits on a level that jumps every
/// `shift_every` periods on average, plus per-period jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastGenConfig {
    pub seed: u64,
    pub products: Vec<String>,
    pub periods: usize,
    pub a: Real,
    pub b: Real,
    pub noise_sigma: Real,
    /// Raw-material levels are drawn from `[lo, hi)`.
    pub raw_level: (Real, Real),
    pub raw_jitter: Real,
    /// Mean number of periods between level shifts.
    pub shift_every: Real,
}

impl Default for ForecastGenConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            products: ["BRD", "BRN", "FMX"].map(String::from).to_vec(),
            periods: 480,
            a: 0.5,
            b: 0.8,
            noise_sigma: 1.0,
            raw_level: (20.0, 60.0),
            raw_jitter: 6.0,
            shift_every: 24.0,
        }
    }
}

impl ForecastGenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let err = |m: &str| Err(DatagenError::Config(m.into()));
        if self.products.is_empty() {
            return err("at least one product is required");
        }
        if self.periods < 2 {
            return err("periods must be at least 2");
        }
        if !(self.a.is_finite() && self.b.is_finite()) || !(0.0..1.0).contains(&self.b) {
            return err("a must be finite and b in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !(self.raw_jitter >= 0.0) {
            return err("noise levels must be non-negative");
        }
        let (lo, hi) = self.raw_level;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return err("raw_level must satisfy 0 <= lo < hi");
        }
        if !(self.shift_every >= 1.0) {
            return err("shift_every must be at least 1");
        }
        Ok(())
    }
}

/// Generator constants, emitted alongside the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetadata {
    pub seed: u64,
    pub a: Real,
    pub b: Real,
    pub noise_sigma: Real,
    pub driver_feature: String,
    pub features: Vec<String>,
    pub products: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedProduct {
    pub series: ForecastSeries,
    pub features: StructuredFeatures,
}

pub fn gen_forecast(config: &ForecastGenConfig) -> Result<(Vec<GeneratedProduct>, ForecastMetadata), DatagenError> {
    config.validate()?;
    let names: Vec<String> = [RAW_MATERIAL_FEATURE, SOLIDS_RATIO_FEATURE, ANOMALY_RATE_FEATURE]
        .map(String::from)
        .to_vec();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = config.periods;
    let mut products = Vec::with_capacity(config.products.len());
    for (p, id) in config.products.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(p as u64));
        let (lo, hi) = config.raw_level;
        let mut level: Real = rng.random_range(lo..hi);
        let mut ratio_level: Real = rng.random_range(0.25..0.35);
        let mut degraded = 0usize;
        let mut rows = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 && rng.random::<Real>() < 1.0 / config.shift_every {
                level = rng.random_range(lo..hi);
                ratio_level = rng.random_range(0.25..0.35);
            }
            let raw = (level + config.raw_jitter * std_normal.sample(&mut rng)).max(0.0);
            let ratio = ratio_level + 0.01 * std_normal.sample(&mut rng);
            // Sparse bursts of degraded operation; context only.
            if degraded == 0 && rng.random::<Real>() < 0.02 {
                degraded = rng.random_range(3..10);
            }
            let rate = if degraded > 0 {
                degraded -= 1;
                rng.random_range(0.3..0.8)
            } else {
                rng.random_range(0.0..0.1)
            };
            let prev = match values.last() {
                Some(&v) => v,
                None => config.a * raw / (1.0 - config.b),
            };
            let noise = config.noise_sigma * std_normal.sample(&mut rng);
            values.push((config.a * raw + config.b * prev + noise).max(0.0));
            rows.push(vec![raw, ratio, rate]);
        }
        products.push(GeneratedProduct {
            series: ForecastSeries {
                product_id: id.clone(),
                values,
                period_ms: DEFAULT_PERIOD_MS,
                timestamps: (0..n as i64).map(|t| START_MS + t * DEFAULT_PERIOD_MS).collect(),
            },
            features: StructuredFeatures {
                names: names.clone(),
                rows,
            },
        });
    }
    let meta = ForecastMetadata {
        seed: config.seed,
        a: config.a,
        b: config.b,
        noise_sigma: config.noise_sigma,
        driver_feature: RAW_MATERIAL_FEATURE.into(),
        features: names,
        products: config.products.clone(),
    };
    Ok((products, meta))
}
