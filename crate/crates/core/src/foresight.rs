//! Production forecasting: a two-layer LSTM over the recent target history
//! whose final state is optionally joined with the forecast period's
//! structured features before the dense head.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kernel::{
    fit, load_checkpoint, save_checkpoint, Activation, Flow, KernelError, LayerSpec, ParamSet,
    TrainConfig, Var,
};
use crate::{Graph, ModelParams, Real, Tensor};

const CHECKPOINT_KIND: &str = "foresight-forecaster";
pub const DEFAULT_PERIOD_MS: i64 = 3_600_000;
/// Structured feature fed from the anomaly insight bridge.
pub const ANOMALY_RATE_FEATURE: &str = "anomaly_rate";

#[derive(Debug, thiserror::Error)]
pub enum ForesightError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("forecast file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub product_id: String,
    pub values: Vec<Real>,
    pub period_ms: i64,
    pub timestamps: Vec<i64>,
}

impl ForecastSeries {
    pub fn validate(&self) -> Result<(), ForesightError> {
        if self.values.len() != self.timestamps.len() {
            return Err(ForesightError::Input(format!(
                "{} values for {} timestamps",
                self.values.len(),
                self.timestamps.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(ForesightError::Input(format!("production values must be finite and non-negative, got {v}")));
        }
        if self.timestamps.windows(2).any(|w| w[1] - w[0] != self.period_ms) || self.period_ms <= 0 {
            return Err(ForesightError::Input("timestamps must increase by exactly one period".into()));
        }
        Ok(())
    }

    /// Periods `range`, keeping product and period.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            product_id: self.product_id.clone(),
            values: self.values[range.clone()].to_vec(),
            period_ms: self.period_ms,
            timestamps: self.timestamps[range].to_vec(),
        }
    }
}

/// Per-period feature rows, aligned with a [`ForecastSeries`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredFeatures {
    pub names: Vec<String>,
    pub rows: Vec<Vec<Real>>,
}

impl StructuredFeatures {
    pub fn validate(&self, periods: usize) -> Result<(), ForesightError> {
        if self.rows.len() != periods {
            return Err(ForesightError::Input(format!(
                "{} feature rows for {periods} periods",
                self.rows.len()
            )));
        }
        if self.rows.iter().any(|r| r.len() != self.names.len() || r.iter().any(|v| !v.is_finite())) {
            return Err(ForesightError::Input("feature rows must be finite and match the schema".into()));
        }
        Ok(())
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            names: self.names.clone(),
            rows: self.rows[range].to_vec(),
        }
    }

    /// Index of a named feature.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForesightConfig {
    pub seed: u64,
    pub lookback: usize,
    pub lstm_units: (usize, usize),
    pub dense_units: usize,
    pub train: TrainConfig,
}

impl Default for ForesightConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            lookback: 24,
            lstm_units: (64, 32),
            dense_units: 32,
            train: TrainConfig {
                learning_rate: 5e-3,
                epochs: 10,
                batch_size: 8,
                ..TrainConfig::default()
            },
        }
    }
}

/// Min-max scaling to `[0, 1]`; a constant column maps to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Real,
    pub max: Real,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = Real>) -> Self {
        let (mut min, mut max) = (Real::INFINITY, Real::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            (min, max) = (0.0, 0.0);
        }
        Self { min, max }
    }

    fn span(&self) -> Real {
        if self.max > self.min {
            self.max - self.min
        } else {
            1.0
        }
    }

    pub fn apply(&self, v: Real) -> Real {
        (v - self.min) / self.span()
    }

    pub fn invert(&self, v: Real) -> Real {
        v * self.span() + self.min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub kil: bool,
    pub lookback: usize,
    pub feature_names: Vec<String>,
    pub recurrent: ModelParams,
    pub head: ModelParams,
    pub target_scale: MinMax,
    pub feature_scales: Vec<MinMax>,
}

impl ParamSet<Real> for ForecastModel {
    fn nets(&self) -> Vec<&ModelParams> {
        vec![&self.recurrent, &self.head]
    }

    fn nets_mut(&mut self) -> Vec<&mut ModelParams> {
        vec![&mut self.recurrent, &mut self.head]
    }
}

/// One forecast, in production units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub value: Real,
    /// Model output before clamping.
    pub raw: Real,
    /// Set when a negative output was clamped to zero.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub product_id: String,
    pub forecasts: Vec<Real>,
    pub actuals: Vec<Real>,
    pub mae: Real,
    pub rmse: Real,
    #[serde(default)]
    pub clamped: usize,
}

impl ForecastResult {
    pub fn from_pairs(product_id: impl Into<String>, forecasts: Vec<Real>, actuals: Vec<Real>) -> Result<Self, ForesightError> {
        if forecasts.len() != actuals.len() {
            return Err(ForesightError::Input("forecasts and actuals differ in length".into()));
        }
        if forecasts.is_empty() {
            return Err(ForesightError::Input("nothing to evaluate".into()));
        }
        let n = forecasts.len() as Real;
        let (mut abs, mut sq) = (0.0, 0.0);
        for (f, a) in forecasts.iter().zip(&actuals) {
            let e = f - a;
            abs += e.abs();
            sq += e * e;
        }
        Ok(Self {
            product_id: product_id.into(),
            forecasts,
            actuals,
            mae: abs / n,
            rmse: (sq / n).sqrt(),
            clamped: 0,
        })
    }

    pub fn aggregate(&self) -> ForecastAggregate {
        let mean = |v: &[Real]| v.iter().sum::<Real>() / v.len().max(1) as Real;
        ForecastAggregate {
            avg_forecast: mean(&self.forecasts),
            avg_actual: mean(&self.actuals),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastAggregate {
    pub avg_forecast: Real,
    pub avg_actual: Real,
}

impl ForecastAggregate {
    pub fn bias(&self) -> Real {
        self.avg_forecast - self.avg_actual
    }
}

/// Reduction of absolute average bias, in percent:
/// `(|e_base| - |e_kil|) / |e_base| * 100` with `e = avg_forecast - avg_actual`.
/// `None` when the baseline has no bias.
pub fn improvement(base: &ForecastAggregate, kil: &ForecastAggregate) -> Option<Real> {
    let eb = base.bias().abs();
    if eb == 0.0 {
        return None;
    }
    Some((eb - kil.bias().abs()) / eb * 100.0)
}

fn check_inputs(series: &ForecastSeries, feats: &StructuredFeatures, lookback: usize) -> Result<(), ForesightError> {
    series.validate()?;
    feats.validate(series.values.len())?;
    if series.values.len() < lookback + 1 {
        return Err(ForesightError::Input(format!(
            "series '{}' has {} periods; at least {} (lookback + 1) are required",
            series.product_id,
            series.values.len(),
            lookback + 1
        )));
    }
    Ok(())
}

impl ForecastModel {
    fn init(kil: bool, feats: &StructuredFeatures, series: &ForecastSeries, cfg: &ForesightConfig) -> Result<Self, ForesightError> {
        let (h1, h2) = cfg.lstm_units;
        let recurrent = ModelParams::new(vec![LayerSpec::lstm(1, h1, true), LayerSpec::lstm(h1, h2, false)], cfg.seed)?;
        let f = if kil { feats.names.len() } else { 0 };
        let head = ModelParams::new(
            vec![
                LayerSpec::dense(h2 + f, cfg.dense_units, Activation::Relu),
                LayerSpec::dense(cfg.dense_units, 1, Activation::Identity),
            ],
            cfg.seed.wrapping_add(1),
        )?;
        let feature_scales = (0..feats.names.len())
            .map(|c| MinMax::fit(feats.rows.iter().map(|r| r[c])))
            .collect();
        Ok(Self {
            kil,
            lookback: cfg.lookback,
            feature_names: feats.names.clone(),
            recurrent,
            head,
            target_scale: MinMax::fit(series.values.iter().copied()),
            feature_scales,
        })
    }

    pub fn param_count(&self) -> usize {
        self.recurrent.param_count() + self.head.param_count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForesightError> {
        Ok(save_checkpoint(path, CHECKPOINT_KIND, self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForesightError> {
        Ok(load_checkpoint(path, CHECKPOINT_KIND)?)
    }

    fn feature_row(&self, row: &[Real], out: &mut Vec<Real>) {
        out.extend(row.iter().zip(&self.feature_scales).map(|(v, s)| s.apply(*v)));
    }

    /// Normalized (windows, features) rows for targets at `ends`.
    fn inputs(&self, values: &[Real], feats: &[Vec<Real>], ends: &[usize]) -> (Vec<Tensor>, Tensor) {
        let l = self.lookback;
        let b = ends.len();
        let steps = (0..l)
            .map(|k| {
                let col = ends.iter().map(|&t| self.target_scale.apply(values[t - l + k])).collect();
                Tensor::matrix(b, 1, col).expect("step column")
            })
            .collect();
        let f = self.feature_names.len();
        let mut rows = Vec::with_capacity(b * f);
        for &t in ends {
            self.feature_row(&feats[t], &mut rows);
        }
        (steps, Tensor::matrix(b, f, rows).expect("feature rows"))
    }

    fn forward(&self, g: &mut Graph, steps: Vec<Tensor>, feats: Tensor) -> Result<Var, ForesightError> {
        let bound = self.bind_all(g);
        let seq = steps.into_iter().map(|t| g.constant(t)).collect();
        let h = self.recurrent.forward_graph(g, &bound[0], Flow::Seq(seq), false)?.single()?;
        let x = if self.kil {
            let f = g.constant(feats);
            g.concat(&[h, f])?
        } else {
            h
        };
        Ok(self.head.forward_graph(g, &bound[1], Flow::Single(x), false)?.single()?)
    }

    fn predict_ends(&self, values: &[Real], feats: &[Vec<Real>], ends: &[usize]) -> Result<Vec<Forecast>, ForesightError> {
        let mut out = Vec::with_capacity(ends.len());
        for chunk in ends.chunks(256) {
            let (steps, f) = self.inputs(values, feats, chunk);
            let mut g = Graph::new();
            let y = self.forward(&mut g, steps, f)?;
            for &v in g.value(y).values() {
                let raw = self.target_scale.invert(v);
                out.push(Forecast {
                    value: raw.max(0.0),
                    raw,
                    clamped: raw < 0.0,
                });
            }
        }
        Ok(out)
    }
}

/// Trains a forecaster on every window of `series`. Zero epochs return the
/// initialization.
pub fn train_forecaster(
    series: &ForecastSeries,
    feats: &StructuredFeatures,
    kil: bool,
    config: &ForesightConfig,
) -> Result<ForecastModel, ForesightError> {
    check_inputs(series, feats, config.lookback)?;
    let mut model = ForecastModel::init(kil, feats, series, config)?;
    if config.train.epochs == 0 {
        return Ok(model);
    }
    let l = config.lookback;
    let ends: Vec<usize> = (l..series.values.len()).collect();
    let targets: Vec<Real> = ends.iter().map(|&t| model.target_scale.apply(series.values[t])).collect();
    let arch = model.clone();
    fit(&mut model, ends.len(), &config.train, config.seed, |g, bound, idx| {
        let batch: Vec<usize> = idx.iter().map(|&i| ends[i]).collect();
        let (steps, f) = arch.inputs(&series.values, &feats.rows, &batch);
        let seq = steps.into_iter().map(|t| g.constant(t)).collect();
        let h = arch.recurrent.forward_graph(g, &bound[0], Flow::Seq(seq), false)?.single()?;
        let x = if arch.kil {
            let f = g.constant(f);
            g.concat(&[h, f])?
        } else {
            h
        };
        let y = arch.head.forward_graph(g, &bound[1], Flow::Single(x), false)?.single()?;
        let t = g.constant(Tensor::matrix(idx.len(), 1, idx.iter().map(|&i| targets[i]).collect())?);
        crate::kernel::mse(g, y, t)
    })?;
    Ok(model)
}

/// Forecast for the period after `window`, given that period's features.
pub fn forecast_next(model: &ForecastModel, window: &[Real], feats: &[Real]) -> Result<Forecast, ForesightError> {
    if window.len() != model.lookback {
        return Err(ForesightError::Input(format!(
            "window has {} periods, model expects {}",
            window.len(),
            model.lookback
        )));
    }
    if feats.len() != model.feature_names.len() {
        return Err(ForesightError::Input(format!(
            "{} feature values, model expects {}",
            feats.len(),
            model.feature_names.len()
        )));
    }
    let mut values = window.to_vec();
    values.push(0.0);
    let rows = vec![feats.to_vec(); values.len()];
    Ok(model.predict_ends(&values, &rows, &[model.lookback])?[0])
}

/// Forecasts every period of `series` after its first `lookback` periods,
/// which serve as context only.
pub fn evaluate(
    model: &ForecastModel,
    series: &ForecastSeries,
    feats: &StructuredFeatures,
) -> Result<ForecastResult, ForesightError> {
    series.validate()?;
    feats.validate(series.values.len())?;
    if feats.names != model.feature_names {
        return Err(ForesightError::Input("feature schema differs from training".into()));
    }
    let l = model.lookback;
    if series.values.len() <= l {
        return Err(ForesightError::Input(format!(
            "test series needs more than {l} periods (lookback context plus at least one target)"
        )));
    }
    let ends: Vec<usize> = (l..series.values.len()).collect();
    let f = model.predict_ends(&series.values, &feats.rows, &ends)?;
    let mut r = ForecastResult::from_pairs(
        series.product_id.clone(),
        f.iter().map(|x| x.value).collect(),
        ends.iter().map(|&t| series.values[t]).collect(),
    )?;
    r.clamped = f.iter().filter(|x| x.clamped).count();
    Ok(r)
}

/// Chronological split: the test part keeps `lookback` periods of context
/// from the end of the training part.
pub fn chronological_split(
    series: &ForecastSeries,
    feats: &StructuredFeatures,
    train_fraction: Real,
    lookback: usize,
) -> ((ForecastSeries, StructuredFeatures), (ForecastSeries, StructuredFeatures)) {
    let n = series.values.len();
    let cut = ((n as Real) * train_fraction).round() as usize;
    let start = cut.saturating_sub(lookback);
    (
        (series.slice(0..cut), feats.slice(0..cut)),
        (series.slice(start..n), feats.slice(start..n)),
    )
}

/// One product's baseline-vs-infused comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastComparison {
    pub product_id: String,
    pub base: ForecastResult,
    pub kil: ForecastResult,
    pub improvement: Option<Real>,
}

/// Tab-separated report with MAE/RMSE and average bias per model.
pub fn comparison_table(rows: &[ForecastComparison]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "product\tmae_lstm\trmse_lstm\tmae_kil\trmse_kil\tavg_actual\tavg_forecast_lstm\tavg_forecast_kil\timprovement_pct"
    );
    for r in rows {
        let (b, k) = (r.base.aggregate(), r.kil.aggregate());
        let imp = r.improvement.map_or("undefined".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{imp}",
            r.product_id, r.base.mae, r.base.rmse, r.kil.mae, r.kil.rmse, b.avg_actual, b.avg_forecast, k.avg_forecast
        );
    }
    out
}

/// Writes series as `timestamp, product_id, target, <features>` rows.
pub fn write_forecast_file(
    path: impl AsRef<Path>,
    products: &[(ForecastSeries, StructuredFeatures)],
) -> Result<(), ForesightError> {
    let names = products.first().map(|p| p.1.names.clone()).unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(out, "timestamp\tproduct_id\ttarget\t{}", names.join("\t"));
    for (s, f) in products {
        if f.names != names {
            return Err(ForesightError::Input("products differ in feature schema".into()));
        }
        for ((ts, v), row) in s.timestamps.iter().zip(&s.values).zip(&f.rows) {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{ts}\t{}\t{v:?}\t{}", s.product_id, cells.join("\t"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a file written by [`write_forecast_file`], grouping rows by product
/// in order of first appearance.
pub fn read_forecast_file(path: impl AsRef<Path>) -> Result<Vec<(ForecastSeries, StructuredFeatures)>, ForesightError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| ForesightError::Format("empty file".into()))?
        .split('\t')
        .collect();
    if header.len() < 3 || header[..3] != ["timestamp", "product_id", "target"] {
        return Err(ForesightError::Format("header must start with timestamp, product_id, target".into()));
    }
    let names: Vec<String> = header[3..].iter().map(|s| s.to_string()).collect();
    let mut order = Vec::new();
    let mut by_product: BTreeMap<String, (Vec<i64>, Vec<Real>, Vec<Vec<Real>>)> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != names.len() + 3 {
            return Err(ForesightError::Format(format!("line {no}: expected {} columns", names.len() + 3)));
        }
        let num = |s: &str| {
            s.parse::<Real>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ForesightError::Format(format!("line {no}: '{s}' is not a finite number")))
        };
        let ts = cols[0]
            .parse::<i64>()
            .map_err(|_| ForesightError::Format(format!("line {no}: bad timestamp")))?;
        let entry = by_product.entry(cols[1].to_string()).or_insert_with(|| {
            order.push(cols[1].to_string());
            Default::default()
        });
        entry.0.push(ts);
        entry.1.push(num(cols[2])?);
        entry.2.push(cols[3..].iter().map(|c| num(c)).collect::<Result<_, _>>()?);
    }
    order
        .into_iter()
        .map(|p| {
            let (timestamps, values, rows) = by_product.remove(&p).expect("product seen");
            let period_ms = if timestamps.len() > 1 { timestamps[1] - timestamps[0] } else { DEFAULT_PERIOD_MS };
            let s = ForecastSeries {
                product_id: p,
                values,
                period_ms,
                timestamps,
            };
            s.validate()?;
            Ok((s, StructuredFeatures { names: names.clone(), rows }))
        })
        .collect()
}
