use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_weighted_metrics, Detection, WeightedMetrics};
use super::{
    argmax, AnomalyClass, AssemblySample, FusionVariant, ImageFeatures, PredictionResult,
    PredictxError, SensorWindow,
};
use crate::kernel::{
    fit, load_checkpoint, save_checkpoint, wmse, Activation, BoundNet, Flow, LayerSpec,
    ParamSet, TrainConfig,
};
use crate::ontology::{range_penalty_graph, ProcessOntology};
use crate::{Graph, ModelParams, Real, Tensor};

const CHECKPOINT_KIND: &str = "predictx-fusion";
const INFERENCE_BATCH: usize = 256;

/// Hyperparameters of every predictx network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictxConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub autoencoder_hidden: usize,
    pub image_hidden: usize,
    pub head_hidden: usize,
    /// Autoencoder pretraining.
    pub pretrain: TrainConfig,
    /// Image-classifier pretraining.
    pub image_pretrain: TrainConfig,
    /// Folds used to produce the out-of-fold image logits the fusion head
    /// trains on. Below 2 the head sees in-sample logits.
    pub image_folds: usize,
    /// Joint fusion training. `loss_weights` may hold `penalty` (λ) and
    /// `classification` (β).
    pub fusion: TrainConfig,
    /// Per-channel WMSE weights; all ones when absent.
    pub channel_weights: Option<Vec<Real>>,
}

impl Default for PredictxConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            latent_dim: 12,
            autoencoder_hidden: 48,
            image_hidden: 32,
            head_hidden: 32,
            pretrain: TrainConfig {
                learning_rate: 3e-3,
                epochs: 80,
                ..TrainConfig::default()
            },
            image_pretrain: TrainConfig {
                learning_rate: 3e-3,
                epochs: 15,
                ..TrainConfig::default()
            },
            image_folds: 5,
            fusion: TrainConfig {
                learning_rate: 2e-3,
                epochs: 60,
                ..TrainConfig::default()
            },
            channel_weights: None,
        }
    }
}

impl PredictxConfig {
    pub fn penalty_weight(&self) -> Real {
        self.fusion.weight("penalty", 0.1)
    }

    pub fn classification_weight(&self) -> Real {
        self.fusion.weight("classification", 1.0)
    }

    fn channel_weights(&self, n: usize) -> Result<Vec<Real>, PredictxError> {
        match &self.channel_weights {
            None => Ok(vec![1.0; n]),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(PredictxError::Input(format!(
                "{} channel weights for {n} channels",
                w.len()
            ))),
        }
    }
}

/// Per-column standardization fit on training rows. Constant columns keep
/// scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [Real]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for (c, &x) in r.iter().enumerate() {
                sum[c] += x;
                sq[c] += x * x;
            }
        }
        let n = n.max(1) as Real;
        let mean: Vec<Real> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, row: &[Real], out: &mut Vec<Real>) {
        let d = self.dim();
        for (i, &x) in row.iter().enumerate() {
            let c = i % d;
            out.push((x - self.mean[c]) / self.std[c]);
        }
    }

    pub fn invert(&self, row: &[Real]) -> Vec<Real> {
        row.iter()
            .enumerate()
            .map(|(c, &x)| x * self.std[c] + self.mean[c])
            .collect()
    }
}

/// Encoder and decoder over a flattened window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: ModelParams,
    pub decoder: ModelParams,
    pub norm: Standardizer,
    pub window_len: usize,
    pub n_channels: usize,
}

impl ParamSet<Real> for Autoencoder {
    fn nets(&self) -> Vec<&ModelParams> {
        vec![&self.encoder, &self.decoder]
    }

    fn nets_mut(&mut self) -> Vec<&mut ModelParams> {
        vec![&mut self.encoder, &mut self.decoder]
    }
}

impl Autoencoder {
    fn init(window_len: usize, n_channels: usize, norm: Standardizer, cfg: &PredictxConfig) -> Result<Self, PredictxError> {
        let d = window_len * n_channels;
        let encoder = ModelParams::new(
            vec![
                LayerSpec::dense(d, cfg.autoencoder_hidden, Activation::Tanh),
                LayerSpec::dense(cfg.autoencoder_hidden, cfg.latent_dim, Activation::Tanh),
            ],
            cfg.seed,
        )?;
        let decoder = ModelParams::new(
            vec![
                LayerSpec::dense(cfg.latent_dim, cfg.autoencoder_hidden, Activation::Tanh),
                LayerSpec::dense(cfg.autoencoder_hidden, d, Activation::Identity),
            ],
            cfg.seed.wrapping_add(1),
        )?;
        Ok(Self {
            encoder,
            decoder,
            norm,
            window_len,
            n_channels,
        })
    }

    fn normalized_rows(&self, windows: &[&SensorWindow]) -> Tensor {
        let d = self.window_len * self.n_channels;
        let mut flat = Vec::with_capacity(d);
        let mut out = Vec::with_capacity(windows.len() * d);
        for w in windows {
            flat.clear();
            w.flatten_into(&mut flat);
            self.norm.apply_into(&flat, &mut out);
        }
        Tensor::matrix(windows.len(), d, out).expect("window rows")
    }

    /// Mean squared reconstruction error in raw units.
    pub fn reconstruction_mse(&self, windows: &[&SensorWindow]) -> Result<Real, PredictxError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in windows.chunks(INFERENCE_BATCH) {
            let x = self.normalized_rows(chunk);
            let z = self.encoder.forward(&x)?;
            let r = self.decoder.forward(&z)?;
            for (i, (a, b)) in r.values().iter().zip(x.values()).enumerate() {
                let s = self.norm.std[i % self.n_channels];
                total += ((a - b) * s).powi(2);
                count += 1;
            }
        }
        Ok(total / count.max(1) as Real)
    }
}

fn check_windows(windows: &[&SensorWindow]) -> Result<(usize, usize), PredictxError> {
    let first = windows
        .first()
        .ok_or_else(|| PredictxError::Input("no windows".into()))?;
    let (l, n) = (first.window_len(), first.n_channels());
    for w in windows {
        w.validate()?;
        if w.n_channels() != n {
            return Err(PredictxError::Input(format!(
                "inconsistent channel counts: {n} and {}",
                w.n_channels()
            )));
        }
        if w.window_len() != l {
            return Err(PredictxError::Input(format!(
                "inconsistent window lengths: {l} and {}",
                w.window_len()
            )));
        }
    }
    Ok((l, n))
}

/// Trains the time-series autoencoder on reconstruction MSE. Zero epochs
/// return the initialization.
pub fn train_autoencoder(
    windows: &[&SensorWindow],
    config: &PredictxConfig,
) -> Result<Autoencoder, PredictxError> {
    let (l, n) = check_windows(windows)?;
    let norm = Standardizer::fit(windows.iter().flat_map(|w| w.frames.iter().map(Vec::as_slice)), n);
    let mut ae = Autoencoder::init(l, n, norm, config)?;
    if config.pretrain.epochs == 0 {
        return Ok(ae);
    }
    let x = ae.normalized_rows(windows);
    let d = l * n;
    let arch = ae.clone();
    fit(&mut ae, windows.len(), &config.pretrain, config.seed, |g, bound, idx| {
        let xb = g.constant(select_rows(&x, idx, d));
        let z = arch.encoder.forward_graph(g, &bound[0], Flow::Single(xb), false)?.single()?;
        let r = arch.decoder.forward_graph(g, &bound[1], Flow::Single(z), false)?.single()?;
        crate::kernel::mse(g, r, xb)
    })?;
    Ok(ae)
}

fn select_rows(t: &Tensor, idx: &[usize], cols: usize) -> Tensor {
    let v = t.values();
    let mut out = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
    }
    Tensor::matrix(idx.len(), cols, out).expect("row selection")
}

/// Trained fusion model of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub variant: FusionVariant,
    pub window_len: usize,
    pub n_channels: usize,
    pub image_dim: usize,
    pub autoencoder: Option<Autoencoder>,
    pub image: Option<ModelParams>,
    pub image_norm: Standardizer,
    /// Absent for the image-only variant.
    pub head: Option<ModelParams>,
    pub target_norm: Standardizer,
}

struct Slots {
    encoder: Option<usize>,
    decoder: Option<usize>,
    image: Option<usize>,
    head: Option<usize>,
}

impl ParamSet<Real> for FusionModel {
    fn nets(&self) -> Vec<&ModelParams> {
        let mut v = Vec::new();
        if let Some(ae) = &self.autoencoder {
            v.push(&ae.encoder);
            v.push(&ae.decoder);
        }
        v.extend(self.image.iter());
        v.extend(self.head.iter());
        v
    }

    fn nets_mut(&mut self) -> Vec<&mut ModelParams> {
        let mut v = Vec::new();
        if let Some(ae) = &mut self.autoencoder {
            v.push(&mut ae.encoder);
            v.push(&mut ae.decoder);
        }
        v.extend(self.image.iter_mut());
        v.extend(self.head.iter_mut());
        v
    }
}

/// Image-branch input of one batch: normalized features, or logits
/// computed ahead of time.
#[derive(Clone)]
enum ImageIn {
    Features(Tensor),
    Logits(Tensor),
}

impl ImageIn {
    fn select(&self, idx: &[usize]) -> Self {
        match self {
            ImageIn::Features(t) => ImageIn::Features(select_rows(t, idx, t.cols())),
            ImageIn::Logits(t) => ImageIn::Logits(select_rows(t, idx, t.cols())),
        }
    }
}

/// Graph outputs of one batch.
struct Outputs {
    /// Next frame in raw units.
    next: Option<crate::kernel::Var>,
    logits: crate::kernel::Var,
}

impl FusionModel {
    fn slots(&self) -> Slots {
        let mut i = 0;
        let mut take = |present: bool| {
            present.then(|| {
                i += 1;
                i - 1
            })
        };
        let ae = self.autoencoder.is_some();
        Slots {
            encoder: take(ae),
            decoder: take(ae),
            image: take(self.image.is_some()),
            head: take(self.head.is_some()),
        }
    }

    pub fn encoder(&self) -> Option<&ModelParams> {
        self.autoencoder.as_ref().map(|a| &a.encoder)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictxError> {
        Ok(save_checkpoint(path, CHECKPOINT_KIND, self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictxError> {
        Ok(load_checkpoint(path, CHECKPOINT_KIND)?)
    }

    fn check_sample(&self, window: &SensorWindow, image: &ImageFeatures) -> Result<(), PredictxError> {
        window.validate()?;
        if window.window_len() != self.window_len || window.n_channels() != self.n_channels {
            return Err(PredictxError::Input(format!(
                "window is {}x{}, model expects {}x{}",
                window.window_len(),
                window.n_channels(),
                self.window_len,
                self.n_channels
            )));
        }
        if self.variant.uses_image() && image.vector.len() != self.image_dim {
            return Err(PredictxError::Input(format!(
                "image features have {} values, model expects {}",
                image.vector.len(),
                self.image_dim
            )));
        }
        Ok(())
    }

    fn series_rows(&self, windows: &[&SensorWindow]) -> Option<Tensor> {
        self.autoencoder.as_ref().map(|ae| ae.normalized_rows(windows))
    }

    fn image_rows(&self, images: &[&ImageFeatures], zero: bool) -> Tensor {
        let mut out = Vec::with_capacity(images.len() * self.image_dim);
        for im in images {
            if zero {
                out.extend(std::iter::repeat_n(0.0, self.image_dim));
            } else {
                self.image_norm.apply_into(&im.vector, &mut out);
            }
        }
        Tensor::matrix(images.len(), self.image_dim, out).expect("image rows")
    }

    /// Builds the forward pass for a batch. `series` holds normalized rows.
    fn forward_batch(
        &self,
        g: &mut Graph,
        bound: &[BoundNet],
        series: Option<Tensor>,
        image: Option<ImageIn>,
    ) -> Result<Outputs, PredictxError> {
        let s = self.slots();
        let n = self.n_channels;
        let l = self.window_len;
        let img_logits = match (&self.image, image) {
            (Some(net), Some(ImageIn::Features(x))) => {
                let x = g.constant(x);
                Some(net.forward_graph(g, &bound[s.image.expect("image slot")], Flow::Single(x), true)?.single()?)
            }
            (Some(_), Some(ImageIn::Logits(t))) => Some(g.constant(t)),
            _ => None,
        };
        let Some(head) = &self.head else {
            let logits = img_logits.ok_or_else(|| PredictxError::Input("model has no classifier".into()))?;
            return Ok(Outputs { next: None, logits });
        };
        let ae = self
            .autoencoder
            .as_ref()
            .ok_or_else(|| PredictxError::Input("fusion head without autoencoder".into()))?;
        let x = g.constant(series.ok_or_else(|| PredictxError::Input("missing series input".into()))?);
        let z = ae.encoder.forward_graph(g, &bound[s.encoder.expect("encoder slot")], Flow::Single(x), false)?.single()?;
        let r = ae.decoder.forward_graph(g, &bound[s.decoder.expect("decoder slot")], Flow::Single(z), false)?.single()?;
        let last = g.slice_cols(r, (l - 1) * n, l * n)?;
        let observed = g.slice_cols(x, (l - 1) * n, l * n)?;
        let d = g.sub(last, observed)?;
        let err = g.mul(d, d)?;
        let mut parts = vec![last, err];
        parts.extend(img_logits);
        let h_in = g.concat(&parts)?;
        let out = head.forward_graph(g, &bound[s.head.expect("head slot")], Flow::Single(h_in), true)?.single()?;
        let next = g.slice_cols(out, 0, n)?;
        let std = g.constant(Tensor::vector(self.target_norm.std.clone()));
        let mean = g.constant(Tensor::vector(self.target_norm.mean.clone()));
        let next = g.mul_row(next, std)?;
        let next = g.add_row(next, mean)?;
        let logits = g.slice_cols(out, n, n + AnomalyClass::COUNT)?;
        Ok(Outputs {
            next: Some(next),
            logits,
        })
    }

    /// Batched inference: (next frame, class probabilities) per sample.
    pub fn predict_batch(
        &self,
        windows: &[&SensorWindow],
        images: &[&ImageFeatures],
        zero_image: bool,
    ) -> Result<Vec<(Vec<Real>, Vec<Real>)>, PredictxError> {
        if windows.len() != images.len() {
            return Err(PredictxError::Input("windows and images differ in count".into()));
        }
        let mut out = Vec::with_capacity(windows.len());
        for (wc, ic) in windows.chunks(INFERENCE_BATCH).zip(images.chunks(INFERENCE_BATCH)) {
            for (w, im) in wc.iter().zip(ic) {
                self.check_sample(w, im)?;
            }
            let mut g = Graph::new();
            let bound = self.bind_all(&mut g);
            let series = self.series_rows(wc);
            let image = self
                .image
                .is_some()
                .then(|| ImageIn::Features(self.image_rows(ic, zero_image)));
            let o = self.forward_batch(&mut g, &bound, series, image)?;
            let logits = g.value(o.logits);
            for (i, w) in wc.iter().enumerate() {
                let mut p = logits.row(i).to_vec();
                crate::kernel::softmax_in_place(&mut p);
                let next = match o.next {
                    Some(v) => g.value(v).row(i).to_vec(),
                    // The image-only variant has no regressor; it persists
                    // the last observed frame.
                    None => w.frames[w.window_len() - 1].clone(),
                };
                out.push((next, p));
            }
        }
        Ok(out)
    }
}

/// Single-sample inference. Pure apart from the measured latency.
pub fn fuse_predict(
    model: &FusionModel,
    window: &SensorWindow,
    img: &ImageFeatures,
) -> Result<PredictionResult, PredictxError> {
    let start = Instant::now();
    let (next, probs) = model
        .predict_batch(&[window], &[img], false)?
        .pop()
        .expect("one sample in, one out");
    let mut r = PredictionResult::from_probs(next, probs);
    r.timestamp = window.timestamp;
    r.latency_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(r)
}

fn one_hot(labels: impl Iterator<Item = AnomalyClass>) -> Tensor {
    let mut v = Vec::new();
    let mut rows = 0;
    for c in labels {
        let mut row = [0.0; AnomalyClass::COUNT];
        row[c.index()] = 1.0;
        v.extend_from_slice(&row);
        rows += 1;
    }
    Tensor::matrix(rows, AnomalyClass::COUNT, v).expect("one-hot rows")
}

struct Prepared {
    series: Option<Tensor>,
    image: Option<ImageIn>,
    targets: Tensor,
    labels: Tensor,
    lo: Option<Tensor>,
    hi: Option<Tensor>,
}

impl Prepared {
    fn new(
        model: &FusionModel,
        samples: &[&AssemblySample],
        onto: Option<&ProcessOntology>,
    ) -> Result<Self, PredictxError> {
        let windows: Vec<&SensorWindow> = samples.iter().map(|s| &s.window).collect();
        let images: Vec<&ImageFeatures> = samples.iter().map(|s| &s.image).collect();
        let n = model.n_channels;
        let mut targets = Vec::with_capacity(samples.len() * n);
        for s in samples {
            if s.target.len() != n {
                return Err(PredictxError::Input(format!(
                    "target frame has {} channels, expected {n}",
                    s.target.len()
                )));
            }
            targets.extend_from_slice(&s.target);
        }
        let (lo, hi) = match onto {
            Some(o) => {
                let (mut lo, mut hi) = (Vec::new(), Vec::new());
                for s in samples {
                    let (l, h) = o.bounds(&s.target_state)?;
                    lo.extend(l);
                    hi.extend(h);
                }
                (
                    Some(Tensor::matrix(samples.len(), n, lo)?),
                    Some(Tensor::matrix(samples.len(), n, hi)?),
                )
            }
            None => (None, None),
        };
        Ok(Self {
            series: model.series_rows(&windows),
            image: model
                .image
                .is_some()
                .then(|| ImageIn::Features(model.image_rows(&images, false))),
            targets: Tensor::matrix(samples.len(), n, targets)?,
            labels: one_hot(samples.iter().map(|s| s.window.label)),
            lo,
            hi,
        })
    }

    fn batch_loss(
        &self,
        model: &FusionModel,
        g: &mut Graph,
        bound: &[BoundNet],
        idx: &[usize],
        weights: &[Real],
        lambda: Real,
        beta: Real,
    ) -> Result<crate::kernel::Var, PredictxError> {
        let n = model.n_channels;
        let series = self.series.as_ref().map(|t| select_rows(t, idx, t.cols()));
        let image = self.image.as_ref().map(|t| t.select(idx));
        let o = model.forward_batch(g, bound, series, image)?;
        let labels = select_rows(&self.labels, idx, AnomalyClass::COUNT);
        let ce = g.softmax_cross_entropy(o.logits, labels)?;
        let Some(next) = o.next else {
            return Ok(ce);
        };
        let target = g.constant(select_rows(&self.targets, idx, n));
        let mut loss = wmse(g, next, target, weights)?;
        if let (Some(lo), Some(hi)) = (&self.lo, &self.hi) {
            let p = range_penalty_graph(g, next, select_rows(lo, idx, n), select_rows(hi, idx, n))?;
            let p = g.scale(p, lambda);
            loss = g.add(loss, p)?;
        }
        let ce = g.scale(ce, beta);
        Ok(g.add(loss, ce)?)
    }
}

fn check_ontology(onto: &ProcessOntology, samples: &[&AssemblySample], n: usize) -> Result<(), PredictxError> {
    if onto.variables().len() != n {
        return Err(PredictxError::Input(format!(
            "ontology has {} variables for {n} channels",
            onto.variables().len()
        )));
    }
    for s in samples {
        onto.state(&s.target_state)?;
    }
    Ok(())
}

fn image_classifier(dim: usize, cfg: &PredictxConfig) -> Result<ModelParams, PredictxError> {
    Ok(ModelParams::new(
        vec![
            LayerSpec::dense(dim, cfg.image_hidden, Activation::Relu),
            LayerSpec::dense(cfg.image_hidden, AnomalyClass::COUNT, Activation::Identity),
        ],
        cfg.seed.wrapping_add(2),
    )?)
}

/// Pretrains the image classifier alone on cross-entropy.
fn pretrain_image(
    samples: &[&AssemblySample],
    norm: &Standardizer,
    dim: usize,
    cfg: &PredictxConfig,
) -> Result<ModelParams, PredictxError> {
    let mut model = FusionModel {
        variant: FusionVariant::B2,
        window_len: samples[0].window.window_len(),
        n_channels: samples[0].window.n_channels(),
        image_dim: dim,
        autoencoder: None,
        image: Some(image_classifier(dim, cfg)?),
        image_norm: norm.clone(),
        head: None,
        target_norm: Standardizer::fit(std::iter::empty(), 0),
    };
    if cfg.image_pretrain.epochs > 0 {
        let prep = Prepared::new(&model, samples, None)?;
        let arch = model.clone();
        fit(&mut model, samples.len(), &cfg.image_pretrain, cfg.seed.wrapping_add(2), |g, bound, idx| {
            prep.batch_loss(&arch, g, bound, idx, &[], 0.0, 1.0)
                .map_err(into_kernel)
        })?;
    }
    Ok(model.image.expect("image classifier"))
}

/// Logits of classifiers each trained without the fold they score. A head
/// trained on in-sample logits learns to trust an overfit branch.
fn out_of_fold_logits(
    samples: &[&AssemblySample],
    norm: &Standardizer,
    dim: usize,
    cfg: &PredictxConfig,
) -> Result<Option<Tensor>, PredictxError> {
    let k = cfg.image_folds;
    if k < 2 || samples.len() < k {
        return Ok(None);
    }
    let mut logits = vec![0.0; samples.len() * AnomalyClass::COUNT];
    let mut rows = Vec::new();
    for fold in 0..k {
        let train: Vec<&AssemblySample> = (0..samples.len())
            .filter(|i| i % k != fold)
            .map(|i| samples[i])
            .collect();
        let net = pretrain_image(&train, norm, dim, cfg)?;
        rows.clear();
        let held: Vec<usize> = (fold..samples.len()).step_by(k).collect();
        for &i in &held {
            norm.apply_into(&samples[i].image.vector, &mut rows);
        }
        let out = net.forward(&Tensor::matrix(held.len(), dim, rows.clone())?)?;
        for (r, &i) in held.iter().enumerate() {
            logits[i * AnomalyClass::COUNT..(i + 1) * AnomalyClass::COUNT].copy_from_slice(out.row(r));
        }
    }
    Ok(Some(Tensor::matrix(samples.len(), AnomalyClass::COUNT, logits)?))
}

fn into_kernel(e: PredictxError) -> crate::kernel::KernelError {
    match e {
        PredictxError::Kernel(k) => k,
        other => crate::kernel::KernelError::Input(other.to_string()),
    }
}

/// Normal windows, on which the autoencoder learns the healthy process so
/// that reconstruction error flags departures from it.
pub(crate) fn normal_windows<'a>(dataset: &[&'a AssemblySample]) -> Result<Vec<&'a SensorWindow>, PredictxError> {
    let w: Vec<&SensorWindow> = dataset
        .iter()
        .filter(|s| !s.window.label.is_anomalous())
        .map(|s| &s.window)
        .collect();
    if w.is_empty() {
        return Err(PredictxError::Input("no Normal windows to fit the autoencoder on".into()));
    }
    Ok(w)
}

/// Trains one variant.
///
/// The autoencoder (on Normal windows) and the image classifier are
/// pretrained on their own objectives. The image classifier stays fixed
/// and the head trains on its out-of-fold logits. B1 and P1 learn the
/// series branch from the fusion loss alone; P2 and P3 start from the
/// pretrained autoencoder and keep its encoder frozen. The per-batch loss is
/// `WMSE(next, target) + λ·range_penalty(next) [P3] + β·CE(logits, label)`,
/// with the next frame in raw units.
pub fn train_fusion(
    variant: FusionVariant,
    dataset: &[&AssemblySample],
    onto: &ProcessOntology,
    config: &PredictxConfig,
) -> Result<FusionModel, PredictxError> {
    let windows: Vec<&SensorWindow> = dataset.iter().map(|s| &s.window).collect();
    let (_, n) = check_windows(&windows)?;
    if variant.uses_penalty() {
        check_ontology(onto, dataset, n)?;
    }
    let pretrained = if variant.freezes_encoder() {
        Some(train_autoencoder(&normal_windows(dataset)?, config)?)
    } else {
        None
    };
    train_fusion_from(variant, dataset, onto, config, pretrained.as_ref(), None)
}

/// Same as [`train_fusion`] but reuses already pretrained branches.
pub(crate) fn train_fusion_from(
    variant: FusionVariant,
    dataset: &[&AssemblySample],
    onto: &ProcessOntology,
    config: &PredictxConfig,
    autoencoder: Option<&Autoencoder>,
    image: Option<&ModelParams>,
) -> Result<FusionModel, PredictxError> {
    let windows: Vec<&SensorWindow> = dataset.iter().map(|s| &s.window).collect();
    let (l, n) = check_windows(&windows)?;
    let dim = dataset[0].image.vector.len();
    if variant.uses_image() && dataset.iter().any(|s| s.image.vector.len() != dim) {
        return Err(PredictxError::Input("inconsistent image feature dims".into()));
    }
    if variant.uses_penalty() {
        check_ontology(onto, dataset, n)?;
    }
    let image_norm = Standardizer::fit(dataset.iter().map(|s| s.image.vector.as_slice()), dim);
    let image = if variant.uses_image() {
        Some(match image {
            Some(m) => m.clone(),
            None => pretrain_image(dataset, &image_norm, dim, config)?,
        })
    } else {
        None
    };
    if variant == FusionVariant::B2 {
        return Ok(FusionModel {
            variant,
            window_len: l,
            n_channels: n,
            image_dim: dim,
            autoencoder: None,
            image,
            image_norm,
            head: None,
            target_norm: Standardizer::fit(std::iter::empty(), 0),
        });
    }
    let mut ae = match (variant, autoencoder) {
        // Without transfer the series branch learns from the fusion loss alone.
        (FusionVariant::B1 | FusionVariant::P1, _) => {
            let norm = Standardizer::fit(windows.iter().flat_map(|w| w.frames.iter().map(Vec::as_slice)), n);
            Autoencoder::init(l, n, norm, config)?
        }
        (_, Some(a)) => a.clone(),
        (_, None) => train_autoencoder(&normal_windows(dataset)?, config)?,
    };
    if variant.freezes_encoder() {
        ae.encoder.set_trainable(false);
    }
    let mut image = image;
    if let Some(im) = image.as_mut() {
        im.set_trainable(false);
    }
    let head_in = 2 * n + if variant.uses_image() { AnomalyClass::COUNT } else { 0 };
    let head = ModelParams::new(
        vec![
            LayerSpec::dense(head_in, config.head_hidden, Activation::Tanh),
            LayerSpec::dense(config.head_hidden, n + AnomalyClass::COUNT, Activation::Identity),
        ],
        config.seed.wrapping_add(3),
    )?;
    let target_norm = Standardizer::fit(dataset.iter().map(|s| s.target.as_slice()), n);
    let mut model = FusionModel {
        variant,
        window_len: l,
        n_channels: n,
        image_dim: dim,
        autoencoder: Some(ae),
        image,
        image_norm,
        head: Some(head),
        target_norm,
    };
    if config.fusion.epochs == 0 {
        return Ok(model);
    }
    let onto = variant.uses_penalty().then_some(onto);
    let mut prep = Prepared::new(&model, dataset, onto)?;
    if variant.uses_image() {
        if let Some(t) = out_of_fold_logits(dataset, &model.image_norm, dim, config)? {
            prep.image = Some(ImageIn::Logits(t));
        }
    }
    let weights = config.channel_weights(n)?;
    let (lambda, beta) = (config.penalty_weight(), config.classification_weight());
    let arch = model.clone();
    fit(&mut model, dataset.len(), &config.fusion, config.seed.wrapping_add(3), |g, bound, idx| {
        prep.batch_loss(&arch, g, bound, idx, &weights, lambda, beta)
            .map_err(into_kernel)
    })?;
    Ok(model)
}

/// Loss of `model` on `samples` exactly as used in training, for the
/// model's own variant.
pub fn fusion_loss(
    model: &FusionModel,
    samples: &[&AssemblySample],
    onto: &ProcessOntology,
    config: &PredictxConfig,
) -> Result<Real, PredictxError> {
    let penalty = model.variant.uses_penalty().then_some(onto);
    if let Some(o) = penalty {
        check_ontology(o, samples, model.n_channels)?;
    }
    let prep = Prepared::new(model, samples, penalty)?;
    let weights = config.channel_weights(model.n_channels)?;
    let mut g = Graph::new();
    let bound = model.bind_all(&mut g);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let l = prep.batch_loss(
        model,
        &mut g,
        &bound,
        &idx,
        &weights,
        config.penalty_weight(),
        config.classification_weight(),
    )?;
    Ok(g.value(l).values()[0])
}

fn predicted_classes(
    model: &FusionModel,
    samples: &[&AssemblySample],
    zero_image: bool,
) -> Result<Vec<AnomalyClass>, PredictxError> {
    let windows: Vec<&SensorWindow> = samples.iter().map(|s| &s.window).collect();
    let images: Vec<&ImageFeatures> = samples.iter().map(|s| &s.image).collect();
    Ok(model
        .predict_batch(&windows, &images, zero_image)?
        .into_iter()
        .map(|(_, p)| AnomalyClass::from_index(argmax(&p)).expect("7 probabilities"))
        .collect())
}

/// Seven-class metrics. With `zero_image` the image features are replaced
/// by zeros at test time.
pub fn evaluate_variant(
    model: &FusionModel,
    samples: &[&AssemblySample],
    zero_image: bool,
) -> Result<WeightedMetrics, PredictxError> {
    let pred = predicted_classes(model, samples, zero_image)?;
    let labels: Vec<AnomalyClass> = samples.iter().map(|s| s.window.label).collect();
    compute_weighted_metrics(&pred, &labels)
}

/// Normal-vs-anomaly metrics.
pub fn evaluate_detection(
    model: &FusionModel,
    samples: &[&AssemblySample],
) -> Result<WeightedMetrics<Detection>, PredictxError> {
    let pred: Vec<Detection> = predicted_classes(model, samples, false)?
        .into_iter()
        .map(Detection::from)
        .collect();
    let labels: Vec<Detection> = samples.iter().map(|s| s.window.label.into()).collect();
    compute_weighted_metrics(&pred, &labels)
}
