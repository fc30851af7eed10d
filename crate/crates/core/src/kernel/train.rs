use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{GradientSet, Graph, Var};
use super::layer::{flow_to_tensor, tensor_to_flow, Activation, BoundNet, ModelParams};
use super::loss::{build_loss, LossSpec};
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::Tensor;
use super::KernelError;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss_weights: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            loss_weights: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted: it is the no-op step used to check
    /// that training leaves parameters untouched.
    pub fn validate(&self) -> Result<(), KernelError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(KernelError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(KernelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(KernelError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weight(&self, name: &str, default: f64) -> f64 {
        self.loss_weights.get(name).copied().unwrap_or(default)
    }
}

/// A model made of one or more networks trained together.
pub trait ParamSet<T: Scalar> {
    fn nets(&self) -> Vec<&ModelParams<T>>;
    fn nets_mut(&mut self) -> Vec<&mut ModelParams<T>>;

    fn bind_all(&self, g: &mut Graph<T>) -> Vec<BoundNet> {
        self.nets()
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.bind(g, i))
            .collect()
    }
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn nets(&self) -> Vec<&ModelParams<T>> {
        vec![self]
    }

    fn nets_mut(&mut self) -> Vec<&mut ModelParams<T>> {
        vec![self]
    }
}

/// Minibatch training loop shared by every model.
///
/// `batch_loss` builds the scalar loss for the given sample indices on a fresh
/// graph. Sample order is reshuffled each epoch from `shuffle_seed`, so
/// identical inputs give bit-identical results. Returns per-epoch mean loss.
pub fn fit<T, M, F>(
    model: &mut M,
    n_samples: usize,
    config: &TrainConfig,
    shuffle_seed: u64,
    mut batch_loss: F,
) -> Result<Vec<T>, KernelError>
where
    T: Scalar,
    M: ParamSet<T> + ?Sized,
    F: FnMut(&mut Graph<T>, &[BoundNet], &[usize]) -> Result<Var, KernelError>,
{
    config.validate()?;
    if n_samples == 0 {
        return Err(KernelError::Input("training data is empty".into()));
    }
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = model.bind_all(&mut g);
            let loss = batch_loss(&mut g, &bound, batch)?;
            let value = g.value(loss).values()[0];
            if !value.is_finite() {
                return Err(KernelError::NonFiniteLoss(value.to_f64_lossless()));
            }
            let grads = g.backward(loss)?;
            optimizer.step(&mut model.nets_mut(), &grads);
            total += value * T::from_usize(batch.len()).unwrap_or_else(T::one);
        }
        history.push(total / T::from_usize(n_samples).unwrap_or_else(T::one));
    }
    Ok(history)
}

/// Loss value plus gradients of every trainable parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub loss: T,
    pub grads: GradientSet<T>,
}

fn ends_in_softmax<T: Scalar>(model: &ModelParams<T>) -> bool {
    model
        .layers
        .last()
        .is_some_and(|l| l.spec.activation == Activation::Softmax)
}

fn batch_loss_on<T: Scalar>(
    model: &ModelParams<T>,
    g: &mut Graph<T>,
    bound: &BoundNet,
    input: &Tensor<T>,
    target: &Tensor<T>,
    loss: &LossSpec,
) -> Result<Var, KernelError> {
    let (flow, lead) = tensor_to_flow(g, input, model.is_recurrent(), model.input_dim())?;
    let out = model.forward_graph(g, bound, flow, true)?;
    let out = match out {
        super::layer::Flow::Single(v) => v,
        seq => {
            let t = flow_to_tensor(g, seq, &lead)?;
            return Err(KernelError::Shape(format!(
                "sequence-valued output {:?} cannot be used with a loss",
                t.shape()
            )));
        }
    };
    let (r, c) = g.shape(out);
    let target = target.clone().reshape(vec![r, c]).map_err(|_| {
        KernelError::Shape(format!(
            "target {:?} does not match output [{r}, {c}]",
            target.shape()
        ))
    })?;
    build_loss(g, out, ends_in_softmax(model), &target, loss)
}

/// Loss and parameter gradients for one (possibly batched) input.
pub fn gradients<T: Scalar>(
    model: &ModelParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    loss: &LossSpec,
) -> Result<Gradients<T>, KernelError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, 0);
    let l = batch_loss_on(model, &mut g, &bound, input, target, loss)?;
    let value = g.value(l).values()[0];
    if !value.is_finite() {
        return Err(KernelError::NonFiniteLoss(value.to_f64_lossless()));
    }
    Ok(Gradients {
        loss: value,
        grads: g.backward(l)?,
    })
}

/// Loss value only.
pub fn loss_value<T: Scalar>(
    model: &ModelParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    loss: &LossSpec,
) -> Result<T, KernelError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, 0);
    let l = batch_loss_on(model, &mut g, &bound, input, target, loss)?;
    Ok(g.value(l).values()[0])
}

/// Stacks same-shaped tensors along a new leading axis.
pub fn stack<T: Scalar>(items: &[&Tensor<T>]) -> Result<Tensor<T>, KernelError> {
    let first = items
        .first()
        .ok_or_else(|| KernelError::Input("nothing to stack".into()))?;
    let mut values = Vec::with_capacity(first.len() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(KernelError::Shape(format!(
                "cannot stack {:?} with {:?}",
                first.shape(),
                t.shape()
            )));
        }
        values.extend_from_slice(t.values());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, values)
}

/// Trains a sequential network on `(input, target)` pairs and returns the
/// updated copy with its per-epoch mean loss.
pub fn train<T: Scalar>(
    model: &ModelParams<T>,
    data: &[(Tensor<T>, Tensor<T>)],
    config: &TrainConfig,
    loss: &LossSpec,
) -> Result<(ModelParams<T>, Vec<T>), KernelError> {
    let mut trained = model.clone();
    // Architecture is read from this copy; parameter values come from the
    // graph leaves bound to `trained`.
    let arch = model.clone();
    let history = fit(&mut trained, data.len(), config, model.seed, |g, bound, idx| {
        let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &data[i].0).collect();
        let targets: Vec<&Tensor<T>> = idx.iter().map(|&i| &data[i].1).collect();
        let x = stack(&inputs)?;
        let y = stack(&targets)?;
        batch_loss_on(&arch, g, &bound[0], &x, &y, loss)
    })?;
    Ok((trained, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::LayerSpec;

    fn linear() -> ModelParams<f64> {
        ModelParams::new(vec![LayerSpec::dense(1, 1, Activation::Identity)], 4).unwrap()
    }

    fn line_data() -> Vec<(Tensor<f64>, Tensor<f64>)> {
        (0..20)
            .map(|i| {
                let x = i as f64 / 10.0 - 1.0;
                (Tensor::vector(vec![x]), Tensor::vector(vec![2.0 * x]))
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_model_untouched() {
        let m = linear();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&m, &line_data(), &cfg, &LossSpec::Mse).unwrap();
        assert!(trained.layers[0].weight.bit_eq(&m.layers[0].weight));
        assert!(trained.layers[0].bias.bit_eq(&m.layers[0].bias));
    }

    #[test]
    fn learns_slope_two_with_sgd() {
        // Least squares on y = 2x through the origin has slope exactly 2.
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 20,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&linear(), &line_data(), &cfg, &LossSpec::Mse).unwrap();
        assert!((trained.layers[0].weight.values()[0] - 2.0).abs() < 0.05);
        assert!(history.last().unwrap() < history.first().unwrap());
    }

    #[test]
    fn empty_data_is_an_input_error() {
        let r = train(&linear(), &[], &TrainConfig::default(), &LossSpec::Mse);
        assert!(matches!(r, Err(KernelError::Input(_))));
    }

    #[test]
    fn frozen_layer_has_no_gradient_and_does_not_move() {
        let mut m = ModelParams::<f64>::new(
            vec![
                LayerSpec::dense(2, 3, Activation::Tanh).frozen(),
                LayerSpec::dense(3, 1, Activation::Identity),
            ],
            8,
        )
        .unwrap();
        m.layers[0].spec.trainable = false;
        let x = Tensor::vector(vec![0.3, -0.7]);
        let y = Tensor::vector(vec![1.0]);
        let g = gradients(&m, &x, &y, &LossSpec::Mse).unwrap();
        assert!(g.grads.keys().all(|id| id.layer == 1));
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&m, &[(x, y)], &cfg, &LossSpec::Mse).unwrap();
        assert!(trained.layers[0].weight.bit_eq(&m.layers[0].weight));
        assert!(!trained.layers[1].weight.bit_eq(&m.layers[1].weight));
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let mut m = linear();
        m.layers[0].weight = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        m.layers[0].bias = Tensor::vector(vec![0.0]);
        let g = gradients(&m, &Tensor::vector(vec![1.5]), &Tensor::vector(vec![3.0]), &LossSpec::Mse)
            .unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grads.values().all(|t| t.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
