use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamId, Slot, Var};
use super::tensor::Tensor;
use super::KernelError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Lstm,
    Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub trainable: bool,
    /// LSTM only: emit the whole hidden sequence instead of the last state.
    #[serde(default)]
    pub return_sequences: bool,
}

impl LayerSpec {
    pub fn dense(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            input_dim,
            output_dim,
            activation,
            trainable: true,
            return_sequences: false,
        }
    }

    pub fn lstm(input_dim: usize, hidden: usize, return_sequences: bool) -> Self {
        Self {
            kind: LayerKind::Lstm,
            input_dim,
            output_dim: hidden,
            activation: Activation::Tanh,
            trainable: true,
            return_sequences,
        }
    }

    pub fn activation(dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Activation,
            input_dim: dim,
            output_dim: dim,
            activation,
            trainable: true,
            return_sequences: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    /// Glorot-uniform weights from a ChaCha8 stream keyed by `(seed, index)`.
    /// Biases start at zero except LSTM forget gates, which start at one.
    fn init(spec: LayerSpec, seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let (fan_in, fan_out, wshape, bshape) = match spec.kind {
            LayerKind::Dense => (
                spec.input_dim,
                spec.output_dim,
                vec![spec.input_dim, spec.output_dim],
                vec![spec.output_dim],
            ),
            LayerKind::Lstm => {
                let h = spec.output_dim;
                (
                    spec.input_dim + h,
                    4 * h,
                    vec![spec.input_dim + h, 4 * h],
                    vec![4 * h],
                )
            }
            LayerKind::Activation => {
                return Self {
                    spec,
                    weight: Tensor::empty(),
                    bias: Tensor::empty(),
                }
            }
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = wshape.iter().product();
        let w: Vec<T> = (0..n)
            .map(|_| T::from_config(rng.random_range(-limit..=limit)))
            .collect();
        let mut bias = Tensor::zeros(bshape);
        if spec.kind == LayerKind::Lstm {
            let h = spec.output_dim;
            for v in &mut bias.values_mut()[h..2 * h] {
                *v = T::one();
            }
        }
        Self {
            spec,
            weight: Tensor::new(wshape, w).expect("shape product"),
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Intermediate value flowing through a sequential network.
#[derive(Clone, Debug)]
pub enum Flow {
    Single(Var),
    Seq(Vec<Var>),
}

impl Flow {
    pub fn single(self) -> Result<Var, KernelError> {
        match self {
            Flow::Single(v) => Ok(v),
            Flow::Seq(_) => Err(KernelError::Shape(
                "expected a single value, got a sequence".into(),
            )),
        }
    }
}

/// Parameter handles of one network bound into a graph.
#[derive(Clone, Debug)]
pub struct BoundNet {
    pub layers: Vec<(Option<Var>, Option<Var>)>,
}

/// Ordered stack of layers plus the seed that initialized it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelParams<T> {
    pub layers: Vec<Layer<T>>,
    pub seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self, KernelError> {
        validate_specs(&specs)?;
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| Layer::init(s, seed, i))
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_dim)
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers
            .first()
            .is_some_and(|l| l.spec.kind == LayerKind::Lstm)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for l in &mut self.layers {
            l.spec.trainable = trainable;
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec.clone()).collect();
        validate_specs(&specs)?;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = match l.spec.kind {
                LayerKind::Dense => (
                    vec![l.spec.input_dim, l.spec.output_dim],
                    vec![l.spec.output_dim],
                ),
                LayerKind::Lstm => (
                    vec![l.spec.input_dim + l.spec.output_dim, 4 * l.spec.output_dim],
                    vec![4 * l.spec.output_dim],
                ),
                LayerKind::Activation => (vec![0], vec![0]),
            };
            if l.weight.shape() != w.as_slice() || l.bias.shape() != b.as_slice() {
                return Err(KernelError::Shape(format!(
                    "layer {i}: parameter shapes {:?}/{:?} do not match spec",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        Ok(())
    }

    /// Registers every layer's tensors as graph leaves under network `net`.
    pub fn bind(&self, g: &mut Graph<T>, net: usize) -> BoundNet {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if l.spec.kind == LayerKind::Activation {
                    return (None, None);
                }
                let t = l.spec.trainable;
                let w = g.param(
                    ParamId {
                        net,
                        layer: i,
                        slot: Slot::Weight,
                    },
                    &l.weight,
                    t,
                );
                let b = g.param(
                    ParamId {
                        net,
                        layer: i,
                        slot: Slot::Bias,
                    },
                    &l.bias,
                    t,
                );
                (Some(w), Some(b))
            })
            .collect();
        BoundNet { layers }
    }

    /// Graph forward. With `logits == true` a final softmax is skipped so the
    /// caller can apply a fused cross-entropy.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        bound: &BoundNet,
        input: Flow,
        logits: bool,
    ) -> Result<Flow, KernelError> {
        let mut x = input;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let spec = &layer.spec;
            let in_dim = match &x {
                Flow::Single(v) => g.shape(*v).1,
                Flow::Seq(vs) => vs.first().map_or(0, |v| g.shape(*v).1),
            };
            if in_dim != spec.input_dim {
                return Err(KernelError::Dimension {
                    layer: i,
                    expected: spec.input_dim,
                    actual: in_dim,
                });
            }
            let skip_softmax = logits && i == last && spec.activation == Activation::Softmax;
            let act = if skip_softmax {
                Activation::Identity
            } else {
                spec.activation
            };
            x = match spec.kind {
                LayerKind::Activation => map_flow(g, x, |g, v| Ok(g.activation(v, act)))?,
                LayerKind::Dense => {
                    let (w, b) = bound.layers[i];
                    let (w, b) = (w.expect("dense weight"), b.expect("dense bias"));
                    map_flow(g, x, |g, v| {
                        let z = g.matmul(v, w)?;
                        let z = g.add_row(z, b)?;
                        Ok(g.activation(z, act))
                    })?
                }
                LayerKind::Lstm => {
                    let Flow::Seq(steps) = x else {
                        return Err(KernelError::Shape(format!(
                            "layer {i}: LSTM needs a sequence input"
                        )));
                    };
                    let (w, b) = bound.layers[i];
                    let hs = lstm_steps(g, &steps, w.expect("lstm weight"), b.expect("lstm bias"), spec.output_dim)?;
                    if spec.return_sequences {
                        Flow::Seq(hs)
                    } else {
                        Flow::Single(*hs.last().ok_or_else(|| {
                            KernelError::Input("empty sequence".into())
                        })?)
                    }
                }
            };
        }
        Ok(x)
    }

    /// Evaluates the network on a tensor.
    ///
    /// Dense-first networks take `[D]` or `[B, D]`; recurrent networks take a
    /// sequence `[T, D]` or a batch of sequences `[B, T, D]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, KernelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, 0);
        let (flow, batch_shape) = tensor_to_flow(&mut g, input, self.is_recurrent(), self.input_dim())?;
        let out = self.forward_graph(&mut g, &bound, flow, false)?;
        flow_to_tensor(&g, out, &batch_shape)
    }
}

fn map_flow<T: Scalar>(
    g: &mut Graph<T>,
    x: Flow,
    mut f: impl FnMut(&mut Graph<T>, Var) -> Result<Var, KernelError>,
) -> Result<Flow, KernelError> {
    Ok(match x {
        Flow::Single(v) => Flow::Single(f(g, v)?),
        Flow::Seq(vs) => Flow::Seq(vs.into_iter().map(|v| f(g, v)).collect::<Result<_, _>>()?),
    })
}

/// Standard four-gate LSTM (gate column order: input, forget, cell, output)
/// with zero initial state.
fn lstm_steps<T: Scalar>(
    g: &mut Graph<T>,
    steps: &[Var],
    w: Var,
    b: Var,
    hidden: usize,
) -> Result<Vec<Var>, KernelError> {
    let batch = steps
        .first()
        .map(|&v| g.shape(v).0)
        .ok_or_else(|| KernelError::Input("empty sequence".into()))?;
    let mut h = g.constant(Tensor::zeros(vec![batch, hidden]));
    let mut c = g.constant(Tensor::zeros(vec![batch, hidden]));
    let mut out = Vec::with_capacity(steps.len());
    for &x in steps {
        let xh = g.concat(&[x, h])?;
        let z = g.matmul(xh, w)?;
        let z = g.add_row(z, b)?;
        let i = g.slice_cols(z, 0, hidden)?;
        let f = g.slice_cols(z, hidden, 2 * hidden)?;
        let cand = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
        let o = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let ct = g.tanh(c);
        h = g.mul(o, ct)?;
        out.push(h);
    }
    Ok(out)
}

/// Splits a tensor into graph inputs. Returns the flow and the leading batch
/// shape used to restore the output rank.
pub(crate) fn tensor_to_flow<T: Scalar>(
    g: &mut Graph<T>,
    input: &Tensor<T>,
    recurrent: bool,
    input_dim: usize,
) -> Result<(Flow, Vec<usize>), KernelError> {
    let shape = input.shape().to_vec();
    if !recurrent {
        return match shape.len() {
            1 => Ok((Flow::Single(g.constant(input.clone().reshape(vec![1, shape[0]])?)), vec![])),
            2 => Ok((Flow::Single(g.constant(input.clone())), vec![shape[0]])),
            _ => Err(KernelError::Shape(format!(
                "dense input must be [D] or [B, D], got {shape:?}"
            ))),
        };
    }
    let (batch, steps, dim, lead) = match shape.len() {
        2 => (1, shape[0], shape[1], vec![]),
        3 => (shape[0], shape[1], shape[2], vec![shape[0]]),
        _ => {
            return Err(KernelError::Shape(format!(
                "sequence input must be [T, D] or [B, T, D], got {shape:?}"
            )))
        }
    };
    if dim != input_dim {
        return Err(KernelError::Dimension {
            layer: 0,
            expected: input_dim,
            actual: dim,
        });
    }
    let v = input.values();
    let mut vars = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut rows = Vec::with_capacity(batch * dim);
        for b in 0..batch {
            let off = (b * steps + t) * dim;
            rows.extend_from_slice(&v[off..off + dim]);
        }
        vars.push(g.constant(Tensor::matrix(batch, dim, rows)?));
    }
    Ok((Flow::Seq(vars), lead))
}

pub(crate) fn flow_to_tensor<T: Scalar>(
    g: &Graph<T>,
    out: Flow,
    lead: &[usize],
) -> Result<Tensor<T>, KernelError> {
    match out {
        Flow::Single(v) => {
            let t = g.value(v).clone();
            let cols = t.cols();
            let mut shape = lead.to_vec();
            shape.push(cols);
            t.reshape(shape)
        }
        Flow::Seq(vs) => {
            let steps = vs.len();
            let (batch, cols) = g.shape(vs[0]);
            let mut values = vec![T::zero(); batch * steps * cols];
            for (t, v) in vs.iter().enumerate() {
                let val = g.value(*v).values();
                for b in 0..batch {
                    let dst = (b * steps + t) * cols;
                    values[dst..dst + cols].copy_from_slice(&val[b * cols..(b + 1) * cols]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(steps);
            shape.push(cols);
            Tensor::new(shape, values)
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), KernelError> {
    if specs.is_empty() {
        return Err(KernelError::Config("model has no layers".into()));
    }
    let mut sequence = specs[0].kind == LayerKind::Lstm;
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(KernelError::Config(format!("layer {i}: dimensions must be positive")));
        }
        if s.activation == Activation::Softmax && i + 1 != specs.len() {
            return Err(KernelError::Config(format!(
                "layer {i}: softmax is only allowed on the final layer"
            )));
        }
        if s.kind == LayerKind::Activation && s.input_dim != s.output_dim {
            return Err(KernelError::Config(format!(
                "layer {i}: activation layer must keep its width"
            )));
        }
        if s.kind == LayerKind::Lstm {
            if !sequence {
                return Err(KernelError::Config(format!(
                    "layer {i}: LSTM needs a sequence input"
                )));
            }
            sequence = s.return_sequences;
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(KernelError::Dimension {
                layer: i,
                expected: specs[i - 1].output_dim,
                actual: s.input_dim,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_identity() -> ModelParams<f64> {
        let mut m = ModelParams::new(vec![LayerSpec::dense(2, 2, Activation::Relu)], 1).unwrap();
        m.layers[0].weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.layers[0].bias = Tensor::zeros(vec![2]);
        m
    }

    #[test]
    fn identity_relu_layer() {
        let out = dense_identity().forward(&Tensor::vector(vec![1.0, -2.0])).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.values(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_lstm_gives_zero_output() {
        let mut m = ModelParams::<f64>::new(vec![LayerSpec::lstm(3, 4, true)], 9).unwrap();
        m.layers[0].weight = Tensor::zeros(vec![7, 16]);
        m.layers[0].bias = Tensor::zeros(vec![16]);
        let x = Tensor::new(vec![5, 3], (0..15).map(|i| i as f64 * 0.7 - 3.0).collect()).unwrap();
        let out = m.forward(&x).unwrap();
        assert_eq!(out.shape(), &[5, 4]);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_dense_matches_hand_multiplication() {
        // h = relu([1,1] W1 + b1), y = h W2 + b2
        // W1 = [[1, -2], [0.5, 3]], b1 = [0.25, -1]  -> pre = [1.75, 0], h = [1.75, 0]
        // W2 = [[2], [-1]], b2 = [0.5]               -> y = 3.5 + 0.5 = 4.0
        let mut m = ModelParams::<f64>::new(
            vec![
                LayerSpec::dense(2, 2, Activation::Relu),
                LayerSpec::dense(2, 1, Activation::Identity),
            ],
            3,
        )
        .unwrap();
        m.layers[0].weight = Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        m.layers[0].bias = Tensor::vector(vec![0.25, -1.0]);
        m.layers[1].weight = Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap();
        m.layers[1].bias = Tensor::vector(vec![0.5]);
        let y = m.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert!((y.values()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_error_names_layer() {
        let m = ModelParams::<f64>::new(vec![LayerSpec::dense(3, 2, Activation::Tanh)], 0).unwrap();
        match m.forward(&Tensor::vector(vec![1.0, 2.0])) {
            Err(KernelError::Dimension { layer, expected, actual }) => {
                assert_eq!((layer, expected, actual), (0, 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_init() {
        let specs = vec![LayerSpec::lstm(2, 3, false), LayerSpec::dense(3, 1, Activation::Identity)];
        let a = ModelParams::<f64>::new(specs.clone(), 77).unwrap();
        let b = ModelParams::<f64>::new(specs.clone(), 77).unwrap();
        let c = ModelParams::<f64>::new(specs, 78).unwrap();
        assert!(a.layers.iter().zip(&b.layers).all(|(x, y)| x.weight.bit_eq(&y.weight)));
        assert_ne!(a, c);
    }

    #[test]
    fn glorot_bounds_and_forget_bias() {
        let m = ModelParams::<f64>::new(vec![LayerSpec::lstm(4, 8, false)], 5).unwrap();
        let limit = (6.0f64 / (12 + 32) as f64).sqrt();
        assert!(m.layers[0].weight.values().iter().all(|w| w.abs() <= limit));
        assert!(m.layers[0].bias.values()[8..16].iter().all(|&b| b == 1.0));
        assert!(m.layers[0].bias.values()[..8].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_bad_stacks() {
        assert!(ModelParams::<f64>::new(vec![], 0).is_err());
        assert!(ModelParams::<f64>::new(
            vec![
                LayerSpec::dense(2, 2, Activation::Softmax),
                LayerSpec::dense(2, 2, Activation::Identity)
            ],
            0
        )
        .is_err());
        assert!(ModelParams::<f64>::new(
            vec![LayerSpec::dense(2, 3, Activation::Tanh), LayerSpec::dense(2, 1, Activation::Identity)],
            0
        )
        .is_err());
        assert!(ModelParams::<f64>::new(
            vec![LayerSpec::lstm(2, 3, false), LayerSpec::lstm(3, 3, false)],
            0
        )
        .is_err());
    }

    #[test]
    fn batched_sequence_forward_matches_single() {
        let m = ModelParams::<f64>::new(
            vec![LayerSpec::lstm(2, 3, true), LayerSpec::lstm(3, 2, false)],
            11,
        )
        .unwrap();
        let a: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let ya = m.forward(&Tensor::new(vec![4, 2], a.clone()).unwrap()).unwrap();
        let yb = m.forward(&Tensor::new(vec![4, 2], b.clone()).unwrap()).unwrap();
        let both = m
            .forward(&Tensor::new(vec![2, 4, 2], [a, b].concat()).unwrap())
            .unwrap();
        assert_eq!(both.shape(), &[2, 2]);
        assert_eq!(&both.values()[..2], ya.values());
        assert_eq!(&both.values()[2..], yb.values());
    }
}
