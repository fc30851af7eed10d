use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{GradientSet, ParamId, Slot};
use super::layer::ModelParams;
use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

pub(crate) enum Optimizer<T> {
    Sgd {
        lr: T,
    },
    Adam {
        lr: T,
        step: i32,
        moments: BTreeMap<ParamId, (Vec<T>, Vec<T>)>,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub(crate) fn new(kind: OptimizerKind, lr: f64) -> Self {
        let lr = T::from_config(lr);
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                moments: BTreeMap::new(),
            },
        }
    }

    pub(crate) fn step(&mut self, nets: &mut [&mut ModelParams<T>], grads: &GradientSet<T>) {
        if let Optimizer::Adam { step, .. } = self {
            *step += 1;
        }
        for (id, grad) in grads {
            let layer = &mut nets[id.net].layers[id.layer];
            if !layer.spec.trainable {
                continue;
            }
            let param: &mut Tensor<T> = match id.slot {
                Slot::Weight => &mut layer.weight,
                Slot::Bias => &mut layer.bias,
            };
            match self {
                Optimizer::Sgd { lr } => {
                    for (p, &g) in param.values_mut().iter_mut().zip(grad.values()) {
                        *p -= *lr * g;
                    }
                }
                Optimizer::Adam { lr, step, moments } => {
                    let (b1, b2, eps) = (
                        T::from_config(BETA1),
                        T::from_config(BETA2),
                        T::from_config(EPSILON),
                    );
                    let n = grad.len();
                    let (m, v) = moments
                        .entry(*id)
                        .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
                    let c1 = T::one() - b1.powi(*step);
                    let c2 = T::one() - b2.powi(*step);
                    for (((p, &g), mi), vi) in param
                        .values_mut()
                        .iter_mut()
                        .zip(grad.values())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * g;
                        *vi = b2 * *vi + (T::one() - b2) * g * g;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *p -= *lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
