use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::KernelError;
use crate::scalar::Scalar;

/// Loss applied to a network output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    /// Per-column weights.
    Wmse(Vec<f64>),
    /// Targets are class distributions (one-hot for hard labels).
    CrossEntropy,
    Composite(Vec<(f64, LossSpec)>),
}

/// Weighted MSE averaged over rows: `sum_c w_c (p_c - t_c)^2 / sum_c w_c`.
pub fn wmse<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    weights: &[f64],
) -> Result<Var, KernelError> {
    let (rows, cols) = g.shape(pred);
    if weights.len() != cols {
        return Err(KernelError::Shape(format!(
            "{} loss weights for {cols} columns",
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(KernelError::Config("loss weights must be non-negative with positive sum".into()));
    }
    let w = g.constant(Tensor::from_f64(
        vec![1, cols],
        &weights.iter().map(|w| w / total).collect::<Vec<_>>(),
    )?);
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let weighted = g.mul_row(sq, w)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, T::one() / T::from_usize(rows.max(1)).unwrap_or_else(T::one)))
}

/// Plain MSE over every element.
pub fn mse<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, KernelError> {
    let cols = g.shape(pred).1;
    wmse(g, pred, target, &vec![1.0; cols])
}

/// Builds `spec` on a network output. `logits` is the pre-softmax output when
/// the network ends in softmax, the raw output otherwise.
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    ends_in_softmax: bool,
    target: &Tensor<T>,
    spec: &LossSpec,
) -> Result<Var, KernelError> {
    let output = |g: &mut Graph<T>| {
        if ends_in_softmax {
            g.activation(logits, super::Activation::Softmax)
        } else {
            logits
        }
    };
    match spec {
        LossSpec::Mse => {
            let p = output(g);
            let t = g.constant(target.clone());
            mse(g, p, t)
        }
        LossSpec::Wmse(w) => {
            let p = output(g);
            let t = g.constant(target.clone());
            wmse(g, p, t, w)
        }
        LossSpec::CrossEntropy => g.softmax_cross_entropy(logits, target.clone()),
        LossSpec::Composite(terms) => {
            let mut acc: Option<Var> = None;
            for (w, term) in terms {
                let l = build_loss(g, logits, ends_in_softmax, target, term)?;
                let l = g.scale(l, T::from_config(*w));
                acc = Some(match acc {
                    Some(a) => g.add(a, l)?,
                    None => l,
                });
            }
            acc.ok_or_else(|| KernelError::Config("empty composite loss".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wmse_normalizes_by_weight_sum() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        let t = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let l = wmse(&mut g, p, t, &[1.0, 3.0]).unwrap();
        // (1*1 + 3*9) / 4
        assert!((g.value(l).values()[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn mse_averages_rows_and_columns() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let l = mse(&mut g, p, t).unwrap();
        assert!((g.value(l).values()[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_weights() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        assert!(wmse(&mut g, p, p, &[1.0]).is_err());
        assert!(wmse(&mut g, p, p, &[0.0, 0.0]).is_err());
    }
}
