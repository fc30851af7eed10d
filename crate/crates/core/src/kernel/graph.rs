//! Reverse-mode differentiation over rank-2 values.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! matrices `[rows, cols]` (rows = batch). Nodes that do not depend on a
//! trainable parameter are never visited by [`Graph::backward`], which is what
//! makes frozen sub-networks free during training.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::{Activation, KernelError};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which tensor of a layer a parameter is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Weight,
    Bias,
}

/// Address of one parameter tensor: network index, layer index, slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub net: usize,
    pub layer: usize,
    pub slot: Slot,
}

/// Per-parameter gradients. Frozen parameters never appear.
pub type GradientSet<T> = BTreeMap<ParamId, Tensor<T>>;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    SoftmaxCe { logits: Var, probs: Vec<T>, targets: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn as_matrix<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.rows(), t.cols());
    if t.rank() == 2 {
        t
    } else {
        t.reshape(vec![r, c]).expect("row/col product equals length")
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(as_matrix(t), Op::Leaf, false)
    }

    /// Parameter leaf. With `trainable == false` it behaves like a constant
    /// and is left out of the gradient set.
    pub fn param(&mut self, id: ParamId, t: &Tensor<T>, trainable: bool) -> Var {
        let v = self.push(as_matrix(t.clone()), Op::Leaf, trainable);
        if trainable {
            self.params.push((id, v));
        }
        v
    }

    fn check(&self, cond: bool, what: impl FnOnce() -> String) -> Result<(), KernelError> {
        if cond {
            Ok(())
        } else {
            Err(KernelError::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        self.check(k == k2, || format!("matmul [{n},{k}] x [{k2},{m}]"))?;
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![T::zero(); n * m];
        axpy_rows(&mut out, av, bv, n, k, m);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::matrix(n, m, out)?,
            Op::MatMul(a, b),
            needs,
        ))
    }

    /// `a[r, c] + b[1, c]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        self.check(br == 1 && bc == c, || format!("add_row [{r},{c}] + [{br},{bc}]"))?;
        let bv = self.value(b).values().to_vec();
        let mut out = self.value(a).values().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &x) in row.iter_mut().zip(&bv) {
                *o += x;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(a, b), needs))
    }

    /// `a[r, c] * b[1, c]`, broadcasting `b` over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        self.check(br == 1 && bc == c, || format!("mul_row [{r},{c}] * [{br},{bc}]"))?;
        let bv = self.value(b).values().to_vec();
        let mut out = self.value(a).values().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &x) in row.iter_mut().zip(&bv) {
                *o *= x;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::MulRow(a, b), needs))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, KernelError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        self.check(sa == sb, || format!("{name} {sa:?} vs {sb:?}"))?;
        let out: Vec<T> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(sa.0, sa.1, out)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).values().iter().map(|&x| x * k).collect();
        let needs = self.needs(a);
        self.push(
            Tensor::matrix(r, c, out).expect("same shape"),
            Op::Scale(a, k),
            needs,
        )
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let (r, c) = self.shape(a);
        let x = self.value(a).values();
        let out: Vec<T> = match act {
            Activation::Identity => x.to_vec(),
            Activation::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Activation::Tanh => x.iter().map(|&v| v.tanh()).collect(),
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Softmax => {
                let mut out = x.to_vec();
                for row in out.chunks_mut(c) {
                    softmax_in_place(row);
                }
                out
            }
        };
        let needs = self.needs(a);
        self.push(
            Tensor::matrix(r, c, out).expect("same shape"),
            Op::Act(a, act),
            needs,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Column-wise concatenation of equally tall values.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| KernelError::Shape("concat of nothing".into()))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        for &p in parts {
            let r = self.shape(p).0;
            self.check(r == rows, || format!("concat rows {r} vs {rows}"))?;
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::matrix(rows, total, out)?,
            Op::Concat(parts.to_vec()),
            needs,
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let (r, c) = self.shape(a);
        self.check(start < end && end <= c, || {
            format!("slice {start}..{end} of {c} columns")
        })?;
        let w = end - start;
        let x = self.value(a).values();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(r, w, out)?, Op::Slice(a, start), needs))
    }

    /// Sum of all entries, as a `[1, 1]` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().copied().sum();
        let needs = self.needs(a);
        self.push(
            Tensor::matrix(1, 1, vec![s]).expect("scalar"),
            Op::Sum(a),
            needs,
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n.max(1)).unwrap_or_else(T::one))
    }

    /// Mean over rows of `-sum_j t_j log softmax(z)_j`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Tensor<T>,
    ) -> Result<Var, KernelError> {
        let (r, c) = self.shape(logits);
        let targets = as_matrix(targets);
        self.check(targets.rows() == r && targets.cols() == c, || {
            format!(
                "cross entropy logits [{r},{c}] vs targets [{},{}]",
                targets.rows(),
                targets.cols()
            )
        })?;
        let mut probs = self.value(logits).values().to_vec();
        let mut loss = T::zero();
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            for (j, z) in row.iter_mut().enumerate() {
                let logp = *z - lse;
                let t = targets.values()[i * c + j];
                if t != T::zero() {
                    loss -= t * logp;
                }
                *z = logp.exp();
            }
        }
        loss /= T::from_usize(r.max(1)).unwrap_or_else(T::one);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::matrix(1, 1, vec![loss])?,
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar node. Returns gradients of every trainable
    /// parameter registered through [`Graph::param`].
    pub fn backward(&self, loss: Var) -> Result<GradientSet<T>, KernelError> {
        let (r, c) = self.shape(loss);
        self.check(r == 1 && c == 1, || format!("backward from [{r},{c}]"))?;
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let cols = node.value.cols();
            let rows = node.value.rows();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = cols;
                    let av = self.value(*a).values();
                    let bv = self.value(*b).values();
                    if self.needs(*a) {
                        let mut ga = vec![T::zero(); n * k];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let brow = &bv[p * m..(p + 1) * m];
                                ga[i * k + p] = dot(grow, brow);
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![T::zero(); k * m];
                        at_b(&mut gb, av, &g, n, k, m);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut gb = vec![T::zero(); cols];
                        for row in g.chunks(cols) {
                            for (o, &x) in gb.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, b) => {
                    let av = self.value(*a).values();
                    let bv = self.value(*b).values();
                    if self.needs(*b) {
                        let mut gb = vec![T::zero(); cols];
                        for (grow, arow) in g.chunks(cols).zip(av.chunks(cols)) {
                            for ((o, &x), &y) in gb.iter_mut().zip(grow).zip(arow) {
                                *o += x * y;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        let mut ga = g.clone();
                        for row in ga.chunks_mut(cols) {
                            for (o, &y) in row.iter_mut().zip(bv) {
                                *o *= y;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|&x| -x).collect());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).values();
                    let bv = self.value(*b).values();
                    if self.needs(*a) {
                        accumulate(
                            &mut grads,
                            *a,
                            g.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
                        );
                    }
                    if self.needs(*b) {
                        accumulate(
                            &mut grads,
                            *b,
                            g.iter().zip(av).map(|(&x, &y)| x * y).collect(),
                        );
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.iter().map(|&x| x * k).collect());
                }
                Op::Act(a, act) => {
                    let y = node.value.values();
                    let ga: Vec<T> = match act {
                        Activation::Identity => g,
                        Activation::Relu => g
                            .iter()
                            .zip(y)
                            .map(|(&x, &o)| if o > T::zero() { x } else { T::zero() })
                            .collect(),
                        Activation::Tanh => g
                            .iter()
                            .zip(y)
                            .map(|(&x, &o)| x * (T::one() - o * o))
                            .collect(),
                        Activation::Sigmoid => g
                            .iter()
                            .zip(y)
                            .map(|(&x, &o)| x * o * (T::one() - o))
                            .collect(),
                        Activation::Softmax => {
                            let mut out = vec![T::zero(); rows * cols];
                            for i in 0..rows {
                                let gr = &g[i * cols..(i + 1) * cols];
                                let yr = &y[i * cols..(i + 1) * cols];
                                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                                for j in 0..cols {
                                    out[i * cols + j] = yr[j] * (gr[j] - dot);
                                }
                            }
                            out
                        }
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.needs(p) {
                            let mut gp = Vec::with_capacity(rows * w);
                            for i in 0..rows {
                                gp.extend_from_slice(
                                    &g[i * cols + offset..i * cols + offset + w],
                                );
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::Slice(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = vec![T::zero(); r * c];
                    for i in 0..r {
                        ga[i * c + start..i * c + start + cols]
                            .copy_from_slice(&g[i * cols..(i + 1) * cols]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::SoftmaxCe {
                    logits,
                    probs,
                    targets,
                } => {
                    let (r, c) = self.shape(*logits);
                    let scale = g[0] / T::from_usize(r.max(1)).unwrap_or_else(T::one);
                    let tv = targets.values();
                    let mut gz = vec![T::zero(); r * c];
                    for i in 0..r {
                        let tsum: T = tv[i * c..(i + 1) * c].iter().copied().sum();
                        for j in 0..c {
                            gz[i * c + j] = scale * (probs[i * c + j] * tsum - tv[i * c + j]);
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }

        let mut out = GradientSet::new();
        for &(id, v) in &self.params {
            let t = &self.nodes[v.0].value;
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); t.len()]);
            out.insert(id, Tensor::new(t.shape().to_vec(), g)?);
        }
        Ok(out)
    }
}

/// `out[n, m] += a[n, k] · b[k, m]`, four output rows at a time. Each
/// element still accumulates in ascending `p`.
fn axpy_rows<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    let mut i = 0;
    while i + 4 <= n {
        let (o0, rest) = out[i * m..(i + 4) * m].split_at_mut(m);
        let (o1, rest) = rest.split_at_mut(m);
        let (o2, o3) = rest.split_at_mut(m);
        for p in 0..k {
            let x = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                let w = brow[j];
                o0[j] += x[0] * w;
                o1[j] += x[1] * w;
                o2[j] += x[2] * w;
                o3[j] += x[3] * w;
            }
        }
        i += 4;
    }
    for i in i..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, &w) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * w;
            }
        }
    }
}

/// `out[k, m] += a[n, k]ᵀ · g[n, m]`, accumulating over `i` in ascending
/// order, four rows of `g` per pass.
fn at_b<T: Scalar>(out: &mut [T], a: &[T], g: &[T], n: usize, k: usize, m: usize) {
    let mut i = 0;
    while i + 4 <= n {
        let g0 = &g[i * m..(i + 1) * m];
        let g1 = &g[(i + 1) * m..(i + 2) * m];
        let g2 = &g[(i + 2) * m..(i + 3) * m];
        let g3 = &g[(i + 3) * m..(i + 4) * m];
        for p in 0..k {
            let x = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            let orow = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                let mut o = orow[j];
                o += x[0] * g0[j];
                o += x[1] * g1[j];
                o += x[2] * g2[j];
                o += x[3] * g3[j];
                orow[j] = o;
            }
        }
        i += 4;
    }
    for i in i..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, &y) in out[p * m..(p + 1) * m].iter_mut().zip(grow) {
                *o += x * y;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(layer: usize) -> ParamId {
        ParamId {
            net: 0,
            layer,
            slot: Slot::Weight,
        }
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.param(pid(0), &Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap(), true);
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.value(y).values(), &[11.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&pid(0)].values(), &[1.0, 2.0]);
    }

    #[test]
    fn frozen_params_are_not_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.param(pid(0), &Tensor::vector(vec![1.0, 2.0]), false);
        let b = g.param(pid(1), &Tensor::vector(vec![3.0, 4.0]), true);
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(!grads.contains_key(&pid(0)));
        assert_eq!(grads[&pid(1)].values(), &[1.0, 2.0]);
    }

    #[test]
    fn squared_node_doubles_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(pid(0), &Tensor::vector(vec![3.0]), true);
        let sq = g.mul(a, a).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads[&pid(0)].values(), &[6.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = Graph::<f64>::new();
        let z = g.param(pid(0), &Tensor::matrix(1, 4, vec![0.0; 4]).unwrap(), true);
        let t = Tensor::matrix(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let l = g.softmax_cross_entropy(z, t).unwrap();
        assert!((g.value(l).values()[0] - 4f64.ln()).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads[&pid(0)].values(), &[0.25, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(g.matmul(a, b).is_err());
        assert!(g.slice_cols(a, 2, 5).is_err());
    }
}
