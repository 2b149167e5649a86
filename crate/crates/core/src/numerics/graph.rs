//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`] in creation order, so the
//! node list is already a topological order. [`Graph::backward`] walks it in
//! reverse exactly once, accumulating into the inputs of each node that
//! requires a gradient.
//!
//! ```
//! use visage_core::numerics::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{axis_extents, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Boundary handling of [`Graph::conv1d`]. Both keep the sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zeros on both sides; output `t` sees inputs `t-k/2 ..= t+k/2`.
    Same,
    /// Zeros on the left only; output `t` sees inputs `t-k+1 ..= t`.
    Causal,
}

impl Padding {
    fn offset(self, kernel: usize) -> usize {
        match self {
            Padding::Same => kernel / 2,
            Padding::Causal => kernel - 1,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        axis: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        keep: Vec<bool>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation. Confined to a single thread.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    backward_done: Cell<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf sharing an existing tensor without copying it.
    pub fn leaf_shared(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var {
        self.push_rc(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn val(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_ref())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (av, bv) = (self.val(a), self.val(b));
            let (m, k) = av.dims2().map_err(|_| shape_err("matmul", &[av.shape(), bv.shape()]))?;
            let (k2, n) = bv.dims2().map_err(|_| shape_err("matmul", &[av.shape(), bv.shape()]))?;
            if k != k2 {
                return Err(shape_err("matmul", &[av.shape(), bv.shape()]));
            }
            Tensor::new(vec![m, n], mm(av.data(), bv.data(), m, k, n))?
        };
        Ok(self.push(out, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = {
            let av = self.val(a);
            let (m, n) = av.dims2().map_err(|_| shape_err("transpose", &[av.shape()]))?;
            Tensor::new(vec![n, m], transpose(av.data(), m, n))?
        };
        Ok(self.push(out, Op::Transpose(a), self.needs(&[a])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (av, bv) = (self.val(a), self.val(b));
            if av.shape() != bv.shape() {
                return Err(shape_err("add", &[av.shape(), bv.shape()]));
            }
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Add(a, b), self.needs(&[a, b])))
    }

    /// Adds a vector of length `n` to every trailing slice of `a` (`[.., n]`).
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let out = {
            let (av, bv) = (self.val(a), self.val(bias));
            let n = bv.len();
            if bv.shape().len() != 1 || av.shape().last() != Some(&n) {
                return Err(shape_err("add_bias", &[av.shape(), bv.shape()]));
            }
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv.data()[i % n])
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::AddBias(a, bias), self.needs(&[a, bias])))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (av, bv) = (self.val(a), self.val(b));
            if av.shape() != bv.shape() {
                return Err(shape_err("mul", &[av.shape(), bv.shape()]));
            }
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Mul(a, b), self.needs(&[a, b])))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.val(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), self.needs(&[a]))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.val(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.needs(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.val(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), self.needs(&[a]))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let out = {
            let av = self.val(a);
            if axis >= av.shape().len() {
                return Err(shape_err("softmax", &[av.shape(), &[axis]]));
            }
            let (outer, n, inner) = axis_extents(av.shape(), axis);
            let mut data = av.data().to_vec();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let max = (0..n).map(|k| data[idx(k)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for k in 0..n {
                        let e = (data[idx(k)] - max).exp();
                        data[idx(k)] = e;
                        total = total + e;
                    }
                    for k in 0..n {
                        data[idx(k)] = data[idx(k)] / total;
                    }
                }
            }
            Tensor::new(av.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::Softmax { input: a, axis }, self.needs(&[a])))
    }

    /// Row softmax of a 2-D tensor where `allowed[r * cols + c] == false`
    /// forces probability exactly zero. Every row needs one allowed entry.
    pub fn masked_softmax(&self, a: Var, allowed: &[bool]) -> Result<Var> {
        let out = {
            let av = self.val(a);
            let (rows, cols) = av.dims2().map_err(|_| shape_err("masked_softmax", &[av.shape()]))?;
            if allowed.len() != rows * cols {
                return Err(shape_err("masked_softmax", &[av.shape(), &[allowed.len()]]));
            }
            let mut data = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let span = r * cols..(r + 1) * cols;
                let x = &av.data()[span.clone()];
                let ok = &allowed[span.clone()];
                let max = x
                    .iter()
                    .zip(ok)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
                    .fold(T::neg_infinity(), T::max);
                if max == T::neg_infinity() {
                    return Err(shape_err("masked_softmax (fully masked row)", &[&[r]]));
                }
                let row = &mut data[span];
                let mut total = T::zero();
                for c in 0..cols {
                    if ok[c] {
                        row[c] = (x[c] - max).exp();
                        total = total + row[c];
                    }
                }
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
            Tensor::new(vec![rows, cols], data)?
        };
        Ok(self.push(out, Op::MaskedSoftmax(a), self.needs(&[a])))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance, then
    /// applies `gain` and `bias` (both of the slice length).
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var, axis: usize) -> Result<Var> {
        let eps = T::of(1e-5);
        let (out, xhat, inv_std) = {
            let (av, gv, bv) = (self.val(a), self.val(gain), self.val(bias));
            if axis >= av.shape().len() {
                return Err(shape_err("layer_norm", &[av.shape(), &[axis]]));
            }
            let (outer, n, inner) = axis_extents(av.shape(), axis);
            if gv.shape() != [n] || bv.shape() != [n] {
                return Err(shape_err("layer_norm", &[av.shape(), gv.shape(), bv.shape()]));
            }
            let nt = T::of(n as f64);
            let mut xhat = vec![T::zero(); av.len()];
            let mut out = vec![T::zero(); av.len()];
            let mut inv_std = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let mean = (0..n).map(|k| av.data()[idx(k)]).sum::<T>() / nt;
                    let var = (0..n)
                        .map(|k| {
                            let d = av.data()[idx(k)] - mean;
                            d * d
                        })
                        .sum::<T>()
                        / nt;
                    let is = T::one() / (var + eps).sqrt();
                    inv_std.push(is);
                    for k in 0..n {
                        let xh = (av.data()[idx(k)] - mean) * is;
                        xhat[idx(k)] = xh;
                        out[idx(k)] = xh * gv.data()[k] + bv.data()[k];
                    }
                }
            }
            (Tensor::new(av.shape().to_vec(), out)?, xhat, inv_std)
        };
        let op = Op::LayerNorm {
            input: a,
            gain,
            bias,
            axis,
            xhat,
            inv_std,
        };
        Ok(self.push(out, op, self.needs(&[a, gain, bias])))
    }

    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        let out = {
            let vals: Vec<_> = inputs.iter().map(|&v| self.val(v)).collect();
            let first = vals.first().ok_or_else(|| shape_err("concat", &[]))?;
            let rank = first.shape().len();
            if axis >= rank {
                return Err(shape_err("concat", &[first.shape(), &[axis]]));
            }
            for v in &vals {
                let same = v.shape().len() == rank
                    && (0..rank).all(|d| d == axis || v.shape()[d] == first.shape()[d]);
                if !same {
                    return Err(shape_err("concat", &[first.shape(), v.shape()]));
                }
            }
            let (outer, _, inner) = axis_extents(first.shape(), axis);
            let total: usize = vals.iter().map(|v| v.shape()[axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &vals {
                    let chunk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = total;
            Tensor::new(shape, data)?
        };
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.push(out, op, self.needs(inputs)))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = {
            let av = self.val(a);
            if axis >= av.shape().len() || start + len > av.shape()[axis] {
                return Err(shape_err("narrow", &[av.shape(), &[axis, start, len]]));
            }
            let (outer, n, inner) = axis_extents(av.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * n + start) * inner;
                data.extend_from_slice(&av.data()[from..from + len * inner]);
            }
            let mut shape = av.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Narrow { input: a, axis, start }, self.needs(&[a])))
    }

    /// Gathers rows of a `[vocab x d]` table.
    pub fn embedding(&self, table: Var, indices: &[usize]) -> Result<Var> {
        let out = {
            let tv = self.val(table);
            let (vocab, d) = tv.dims2().map_err(|_| shape_err("embedding", &[tv.shape()]))?;
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                if i >= vocab {
                    return Err(Error::TokenOutOfVocabulary { token: i, vocab });
                }
                data.extend_from_slice(tv.row(i));
            }
            Tensor::new(vec![indices.len(), d], data)?
        };
        let op = Op::Embedding {
            table,
            indices: indices.to_vec(),
        };
        Ok(self.push(out, op, self.needs(&[table])))
    }

    /// 1-D convolution along the time axis. `input` is `[len x c_in]`,
    /// `weight` is `[c_out x c_in x kernel]`, `bias` is `[c_out]`; the output
    /// is `[len x c_out]`.
    pub fn conv1d(&self, input: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
        let out = {
            let (xv, wv, bv) = (self.val(input), self.val(weight), self.val(bias));
            let err = || shape_err("conv1d", &[xv.shape(), wv.shape(), bv.shape()]);
            let (len, c_in) = xv.dims2().map_err(|_| err())?;
            let &[c_out, wc, k] = wv.shape() else {
                return Err(err());
            };
            if wc != c_in || bv.shape() != [c_out] || k == 0 {
                return Err(err());
            }
            let off = padding.offset(k);
            let (x, w) = (xv.data(), wv.data());
            let mut data = vec![T::zero(); len * c_out];
            for t in 0..len {
                let row = &mut data[t * c_out..(t + 1) * c_out];
                row.copy_from_slice(bv.data());
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(off).filter(|&s| s < len) else {
                        continue;
                    };
                    let xr = &x[src * c_in..(src + 1) * c_in];
                    for (o, acc) in row.iter_mut().enumerate() {
                        let wo = &w[o * c_in * k..(o + 1) * c_in * k];
                        let mut s = T::zero();
                        for c in 0..c_in {
                            s = s + wo[c * k + j] * xr[c];
                        }
                        *acc = *acc + s;
                    }
                }
            }
            Tensor::new(vec![len, c_out], data)?
        };
        let op = Op::Conv1d {
            input,
            weight,
            bias,
            padding,
        };
        Ok(self.push(out, op, self.needs(&[input, weight, bias])))
    }

    /// Inverted dropout: at train time zeroes each element with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`; identity otherwise.
    pub fn dropout(&self, a: Var, rate: f64, train: bool, seed: u64) -> Result<Var> {
        if !train || rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be below 1")));
        }
        let shape = self.shape(a);
        let keep = T::of(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.mul(a, mask)
    }

    /// Mean negative log-likelihood of `targets` under the row softmax of
    /// `logits` (`[rows x classes]`), over the rows where `keep` is true.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], keep: &[bool]) -> Result<Var> {
        let (loss, probs) = {
            let lv = self.val(logits);
            let (rows, classes) = lv.dims2().map_err(|_| shape_err("cross_entropy", &[lv.shape()]))?;
            if targets.len() != rows || keep.len() != rows {
                return Err(shape_err(
                    "cross_entropy",
                    &[lv.shape(), &[targets.len()], &[keep.len()]],
                ));
            }
            let count = keep.iter().filter(|&&k| k).count();
            if count == 0 {
                return Err(Error::AllPadded);
            }
            let mut probs = vec![T::zero(); rows * classes];
            let mut total = T::zero();
            for r in 0..rows {
                let x = lv.row(r);
                let max = x.iter().copied().fold(T::neg_infinity(), T::max);
                let z: T = x.iter().map(|&v| (v - max).exp()).sum();
                for c in 0..classes {
                    probs[r * classes + c] = (x[c] - max).exp() / z;
                }
                if keep[r] {
                    let t = targets[r];
                    if t >= classes {
                        return Err(Error::TokenOutOfVocabulary { token: t, vocab: classes });
                    }
                    total = total + (z.ln() + max - x[t]);
                }
            }
            (total / T::of(count as f64), probs)
        };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            keep: keep.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, self.needs(&[logits])))
    }

    /// Runs the reverse pass from a one-element `loss`. Leaves that require a
    /// gradient but are not connected to `loss` receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(shape, T::one()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match n.op {
                Op::Leaf if n.requires_grad => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(n.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves that required one, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    g: Tensor<T>,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |v: Var| nodes[v.0].value.as_ref();
    let wants = |v: Var| nodes[v.0].requires_grad;
    let shape = g.shape().to_vec();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if wants(a) {
                let ga = mm_a_bt(g.data(), bv.data(), m, n, k);
                accumulate(nodes, grads, a, Tensor::new(vec![m, k], ga).unwrap());
            }
            if wants(b) {
                let gb = mm_at_b(av.data(), g.data(), m, k, n);
                accumulate(nodes, grads, b, Tensor::new(vec![k, n], gb).unwrap());
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = (shape[0], shape[1]);
            accumulate(nodes, grads, a, Tensor::new(vec![c, r], transpose(g.data(), r, c)).unwrap());
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        &Op::AddBias(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            if wants(b) {
                let n = val(b).len();
                let mut gb = vec![T::zero(); n];
                for (i, &x) in g.data().iter().enumerate() {
                    gb[i % n] = gb[i % n] + x;
                }
                accumulate(nodes, grads, b, Tensor::from_vec(gb));
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, a, Tensor::new(shape.clone(), d).unwrap());
            }
            if wants(b) {
                let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, b, Tensor::new(shape.clone(), d).unwrap());
            }
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, g.map(|x| x * c)),
        &Op::Sum(a) => {
            let av = val(a);
            accumulate(nodes, grads, a, Tensor::filled(av.shape(), g.data()[0]));
        }
        &Op::Relu(a) => {
            let av = val(a);
            let d = g
                .data()
                .iter()
                .zip(av.data())
                .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                .collect();
            accumulate(nodes, grads, a, Tensor::new(shape, d).unwrap());
        }
        &Op::Softmax { input, axis } => {
            let y = node.value.as_ref();
            let (outer, n, inner) = axis_extents(&shape, axis);
            let mut d = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let dot: T = (0..n).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                    for k in 0..n {
                        d[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, input, Tensor::new(shape, d).unwrap());
        }
        &Op::MaskedSoftmax(input) => {
            let y = node.value.as_ref();
            let cols = shape[1];
            let mut d = vec![T::zero(); g.len()];
            for r in 0..shape[0] {
                let span = r * cols..(r + 1) * cols;
                let (gr, yr) = (&g.data()[span.clone()], &y.data()[span.clone()]);
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for (c, out) in d[span].iter_mut().enumerate() {
                    *out = yr[c] * (gr[c] - dot);
                }
            }
            accumulate(nodes, grads, input, Tensor::new(shape, d).unwrap());
        }
        Op::LayerNorm {
            input,
            gain,
            bias,
            axis,
            xhat,
            inv_std,
        } => {
            let gv = val(*gain);
            let (outer, n, inner) = axis_extents(&shape, *axis);
            let nt = T::of(n as f64);
            let mut dx = vec![T::zero(); g.len()];
            let mut dgain = vec![T::zero(); n];
            let mut dbias = vec![T::zero(); n];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for k in 0..n {
                        let gk = g.data()[idx(k)];
                        dgain[k] = dgain[k] + gk * xhat[idx(k)];
                        dbias[k] = dbias[k] + gk;
                        let dxh = gk * gv.data()[k];
                        sum_d = sum_d + dxh;
                        sum_dx = sum_dx + dxh * xhat[idx(k)];
                    }
                    let is = inv_std[o * inner + i];
                    for k in 0..n {
                        let dxh = g.data()[idx(k)] * gv.data()[k];
                        dx[idx(k)] = is / nt * (nt * dxh - sum_d - xhat[idx(k)] * sum_dx);
                    }
                }
            }
            accumulate(nodes, grads, *input, Tensor::new(shape, dx).unwrap());
            accumulate(nodes, grads, *gain, Tensor::from_vec(dgain));
            accumulate(nodes, grads, *bias, Tensor::from_vec(dbias));
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_extents(&shape, *axis);
            let mut offset = 0;
            for &v in inputs {
                let vs = val(v).shape().to_vec();
                let n = vs[*axis];
                if wants(v) {
                    let mut d = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[from..from + n * inner]);
                    }
                    accumulate(nodes, grads, v, Tensor::new(vs, d).unwrap());
                }
                offset += n;
            }
        }
        &Op::Narrow { input, axis, start } => {
            let full = val(input).shape().to_vec();
            let (outer, n, inner) = axis_extents(&full, axis);
            let len = shape[axis];
            let mut d = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                let to = (o * n + start) * inner;
                let from = o * len * inner;
                d[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
            }
            accumulate(nodes, grads, input, Tensor::new(full, d).unwrap());
        }
        Op::Embedding { table, indices } => {
            let ts = val(*table).shape().to_vec();
            let dim = ts[1];
            let mut d = vec![T::zero(); ts[0] * dim];
            for (r, &i) in indices.iter().enumerate() {
                for c in 0..dim {
                    d[i * dim + c] = d[i * dim + c] + g.data()[r * dim + c];
                }
            }
            accumulate(nodes, grads, *table, Tensor::new(ts, d).unwrap());
        }
        &Op::Conv1d {
            input,
            weight,
            bias,
            padding,
        } => {
            let (xv, wv) = (val(input), val(weight));
            let (len, c_in) = (xv.shape()[0], xv.shape()[1]);
            let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
            let off = padding.offset(k);
            let (x, w, gd) = (xv.data(), wv.data(), g.data());
            let mut dx = vec![T::zero(); len * c_in];
            let mut dw = vec![T::zero(); c_out * c_in * k];
            let mut db = vec![T::zero(); c_out];
            for t in 0..len {
                let gr = &gd[t * c_out..(t + 1) * c_out];
                for (o, &go) in gr.iter().enumerate() {
                    db[o] = db[o] + go;
                }
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(off).filter(|&s| s < len) else {
                        continue;
                    };
                    for (o, &go) in gr.iter().enumerate() {
                        let base = o * c_in * k;
                        for c in 0..c_in {
                            dx[src * c_in + c] = dx[src * c_in + c] + w[base + c * k + j] * go;
                            dw[base + c * k + j] = dw[base + c * k + j] + x[src * c_in + c] * go;
                        }
                    }
                }
            }
            accumulate(nodes, grads, input, Tensor::new(vec![len, c_in], dx).unwrap());
            accumulate(nodes, grads, weight, Tensor::new(vec![c_out, c_in, k], dw).unwrap());
            accumulate(nodes, grads, bias, Tensor::from_vec(db));
        }
        Op::CrossEntropy {
            logits,
            targets,
            keep,
            probs,
        } => {
            let ls = val(*logits).shape().to_vec();
            let classes = ls[1];
            let count = keep.iter().filter(|&&k| k).count();
            let scale = g.data()[0] / T::of(count as f64);
            let mut d = vec![T::zero(); probs.len()];
            for (r, (&t, &k)) in targets.iter().zip(keep).enumerate() {
                if !k {
                    continue;
                }
                for c in 0..classes {
                    let onehot = if c == t { T::one() } else { T::zero() };
                    d[r * classes + c] = (probs[r * classes + c] - onehot) * scale;
                }
            }
            accumulate(nodes, grads, *logits, Tensor::new(ls, d).unwrap());
        }
    }
}

/// `[m x k] * [k x n]`
pub(crate) fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (cij, &bpj) in ci.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cij = *cij + aip * bpj;
            }
        }
    }
    c
}

/// `[m x n] * [k x n]^T -> [m x k]`
fn mm_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for i in 0..m {
        let ai = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let bj = &b[j * n..(j + 1) * n];
            c[i * k + j] = ai.iter().zip(bj).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `[m x k]^T * [m x n] -> [k x n]`
fn mm_at_b<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (cpj, &bij) in c[p * n..(p + 1) * n].iter_mut().zip(bi) {
                *cpj = *cpj + aip * bij;
            }
        }
    }
    c
}

fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}
