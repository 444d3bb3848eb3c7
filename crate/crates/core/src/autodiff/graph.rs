//! Dynamic tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::instrument::ActivationMeter;
use crate::scalar::Scalar;

/// Probability clamp applied by [`Graph::bce_loss`].
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    MeanPool(Var, usize),
    Gather(Var, Vec<usize>),
    Matmul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Bce(Var, Var),
    MseHalf(Var, Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::MeanPool(..) => "mean_pool",
            Op::Gather(..) => "gather",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Bce(..) => "bce_loss",
            Op::MseHalf(..) => "mse_half",
        }
    }

    /// Nodes whose values the backward rule reads.
    fn saved(&self, out: Var) -> Vec<Var> {
        match self {
            Op::Mul(a, b) | Op::Matmul(a, b) | Op::Bce(a, b) | Op::MseHalf(a, b) => vec![*a, *b],
            Op::Sigmoid(_) | Op::Tanh(_) | Op::Softmax(..) => vec![out],
            Op::Relu(a) => vec![*a],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: bool,
    retain: bool,
    charged: bool,
}

/// Gradients returned by [`Graph::backward`], indexed by node.
///
/// Only grad-enabled leaves and nodes marked with [`Graph::retain_grad`] keep
/// their gradient.
#[derive(Debug)]
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

/// A single-use computation graph.
///
/// A graph is confined to the thread that built it.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    no_grad: bool,
    consumed: bool,
    meter: Option<ActivationMeter>,
    charged_total: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    fn build(no_grad: bool, meter: Option<ActivationMeter>) -> Self {
        Self {
            nodes: Vec::new(),
            no_grad,
            consumed: false,
            meter,
            charged_total: 0,
        }
    }

    pub fn new() -> Self {
        Self::build(false, None)
    }

    /// Graph that charges saved activations to `meter`.
    pub fn with_meter(meter: ActivationMeter) -> Self {
        Self::build(false, Some(meter))
    }

    /// Graph that records nothing for backward; every leaf is treated as a
    /// constant.
    pub fn inference() -> Self {
        Self::build(true, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Elements currently charged to the meter by this graph.
    pub fn saved_elements(&self) -> usize {
        self.charged_total
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && !self.no_grad,
            param,
            retain: false,
            charged: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter leaf. Parameters are never charged as activations.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, true)
    }

    /// Input leaf, optionally grad-enabled.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, false)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, false)
    }

    /// Keep the gradient of an intermediate node after backward.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    fn push_op(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let out = Var(self.nodes.len());
        let saved = if requires_grad {
            op.saved(out)
        } else {
            Vec::new()
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: false,
            retain: false,
            charged: false,
        });
        for s in saved {
            let node = &mut self.nodes[s.0];
            if node.charged || node.param {
                continue;
            }
            node.charged = true;
            let n = node.value.numel();
            self.charged_total += n;
            if let Some(m) = &self.meter {
                m.charge(n);
            }
        }
        Ok(out)
    }

    fn release(&mut self) {
        if let Some(m) = &self.meter {
            m.release(self.charged_total);
        }
        self.charged_total = 0;
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(Op::Add(a, b), v, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(Op::Sub(a, b), v, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(Op::Mul(a, b), v, &[a, b])
    }

    /// `a[m x n] + bias[1 x n]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_row")?;
        let (br, bc) = self.value(bias).dims2("add_row")?;
        if br != 1 || bc != n {
            return Err(Error::shape(
                "add_row",
                format!("bias {br}x{bc} for {m}x{n} input"),
            ));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % n])
            .collect();
        let v = Tensor::new(vec![m, n], data)?;
        self.push_op(Op::AddRow(a, bias), v, &[a, bias])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push_op(Op::Scale(a, s), v, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push_op(Op::Sigmoid(a), v, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push_op(Op::Tanh(a), v, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push_op(Op::Relu(a), v, &[a])
    }

    /// Numerically stable softmax along `axis` of a rank-2 tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("softmax")?;
        if axis > 1 {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} on rank-2 tensor"),
            ));
        }
        let mut out = x.data().to_vec();
        for_each_lane(r, c, axis, |idx| {
            let m = idx.iter().fold(T::neg_infinity(), |m, &i| m.max(out[i]));
            let mut total = T::zero();
            for &i in idx {
                out[i] = (out[i] - m).exp();
                total += out[i];
            }
            for &i in idx {
                out[i] /= total;
            }
        });
        let v = Tensor::new(vec![r, c], out)?;
        self.push_op(Op::Softmax(a, axis), v, &[a])
    }

    /// Concatenate rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let (r0, c0) = self.value(first).dims2("concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => false,
            };
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("cannot join {r}x{c} to {r0}x{c0} on axis {axis}"),
                ));
            }
            dims.push((r, c));
        }
        let v = match axis {
            0 => {
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(vec![rows, c0], data)?
            }
            _ => {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for (&p, &(_, c)) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
        };
        self.push_op(Op::Concat(parts.to_vec(), axis), v, parts)
    }

    /// Mean over `axis` of a rank-2 tensor; the reduced axis is kept with size 1.
    pub fn mean_pool(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("mean_pool")?;
        let v = match axis {
            0 => {
                let mut acc = vec![T::zero(); c];
                for i in 0..r {
                    for (j, s) in acc.iter_mut().enumerate() {
                        *s += x.data()[i * c + j];
                    }
                }
                let n = T::from_usize_lossy(r);
                Tensor::new(vec![1, c], acc.into_iter().map(|s| s / n).collect())?
            }
            1 => {
                let n = T::from_usize_lossy(c);
                let data = x
                    .data()
                    .chunks(c)
                    .map(|row| row.iter().copied().sum::<T>() / n)
                    .collect();
                Tensor::new(vec![r, 1], data)?
            }
            _ => {
                return Err(Error::shape(
                    "mean_pool",
                    format!("axis {axis} on rank-2 tensor"),
                ))
            }
        };
        self.push_op(Op::MeanPool(a, axis), v, &[a])
    }

    /// Row lookup: `table[V x d]` at `ids` gives `[|ids| x d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2("gather")?;
        if ids.is_empty() {
            return Err(Error::shape("gather", "empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    op: "gather",
                    id,
                    len: rows,
                });
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let v = Tensor::new(vec![ids.len(), d], data)?;
        self.push_op(Op::Gather(table, ids.to_vec()), v, &[table])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push_op(Op::Matmul(a, b), v, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transposed()?;
        self.push_op(Op::Transpose(a), v, &[a])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push_op(Op::Sum(a), v, &[a])
    }

    /// Mean binary cross-entropy. `p` is clamped to `[1e-12, 1 - 1e-12]`;
    /// `y` must hold only 0 and 1 and receives no gradient.
    pub fn bce_loss(&mut self, p: Var, y: Var) -> Result<Var> {
        self.same_shape("bce_loss", p, y)?;
        if self.nodes[y.0].requires_grad {
            return Err(Error::Validation(
                "bce_loss labels must not require grad".into(),
            ));
        }
        let labels = self.value(y).data();
        if labels.iter().any(|&l| l != T::zero() && l != T::one()) {
            return Err(Error::Validation("bce_loss labels must be 0 or 1".into()));
        }
        let eps = T::lit(BCE_EPS);
        let probs = self.value(p).data();
        let n = T::from_usize_lossy(probs.len());
        let total: T = probs
            .iter()
            .zip(labels)
            .map(|(&p, &l)| {
                let pc = p.max(eps).min(T::one() - eps);
                -(l * pc.ln() + (T::one() - l) * (T::one() - pc).ln())
            })
            .sum();
        self.push_op(Op::Bce(p, y), Tensor::scalar(total / n), &[p, y])
    }

    /// `0.5 * sum((a - b)^2)` over all elements.
    pub fn mse_half(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_half", a, b)?;
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push_op(
            Op::MseHalf(a, b),
            Tensor::scalar(T::lit(0.5) * total),
            &[a, b],
        )
    }

    /// Reverse sweep from a scalar `loss`. The graph is consumed: a second
    /// call is a state error, and its saved activations are released.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::State("backward called on a consumed graph".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {} is not part of this graph",
                loss.0
            )));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::State(
                "loss does not depend on any grad-enabled leaf".into(),
            ));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));
        let mut kept: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for (input, grad) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
            let node = &self.nodes[i];
            if (matches!(node.op, Op::Leaf) && node.requires_grad) || node.retain {
                kept[i] = Some(g);
            }
        }
        self.release();
        Ok(Gradients { grads: kept })
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let grads = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)),
                (*b, g.zip_map(val(*a), |x, y| x * y)),
            ],
            Op::AddRow(a, b) => {
                let (_, n) = g.dims2("add_row")?;
                let mut gb = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (s, &x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                vec![(*a, g.clone()), (*b, Tensor::new(vec![1, n], gb)?)]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * *s))],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |x, y| x * y * (T::one() - y)))],
            Op::Tanh(a) => vec![(*a, g.zip_map(out, |x, y| x * (T::one() - y * y)))],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(val(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
            )],
            Op::Softmax(a, axis) => {
                let (r, c) = out.dims2("softmax")?;
                let mut ga = vec![T::zero(); r * c];
                let (y, gd) = (out.data(), g.data());
                for_each_lane(r, c, *axis, |idx| {
                    let dot: T = idx.iter().map(|&k| gd[k] * y[k]).sum();
                    for &k in idx {
                        ga[k] = y[k] * (gd[k] - dot);
                    }
                });
                vec![(*a, Tensor::new(vec![r, c], ga)?)]
            }
            Op::Concat(parts, axis) => {
                let (rows, cols) = g.dims2("concat")?;
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).dims2("concat")?;
                    let data = if *axis == 0 {
                        g.data()[offset * cols..(offset + r) * cols].to_vec()
                    } else {
                        (0..rows)
                            .flat_map(|i| {
                                g.data()[i * cols + offset..i * cols + offset + c]
                                    .iter()
                                    .copied()
                            })
                            .collect()
                    };
                    offset += if *axis == 0 { r } else { c };
                    res.push((p, Tensor::new(vec![r, c], data)?));
                }
                res
            }
            Op::MeanPool(a, axis) => {
                let (r, c) = val(*a).dims2("mean_pool")?;
                let data: Vec<T> = if *axis == 0 {
                    let n = T::from_usize_lossy(r);
                    (0..r * c).map(|k| g.data()[k % c] / n).collect()
                } else {
                    let n = T::from_usize_lossy(c);
                    (0..r * c).map(|k| g.data()[k / c] / n).collect()
                };
                vec![(*a, Tensor::new(vec![r, c], data)?)]
            }
            Op::Gather(table, ids) => {
                let t = val(*table);
                let (_, d) = t.dims2("gather")?;
                let mut gt = Tensor::zeros_like(t);
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                    for (s, &x) in dst.iter_mut().zip(&g.data()[row * d..(row + 1) * d]) {
                        *s += x;
                    }
                }
                vec![(*table, gt)]
            }
            Op::Matmul(a, b) => {
                let ga = g.matmul(&val(*b).transposed()?)?;
                let gb = val(*a).transposed()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, g.transposed()?)],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.item()?))],
            Op::Bce(p, y) => {
                let eps = T::lit(BCE_EPS);
                let up = g.item()?;
                let probs = val(*p);
                let n = T::from_usize_lossy(probs.numel());
                let data = probs
                    .data()
                    .iter()
                    .zip(val(*y).data())
                    .map(|(&p, &l)| {
                        if p < eps || p > T::one() - eps {
                            T::zero()
                        } else {
                            up * (p - l) / (p * (T::one() - p)) / n
                        }
                    })
                    .collect();
                vec![(*p, Tensor::new(probs.shape().to_vec(), data)?)]
            }
            Op::MseHalf(a, b) => {
                let up = g.item()?;
                let d = val(*a).zip_map(val(*b), |x, y| up * (x - y));
                let neg = val(*b).zip_map(val(*a), |y, x| up * (y - x));
                vec![(*a, d), (*b, neg)]
            }
        };
        Ok(grads)
    }
}

impl<T> Drop for Graph<T> {
    fn drop(&mut self) {
        if let Some(m) = &self.meter {
            m.release(self.charged_total);
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Visit each lane (row for axis 1, column for axis 0) as a list of flat indices.
fn for_each_lane(r: usize, c: usize, axis: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = Vec::with_capacity(r.max(c));
    if axis == 1 {
        for i in 0..r {
            idx.clear();
            idx.extend(i * c..(i + 1) * c);
            f(&idx);
        }
    } else {
        for j in 0..c {
            idx.clear();
            idx.extend((0..r).map(|i| i * c + j));
            f(&idx);
        }
    }
}
