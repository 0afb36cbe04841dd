use super::gemm::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalise with batch statistics and fold them into the running ones.
    Train,
    /// Normalise with the running statistics; rows are independent.
    Eval,
}

/// Running mean and (biased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Weight kept on the old statistics at each update.
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        RunningStats {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
            momentum,
            eps,
        }
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::of(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::of(v.as_f64())).collect(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Nodes are appended in evaluation order, which is a
/// topological order of the graph.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn f64_sum<T: Scalar>(it: impl Iterator<Item = T>) -> f64 {
    it.map(Scalar::as_f64).sum()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fingerprint of the linear piece the recording lies on: the sign of
    /// every relu input and every max-pool winner. Two recordings of the same
    /// graph with equal signatures are on the same smooth piece, which is
    /// what finite-difference checks need.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.dims2()
            .map_err(|_| Error::invalid(op, format!("expected rank 2, got {:?}", t.shape())))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x + bias` with `bias` of shape `1 x c` repeated over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.dims(x, "add_bias")?;
        let bshape = self.value(bias).shape();
        if bshape != [1, c] {
            return Err(mismatch("add_bias", self.value(x).shape(), bshape));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o = *o + *bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let f = T::of(factor);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * f).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .map(|&v| T::of(crate::geometry::sigmoid(v.as_f64())))
                .collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax along `axis` (0: down columns, 1: across rows).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (n, c) = self.dims(x, "softmax")?;
        if axis > 1 {
            return Err(Error::invalid("softmax", format!("axis {axis} on rank 2")));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (n, c, c, 1) } else { (c, n, 1, c) };
        for o in 0..outer {
            let at = |i: usize| o * stride_o + i * stride_i;
            let max = (0..inner).map(|i| src[at(i)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..inner).map(|i| (src[at(i)].as_f64() - max).exp()).sum();
            for i in 0..inner {
                out[at(i)] = T::of((src[at(i)].as_f64() - max).exp() / denom);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::Softmax { x, axis }, rg))
    }

    /// Max over `axis` in consecutive groups of `group` entries: pooling over
    /// axis 0 with `group = rows` reduces to one row, and smaller groups pool
    /// several stacked point sets at once. Ties go to the first maximum.
    pub fn max_pool(&mut self, x: Var, axis: usize, group: usize) -> Result<Var> {
        let (n, c) = self.dims(x, "max_pool")?;
        let len = if axis == 0 { n } else { c };
        if axis > 1 || group == 0 || len % group != 0 {
            return Err(Error::invalid(
                "max_pool",
                format!("cannot pool axis {axis} of {:?} in groups of {group}", [n, c]),
            ));
        }
        let src = self.value(x).data();
        let groups = len / group;
        let (out_shape, stride_o, stride_i) = if axis == 0 {
            (vec![groups, c], 1, c)
        } else {
            (vec![n, groups], c, 1)
        };
        let mut out = Vec::with_capacity(out_shape[0] * out_shape[1]);
        let mut argmax = Vec::with_capacity(out.capacity());
        // Output is row-major over out_shape; visit it in that order.
        let (rows_out, cols_out) = (out_shape[0], out_shape[1]);
        for r in 0..rows_out {
            for cc in 0..cols_out {
                let (g, o) = if axis == 0 { (r, cc) } else { (cc, r) };
                let base = o * stride_o + g * group * stride_i;
                let mut best = base;
                for i in 1..group {
                    let idx = base + i * stride_i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Mean along `axis`, accumulated in f64.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (n, c) = self.dims(x, "mean")?;
        let src = self.value(x).data();
        let out: Vec<T> = match axis {
            0 => (0..c)
                .map(|j| T::of(f64_sum((0..n).map(|i| src[i * c + j])) / n as f64))
                .collect(),
            1 => (0..n)
                .map(|i| T::of(f64_sum(src[i * c..(i + 1) * c].iter().copied()) / c as f64))
                .collect(),
            _ => return Err(Error::invalid("mean", format!("axis {axis} on rank 2"))),
        };
        let shape = if axis == 0 { vec![1, c] } else { vec![n, 1] };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mean { x, axis }, rg))
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = f64_sum(self.value(x).data().iter().copied());
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no operands"))?;
        let (n0, c0) = self.dims(first, "concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (n, c) = self.dims(p, "concat")?;
            let ok = match axis {
                0 => c == c0,
                1 => n == n0,
                _ => return Err(Error::invalid("concat", format!("axis {axis} on rank 2"))),
            };
            if !ok {
                return Err(mismatch("concat", self.value(first).shape(), self.value(p).shape()));
            }
            dims.push((n, c));
        }
        let (out_shape, data) = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            (vec![rows, c0], data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(n0 * cols);
            for i in 0..n0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            (vec![n0, cols], data)
        };
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.dims(x, "slice")?;
        let len = match axis {
            0 => n,
            1 => c,
            _ => return Err(Error::invalid("slice", format!("axis {axis} on rank 2"))),
        };
        if start > end || end > len {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} out of bounds for axis {axis} of {:?}", [n, c]),
            ));
        }
        let src = self.value(x).data();
        let (shape, data) = if axis == 0 {
            (vec![end - start, c], src[start * c..end * c].to_vec())
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(n * w);
            for i in 0..n {
                data.extend_from_slice(&src[i * c + start..i * c + end]);
            }
            (vec![n, w], data)
        };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, rg))
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(x, "gather_rows")?;
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("gather_rows", format!("row {bad} of {n}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![index.len(), c], data)?,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Batch normalisation of `x` (`n x c`) followed by `gamma * xhat + beta`.
    /// `gamma` and `beta` are `1 x c` or `n x c`. In train mode `stats` is
    /// updated with the batch mean and biased variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode,
        stats: &mut RunningStats<T>,
    ) -> Result<Var> {
        let (n, c) = self.dims(x, "batch_norm")?;
        for p in [gamma, beta] {
            let s = self.value(p).shape();
            if s != [1, c] && s != [n, c] {
                return Err(mismatch("batch_norm", self.value(x).shape(), s));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(mismatch("batch_norm", self.value(x).shape(), &[stats.mean.len()]));
        }
        if mode == BatchNormMode::Train && n == 0 {
            return Err(Error::invalid("batch_norm", "empty batch in train mode"));
        }
        let src = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        let mut inv_std = vec![T::zero(); c];
        match mode {
            BatchNormMode::Train => {
                let mut var = vec![0.0f64; c];
                for row in src.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for row in src.chunks_exact(c) {
                    for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = x.as_f64() - m;
                        *v += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let m = stats.momentum;
                for j in 0..c {
                    inv_std[j] = T::of(1.0 / (var[j] + stats.eps).sqrt());
                    stats.mean[j] = T::of(m * stats.mean[j].as_f64() + (1.0 - m) * mean[j]);
                    stats.var[j] = T::of(m * stats.var[j].as_f64() + (1.0 - m) * var[j]);
                }
            }
            BatchNormMode::Eval => {
                for j in 0..c {
                    mean[j] = stats.mean[j].as_f64();
                    inv_std[j] = T::of(1.0 / (stats.var[j].as_f64() + stats.eps).sqrt());
                }
            }
        }
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let mut xhat = src.to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean_t[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let (g_step, b_step) = (if g.shape()[0] == 1 { 0 } else { c }, if b.shape()[0] == 1 { 0 } else { c });
        let (gd, bd) = (g.data(), b.data());
        let mut out = xhat.clone();
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            let gr = &gd[i * g_step..i * g_step + c];
            let br = &bd[i * b_step..i * b_step + c];
            for j in 0..c {
                row[j] = gr[j] * row[j] + br[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(vec![n, c], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == BatchNormMode::Train,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
    /// in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(mismatch("bce_with_logits", t.shape(), &[targets.len()]));
        }
        if targets.is_empty() {
            return Err(Error::invalid("bce_with_logits", "no targets"));
        }
        let total: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| {
                let x = x.as_f64();
                let y = if y { 1.0 } else { 0.0 };
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let value = Tensor::scalar(T::of(total / targets.len() as f64));
        let targets = targets.iter().map(|&y| if y { T::one() } else { T::zero() }).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::BceWithLogits { logits, targets }, rg))
    }

    /// Mean softmax cross-entropy over the rows where `mask` is set. With no
    /// rows selected the loss is 0 and nothing flows back.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
        let (n, k) = self.dims(logits, "cross_entropy")?;
        if labels.len() != n || mask.len() != n {
            return Err(mismatch("cross_entropy", &[n, k], &[labels.len(), mask.len()]));
        }
        if let Some((_, l)) = labels.iter().zip(mask).find(|(&l, &m)| m && l >= k) {
            return Err(Error::invalid("cross_entropy", format!("label {l} >= {k} classes")));
        }
        let src = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = &src[i * k..(i + 1) * k];
            total += logsumexp(row) - row[labels[i]].as_f64();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut done: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        done.resize_with(loss.0 + 1, || None);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            done[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
        }
        Ok(Gradients { grads: done })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    /// Adds `src` into the gradient of `v`, copying when it has none yet.
    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, src: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => add_into(buf, src),
            slot => *slot = Some(src.to_vec()),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).shape()[1];
                let gm = MatRef::new(g, m, n);
                if let Some(ga) = self.grad_buf(grads, a) {
                    gemm(gm, MatRef::new(self.value(b).data(), k, n).t(), ga, true);
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    gemm(MatRef::new(self.value(a).data(), m, k).t(), gm, gb, true);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, v, g);
                }
            }
            &Op::AddBias(x, b) => {
                self.accumulate(grads, x, g);
                if let Some(gb) = self.grad_buf(grads, b) {
                    let mut acc = vec![0.0f64; gb.len()];
                    for row in g.chunks_exact(gb.len()) {
                        for (a, &gi) in acc.iter_mut().zip(row) {
                            *a += gi.as_f64();
                        }
                    }
                    for (o, a) in gb.iter_mut().zip(acc) {
                        *o = *o + T::of(a);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.grad_buf(grads, a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o = *o + gi * y;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, b) {
                    for ((o, &gi), &y) in gb.iter_mut().zip(g).zip(va) {
                        *o = *o + gi * y;
                    }
                }
            }
            &Op::Scale(x, f) => {
                if let Some(gx) = self.grad_buf(grads, x) {
                    let f = T::of(f);
                    for (o, &gi) in gx.iter_mut().zip(g) {
                        *o = *o + gi * f;
                    }
                }
            }
            &Op::Relu(x) => {
                let y = node.value.data();
                if let Some(gx) = self.grad_buf(grads, x) {
                    for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        if yi > T::zero() {
                            *o = *o + gi;
                        }
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = self.grad_buf(grads, x) {
                    for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *o = *o + gi * yi * (T::one() - yi);
                    }
                }
            }
            &Op::Softmax { x, axis } => {
                let (n, c) = node.value.dims2().unwrap();
                let y = node.value.data();
                if let Some(gx) = self.grad_buf(grads, x) {
                    let (outer, inner, so, si) = if axis == 1 { (n, c, c, 1) } else { (c, n, 1, c) };
                    for o in 0..outer {
                        let at = |i: usize| o * so + i * si;
                        let dot: f64 = (0..inner).map(|i| g[at(i)].as_f64() * y[at(i)].as_f64()).sum();
                        for i in 0..inner {
                            let idx = at(i);
                            gx[idx] = gx[idx] + y[idx] * (g[idx] - T::of(dot));
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax, .. } => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (&src, &gi) in argmax.iter().zip(g) {
                        gx[src] = gx[src] + gi;
                    }
                }
            }
            &Op::Mean { x, axis } => {
                let (n, c) = self.value(x).dims2().unwrap();
                if let Some(gx) = self.grad_buf(grads, x) {
                    for i in 0..n {
                        for j in 0..c {
                            let (gi, d) = if axis == 0 { (g[j], n) } else { (g[i], c) };
                            gx[i * c + j] = gx[i * c + j] + gi / T::of(d as f64);
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.grad_buf(grads, x) {
                    for o in gx.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let total_c = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (n, c) = self.value(p).dims2().unwrap();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        if *axis == 0 {
                            add_into(gp, &g[offset * total_c..(offset + n) * total_c]);
                        } else {
                            for i in 0..n {
                                add_into(
                                    &mut gp[i * c..(i + 1) * c],
                                    &g[i * total_c + offset..i * total_c + offset + c],
                                );
                            }
                        }
                    }
                    offset += if *axis == 0 { n } else { c };
                }
            }
            &Op::Slice { x, axis, start } => {
                let (n, c) = self.value(x).dims2().unwrap();
                let w = node.value.shape()[1];
                if let Some(gx) = self.grad_buf(grads, x) {
                    if axis == 0 {
                        add_into(&mut gx[start * c..start * c + g.len()], g);
                    } else {
                        for i in 0..n {
                            add_into(&mut gx[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                        }
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = node.value.shape()[1];
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut gx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => self.batch_norm_backward(node, g, grads, (*x, *gamma, *beta), xhat, inv_std, *train),
            Op::BceWithLogits { logits, targets } => {
                let xs = self.value(*logits).data();
                if let Some(gx) = self.grad_buf(grads, *logits) {
                    let scale = g[0].as_f64() / targets.len() as f64;
                    for ((o, &x), &y) in gx.iter_mut().zip(xs).zip(targets) {
                        let d = crate::geometry::sigmoid(x.as_f64()) - y.as_f64();
                        *o = *o + T::of(d * scale);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (_, k) = self.value(*logits).dims2().unwrap();
                let xs = self.value(*logits).data();
                if let Some(gx) = self.grad_buf(grads, *logits) {
                    let scale = g[0].as_f64() / *count as f64;
                    for (i, (&l, &m)) in labels.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let row = &xs[i * k..(i + 1) * k];
                        let lse = logsumexp(row);
                        for j in 0..k {
                            let p = (row[j].as_f64() - lse).exp();
                            let d = p - if j == l { 1.0 } else { 0.0 };
                            gx[i * k + j] = gx[i * k + j] + T::of(d * scale);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_backward(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        (x, gamma, beta): (Var, Var, Var),
        xhat: &[T],
        inv_std: &[T],
        train: bool,
    ) {
        let (n, c) = node.value.dims2().unwrap();
        let gam = self.value(gamma);
        let gamma_rows = gam.shape()[0] == n;

        for (p, weight_by_xhat) in [(gamma, true), (beta, false)] {
            let rows = self.value(p).shape()[0];
            if let Some(gp) = self.grad_buf(grads, p) {
                if rows == n {
                    if weight_by_xhat {
                        for ((o, &gi), &xh) in gp.iter_mut().zip(g).zip(xhat) {
                            *o = *o + gi * xh;
                        }
                    } else {
                        add_into(gp, g);
                    }
                } else {
                    let mut acc = vec![0.0f64; c];
                    for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ((a, &gi), &xh) in acc.iter_mut().zip(grow).zip(xrow) {
                            *a += if weight_by_xhat { (gi * xh).as_f64() } else { gi.as_f64() };
                        }
                    }
                    for (o, a) in gp.iter_mut().zip(acc) {
                        *o = *o + T::of(a);
                    }
                }
            }
        }

        if !self.nodes[x.0].requires_grad {
            return;
        }
        let gd = gam.data();
        let mut dxhat = g.to_vec();
        if gamma_rows {
            for (d, &gv) in dxhat.iter_mut().zip(gd) {
                *d = *d * gv;
            }
        } else {
            for row in dxhat.chunks_exact_mut(c) {
                for (d, &gv) in row.iter_mut().zip(gd) {
                    *d = *d * gv;
                }
            }
        }
        let gx = self.grad_buf(grads, x).expect("requires grad");
        if train {
            let nf = n as f64;
            let mut sum_d = vec![0.0f64; c];
            let mut sum_dx = vec![0.0f64; c];
            for (drow, xrow) in dxhat.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for j in 0..c {
                    sum_d[j] += drow[j].as_f64();
                    sum_dx[j] += (drow[j] * xrow[j]).as_f64();
                }
            }
            // Per-column affine form: gx += a*dxhat + b*xhat + k.
            let b: Vec<T> = (0..c).map(|j| T::of(-inv_std[j].as_f64() * sum_dx[j] / nf)).collect();
            let k: Vec<T> = (0..c).map(|j| T::of(-inv_std[j].as_f64() * sum_d[j] / nf)).collect();
            for ((orow, drow), xrow) in gx.chunks_exact_mut(c).zip(dxhat.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                for j in 0..c {
                    orow[j] = orow[j] + inv_std[j] * drow[j] + b[j] * xrow[j] + k[j];
                }
            }
        } else {
            for (orow, drow) in gx.chunks_exact_mut(c).zip(dxhat.chunks_exact(c)) {
                for j in 0..c {
                    orow[j] = orow[j] + drow[j] * inv_std[j];
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn logsumexp<T: Scalar>(row: &[T]) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 4], &[3.0; 8]));
        let y = tape.softmax(x, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y0 = tape.softmax(x, 0).unwrap();
        assert!(tape.value(y0).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn batch_norm_train_standardises() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64 * 0.3 - 1.0 + i as f64 * 0.01).collect();
        let x = tape.constant(t(&[10, 4], &data));
        let g = tape.constant(Tensor::full(vec![1, 4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1, 4]));
        let mut stats = RunningStats::new(4, 0.9, 1e-5);
        let y = tape.batch_norm(x, g, b, BatchNormMode::Train, &mut stats).unwrap();
        let out = tape.value(y).data();
        for j in 0..4 {
            let col: Vec<f64> = (0..10).map(|i| out[i * 4 + j]).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // Running stats moved 10% of the way from (0, 1).
        let mean0: f64 = (0..10).map(|i| data[i * 4]).sum::<f64>() / 10.0;
        assert!((stats.mean[0] - 0.1 * mean0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_rows_are_independent() {
        let mut stats = RunningStats::<f64>::new(3, 0.9, 1e-5);
        stats.mean = vec![0.5, -1.0, 2.0];
        stats.var = vec![4.0, 0.25, 1.0];
        let rows = [[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0], [0.0, 0.0, 0.0]];
        let run = |order: &[usize]| {
            let mut stats = stats.clone();
            let mut tape = Tape::new();
            let data: Vec<f64> = order.iter().flat_map(|&i| rows[i]).collect();
            let x = tape.constant(t(&[order.len(), 3], &data));
            let g = tape.constant(t(&[1, 3], &[1.5, 2.0, -1.0]));
            let b = tape.constant(t(&[1, 3], &[0.1, 0.2, 0.3]));
            let y = tape.batch_norm(x, g, b, BatchNormMode::Eval, &mut stats).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        assert_eq!(&a[0..3], &b[3..6]);
        assert_eq!(&a[3..6], &b[6..9]);
        assert_eq!(&a[6..9], &b[0..3]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn bce_gradient_at_zero_logit() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1], &[0.0]));
        let l = tape.bce_with_logits(x, &[true]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().item(), -0.5);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(t(&[2, 3], &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(t(&[3, 2], &[0.0; 6]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[3.0, 4.0]));
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.param(Tensor::new(vec![4, 3], (0..12).map(|i| (i as f32 * 0.7).sin()).collect()).unwrap());
            let w = tape.param(Tensor::new(vec![3, 5], (0..15).map(|i| (i as f32 * 1.3).cos()).collect()).unwrap());
            let y = tape.matmul(x, w).unwrap();
            let y = tape.sigmoid(y);
            let p = tape.max_pool(y, 0, 2).unwrap();
            let s = tape.sum(p);
            let g = tape.backward(s).unwrap();
            (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
        };
        assert_eq!(build(), build());
    }
}
