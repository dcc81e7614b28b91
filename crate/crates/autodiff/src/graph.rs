//! Tape of recorded operations and the reverse sweep over it.
//!
//! Every op appends one node. Nodes only reference earlier nodes, so the
//! tape is acyclic by construction and `backward` simply walks it in
//! reverse. Parameter leaves borrow their values from a [`ParamStore`];
//! the gradients they receive are handed back through [`Gradients`]
//! for the caller to accumulate.

use crate::conv::{conv2d_backward, conv2d_forward, Conv2dGeometry};
use crate::error::{shape_err, AutodiffError, Result};
use crate::linalg::{matmul, Trans};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Input,
    Param(ParamId),
    Add { a: Var, b: Var },
    Relu(Var),
    Reshape(Var),
    Transpose(Var),
    SliceRows { x: Var, start: usize },
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: Conv2dGeometry },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    GlobalAvgPool(Var),
    Sum(Var),
    Mse { pred: Var, target: Var },
}

struct Node<T> {
    value: Value<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Batch-norm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    batch_norms: [usize; 2],
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if it required one.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients, one entry per parameter leaf on the tape.
    pub fn params(&self) -> &[(ParamId, Vec<T>)] {
        &self.params
    }
}

/// Shape obtained by numpy-style broadcasting of `a` and `b`.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], d: usize| -> usize {
        let off = rank - s.len();
        if d < off {
            1
        } else {
            s[d - off]
        }
    };
    (0..rank)
        .map(|d| match (pad(a, d), pad(b, d)) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => shape_err(format!("shapes {a:?} and {b:?} do not broadcast")),
        })
        .collect()
}

/// Offset into a tensor of shape `src` for every element of `out`.
fn broadcast_offsets(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let off = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        let extent = if d < off { 1 } else { src[d - off] };
        strides[d] = if extent == 1 { 0 } else { acc };
        acc *= extent;
    }
    let total: usize = out.iter().product();
    let mut index = vec![0usize; rank];
    let mut offsets = Vec::with_capacity(total);
    let mut cur = 0usize;
    for _ in 0..total {
        offsets.push(cur);
        for d in (0..rank).rev() {
            index[d] += 1;
            cur += strides[d];
            if index[d] < out[d] {
                break;
            }
            cur -= strides[d] * index[d];
            index[d] = 0;
        }
    }
    offsets
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            batch_norms: [0; 2],
        }
    }

    /// Number of batch-norm nodes built in `(train, eval)` mode.
    pub fn batch_norm_counts(&self) -> (usize, usize) {
        (self.batch_norms[0], self.batch_norms[1])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Input)
    }

    /// A leaf whose gradient is tracked without being a stored parameter.
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            requires_grad: true,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Elementwise sum with numpy-style broadcasting of either operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = if va.shape() == shape.as_slice() && vb.shape() == shape.as_slice() {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect()
        } else {
            let oa = broadcast_offsets(&shape, va.shape());
            let ob = broadcast_offsets(&shape, vb.shape());
            oa.iter()
                .zip(&ob)
                .map(|(&i, &j)| va.data()[i] + vb.data()[j])
                .collect()
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Add { a, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&z| z.max(T::zero())).collect(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Relu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// `B x C x H x W -> B x (C*H*W)`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return shape_err(format!("flatten needs a batch axis, got {s:?}"));
        }
        let b = s[0];
        let rest = s[1..].iter().product::<usize>();
        self.reshape(x, vec![b, rest])
    }

    /// Transpose of a 2-d tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[r, c] = v.shape() else {
            return shape_err(format!("transpose needs a 2-d tensor, got {:?}", v.shape()));
        };
        let src = v.data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], data)?, rg, Op::Transpose(x)))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let rows = v.shape()[0];
        if len == 0 || start + len > rows {
            return shape_err(format!(
                "row slice {start}..{} out of range for {rows} rows",
                start + len
            ));
        }
        let width = v.len() / rows;
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let data = v.data()[start * width..(start + len) * width].to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::SliceRows { x, start }))
    }

    /// `x (B x D_in) * w^T (D_in x D_out) + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (&[batch, d_in], &[d_out, w_in]) = (xs, ws) else {
            return shape_err(format!("dense expects 2-d input and weight, got {xs:?}, {ws:?}"));
        };
        if w_in != d_in {
            return shape_err(format!("dense weight expects {w_in} inputs, got {d_in}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return shape_err(format!("dense bias must be [{d_out}], got {:?}", self.shape(b)));
            }
        }
        let mut out = vec![T::zero(); batch * d_out];
        matmul(
            batch,
            d_in,
            d_out,
            self.value(x).data(),
            Trans::No,
            self.value(w).data(),
            Trans::Yes,
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(Tensor::new(vec![batch, d_out], out)?, rg, Op::Dense { x, w, b }))
    }

    /// Cross-correlation with same-ceil padding; see [`crate::conv`].
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let geom = Conv2dGeometry::new(self.shape(x), self.shape(w), stride)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return shape_err(format!(
                    "conv2d bias must be [{}], got {:?}",
                    geom.c_out,
                    self.shape(b)
                ));
            }
        }
        let out = conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            Tensor::new(geom.out_shape().to_vec(), out)?,
            rg,
            Op::Conv2d { x, w, b, geom },
        ))
    }

    /// Per-channel batch normalisation of a `B x C` or `B x C x H x W` input.
    ///
    /// In train mode the batch statistics over (B, H, W) normalise the input
    /// and the running statistics move towards them as
    /// `running = momentum * running + (1 - momentum) * batch`, with the
    /// unbiased batch variance. In eval mode the running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        cfg: BatchNormConfig,
        mode: Mode,
    ) -> Result<Var> {
        self.batch_norms[usize::from(!mode.is_train())] += 1;
        let shape = self.shape(x).to_vec();
        let (batch, channels, spatial) = match shape.as_slice() {
            &[b, c] => (b, c, 1),
            &[b, c, h, w] => (b, c, h * w),
            s => return shape_err(format!("batch_norm expects 2-d or 4-d input, got {s:?}")),
        };
        for (what, t) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running mean", running_mean.shape()),
            ("running var", running_var.shape()),
        ] {
            if t != [channels] {
                return shape_err(format!("batch_norm {what} must be [{channels}], got {t:?}"));
            }
        }
        let count = batch * spatial;
        let eps = T::from_f64_lossy(cfg.eps);
        let xv = self.value(x).data();
        let at = |b: usize, c: usize, s: usize| (b * channels + c) * spatial + s;

        let (mean, var) = if mode.is_train() {
            if count < 2 {
                return Err(AutodiffError::DegenerateBatch(count));
            }
            let n = T::from_usize(count).expect("count fits");
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for c in 0..channels {
                let mut s = T::zero();
                for b in 0..batch {
                    for k in 0..spatial {
                        s += xv[at(b, c, k)];
                    }
                }
                let m = s / n;
                let mut q = T::zero();
                for b in 0..batch {
                    for k in 0..spatial {
                        let d = xv[at(b, c, k)] - m;
                        q += d * d;
                    }
                }
                mean[c] = m;
                var[c] = q / n;
            }
            let momentum = T::from_f64_lossy(cfg.momentum);
            let unbias = n / (n - T::one());
            for c in 0..channels {
                let rm = &mut running_mean.data_mut()[c];
                *rm = momentum * *rm + (T::one() - momentum) * mean[c];
                let rv = &mut running_var.data_mut()[c];
                *rv = momentum * *rv + (T::one() - momentum) * var[c] * unbias;
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                for k in 0..spatial {
                    let i = at(b, c, k);
                    xhat[i] = (xv[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode.is_train(),
            },
        ))
    }

    /// `B x C x H x W -> B x C`, averaging every map over its locations.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[b, c, h, w] = v.shape() else {
            return shape_err(format!("global_avg_pool expects 4-d input, got {:?}", v.shape()));
        };
        let n = T::from_usize(h * w).expect("extent fits");
        let data = v
            .data()
            .chunks(h * w)
            .map(|m| m.iter().copied().sum::<T>() / n)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![b, c], data)?, rg, Op::GlobalAvgPool(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Mean over all elements of the squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return shape_err(format!(
                "mse_loss shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            ));
        }
        let n = T::from_usize(p.len()).expect("len fits");
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>();
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n), rg, Op::Mse { pred, target }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::ContractViolation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &gout, &mut grads, &mut params);
            }
            grads[i] = Some(gout);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        params.reverse();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(
        &self,
        i: usize,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        params: &mut Vec<(ParamId, Vec<T>)>,
    ) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out_shape = match &self.nodes[i].value {
            Value::Owned(t) => t.shape(),
            Value::Param(id) => self.params.value(*id).shape(),
        };
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => params.push((*id, gout.to_vec())),
            Op::Add { a, b } => {
                for &src in [a, b] {
                    if !wants(src) {
                        continue;
                    }
                    let s = self.shape(src);
                    if s == out_shape {
                        accumulate(grads, src, gout.to_vec());
                    } else {
                        let offs = broadcast_offsets(out_shape, s);
                        let mut g = vec![T::zero(); self.value(src).len()];
                        for (&o, &v) in offs.iter().zip(gout) {
                            g[o] += v;
                        }
                        accumulate(grads, src, g);
                    }
                }
            }
            Op::Relu(x) => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&z, &g)| if z > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, g);
            }
            Op::Reshape(x) => accumulate(grads, *x, gout.to_vec()),
            Op::Transpose(x) => {
                let &[r, c] = self.shape(*x) else { unreachable!() };
                let mut g = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = gout[j * r + i];
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::SliceRows { x, start } => {
                let v = self.value(*x);
                let width = v.len() / v.shape()[0];
                let mut g = vec![T::zero(); v.len()];
                g[start * width..start * width + gout.len()].copy_from_slice(gout);
                accumulate(grads, *x, g);
            }
            Op::Dense { x, w, b } => {
                let &[batch, d_in] = self.shape(*x) else { unreachable!() };
                let d_out = self.shape(*w)[0];
                if wants(*x) {
                    let mut g = vec![T::zero(); batch * d_in];
                    matmul(batch, d_out, d_in, gout, Trans::No, self.value(*w).data(), Trans::No, T::zero(), &mut g);
                    accumulate(grads, *x, g);
                }
                if wants(*w) {
                    let mut g = vec![T::zero(); d_out * d_in];
                    matmul(d_out, batch, d_in, gout, Trans::Yes, self.value(*x).data(), Trans::No, T::zero(), &mut g);
                    accumulate(grads, *w, g);
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    let mut g = vec![T::zero(); d_out];
                    for row in gout.chunks(d_out) {
                        for (a, &v) in g.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    accumulate(grads, b, g);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gout,
                    wants(*x),
                );
                if let Some(gx) = cg.input {
                    accumulate(grads, *x, gx);
                }
                if wants(*w) {
                    accumulate(grads, *w, cg.weight);
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    accumulate(grads, b, cg.bias);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let channels = inv_std.len();
                let per_batch = xhat.len() / self.shape(*x)[0];
                let spatial = per_batch / channels;
                let batch = self.shape(*x)[0];
                let at = |b: usize, c: usize, s: usize| (b * channels + c) * spatial + s;
                let mut dgamma = vec![T::zero(); channels];
                let mut dbeta = vec![T::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        for s in 0..spatial {
                            let i = at(b, c, s);
                            dgamma[c] += gout[i] * xhat[i];
                            dbeta[c] += gout[i];
                        }
                    }
                }
                if wants(*x) {
                    let gv = self.value(*gamma).data();
                    let mut dx = vec![T::zero(); xhat.len()];
                    if *batch_stats {
                        let n = T::from_usize(batch * spatial).expect("count fits");
                        for c in 0..channels {
                            // dxhat = gout * gamma; sums over the channel's values.
                            let sum_d = dbeta[c] * gv[c];
                            let sum_dx = dgamma[c] * gv[c];
                            let k = inv_std[c] / n;
                            for b in 0..batch {
                                for s in 0..spatial {
                                    let i = at(b, c, s);
                                    let d = gout[i] * gv[c];
                                    dx[i] = k * (n * d - sum_d - xhat[i] * sum_dx);
                                }
                            }
                        }
                    } else {
                        for b in 0..batch {
                            for c in 0..channels {
                                for s in 0..spatial {
                                    let i = at(b, c, s);
                                    dx[i] = gout[i] * gv[c] * inv_std[c];
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let area = s[2] * s[3];
                let n = T::from_usize(area).expect("extent fits");
                let mut g = vec![T::zero(); self.value(*x).len()];
                for (chunk, &v) in g.chunks_mut(area).zip(gout) {
                    chunk.fill(v / n);
                }
                accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let g = vec![gout[0]; self.value(*x).len()];
                accumulate(grads, *x, g);
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = T::from_f64_lossy(2.0) * gout[0] / T::from_usize(p.len()).expect("len");
                let diff: Vec<T> = p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect();
                if wants(*target) {
                    accumulate(grads, *target, diff.iter().map(|&d| -d).collect());
                }
                if wants(*pred) {
                    accumulate(grads, *pred, diff);
                }
            }
        }
    }
}
