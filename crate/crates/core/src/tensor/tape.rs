use std::collections::HashMap;

use ndarray::{concatenate, Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn, Slice};

use super::kernels::{conv_backward, conv_forward, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::Element;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Swish,
    HardSwish,
    Sigmoid,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swish" => Ok(Activation::Swish),
            "hardswish" => Ok(Activation::HardSwish),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::arg(format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid<F: Element>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl Activation {
    pub fn apply<F: Element>(self, x: F) -> F {
        let three = F::of(3.0);
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::HardSwish => x * (x + three).max(F::zero()).min(F::of(6.0)) / F::of(6.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(F::zero()),
        }
    }

    /// Value and derivative at `x`, sharing the exponential.
    pub fn apply_with_derivative<F: Element>(self, x: F) -> (F, F) {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                let y = x * s;
                (y, s + y * (F::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (F::one() - s))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    pub fn derivative<F: Element>(self, x: F) -> F {
        let three = F::of(3.0);
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (F::one() - s)
            }
            Activation::HardSwish => {
                if x <= -three {
                    F::zero()
                } else if x >= three {
                    F::one()
                } else {
                    (x + x + three) / F::of(6.0)
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (F::one() - s)
            }
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<F>,
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Pointwise {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    TemporalConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    GraphMix {
        x: Var,
        a: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: ArrayD<F>,
        inv_std: Vec<F>,
        batch: bool,
    },
    Act {
        x: Var,
        /// Elementwise derivative captured in the forward pass.
        deriv: ArrayD<F>,
    },
    Mean {
        x: Var,
        axes: Vec<usize>,
        count: usize,
    },
    Sum(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    MatMul(Var, Var),
    SoftmaxCe {
        logits: Var,
        probs: Array2<F>,
        targets: Vec<usize>,
    },
}

struct Node<F> {
    value: ArrayD<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Dynamic tape: operations are recorded as they execute and replayed in
/// reverse by [`Graph::backward`].
pub struct Graph<F: Element> {
    nodes: Vec<Node<F>>,
    param_leaves: HashMap<ParamId, Var>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn standard<F: Element>(a: ArrayD<F>) -> ArrayD<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::arg(format!("{op}: {detail}"))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to<F: Element>(mut g: ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    standard(g)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn view2<F>(a: &ArrayD<F>, rows: usize, cols: usize) -> ArrayView2<'_, F> {
    a.view()
        .into_shape_with_order((rows, cols))
        .expect("contiguous value reshapes to 2-D")
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A graph that records values only; nothing on it is differentiable.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<F>, op: Op<F>, needs_grad: bool) -> Var {
        let needs_grad = needs_grad && self.grad_enabled;
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: standard(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1-element tensor.
    pub fn scalar(&self, v: Var) -> F {
        *self.value(v).iter().next().expect("non-empty value")
    }

    /// A constant input; gradients are not tracked through it.
    pub fn input(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.param(id).value.clone(), Op::Param(id), true);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        broadcast_shape(sa, sb).ok_or_else(|| shape_err("add", format!("{sa:?} vs {sb:?}")))?;
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Element-wise product with broadcasting over unit axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        broadcast_shape(sa, sb).ok_or_else(|| shape_err("mul", format!("{sa:?} vs {sb:?}")))?;
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let value = self.value(a) * s;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// `W x + b` over the leading (channel) axis; `x` is `[C_in, ...]`, `w` is `[C_out, C_in]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || ws[1] != xs[0] {
            return Err(shape_err("pointwise_conv", format!("weight {ws:?} vs input {xs:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("pointwise_conv", format!("bias {:?}", self.shape(b))));
            }
        }
        let rest = self.value(x).len() / xs[0];
        let mut y = self.value(w).view().into_dimensionality::<ndarray::Ix2>().unwrap().dot(&view2(self.value(x), xs[0], rest));
        if let Some(b) = b {
            let bv = self.value(b);
            for (mut row, &bb) in y.rows_mut().into_iter().zip(bv.iter()) {
                row += bb;
            }
        }
        let mut shape = xs;
        shape[0] = ws[0];
        let value = y.into_shape_with_order(IxDyn(&shape)).expect("pointwise output shape");
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::Pointwise { x, w, b }, ng))
    }

    /// `L x 1` convolution over `[C_in, N, T, V]` with weight `[C_out, C_in/groups, L, 1]`,
    /// zero padding `(L-1)/2` and output length `ceil(T / stride)`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, groups: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let err = |d: String| shape_err("temporal_conv", d);
        if xs.len() != 4 {
            return Err(err(format!("input must be [C, N, T, V], got {xs:?}")));
        }
        if ws.len() != 4 || ws[3] != 1 {
            return Err(err(format!("weight must be [C_out, C_in/g, L, 1], got {ws:?}")));
        }
        if groups == 0 || stride == 0 {
            return Err(err("groups and stride must be positive".into()));
        }
        let (cin, cout, kernel) = (xs[0], ws[0], ws[2]);
        if kernel % 2 == 0 {
            return Err(err(format!("kernel {kernel} must be odd")));
        }
        if cin % groups != 0 || cout % groups != 0 || ws[1] != cin / groups {
            return Err(err(format!("weight {ws:?} incompatible with {cin} channels in {groups} groups")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(err(format!("bias {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            cin,
            cout,
            groups,
            kernel,
            stride,
            n: xs[1],
            t: xs[2],
            v: xs[3],
        };
        let y = conv_forward(
            self.value(x).as_slice().expect("standard layout"),
            self.value(w).as_slice().expect("standard layout"),
            b.map(|b| self.value(b).as_slice().expect("standard layout")),
            &geom,
        );
        let value = ArrayD::from_shape_vec(IxDyn(&[cout, geom.n, geom.t_out(), geom.v]), y).expect("conv output");
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::TemporalConv { x, w, b, geom }, ng))
    }

    /// Mixes the trailing joint axis: `y[.., j] = sum_i x[.., i] a[i, j]`.
    pub fn graph_mix(&mut self, x: Var, a: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let as_ = self.shape(a).to_vec();
        let v = *xs.last().ok_or_else(|| shape_err("graph_mix", "scalar input".into()))?;
        if as_ != [v, v] {
            return Err(shape_err("graph_mix", format!("adjacency {as_:?} vs {v} joints")));
        }
        let rows = self.value(x).len() / v;
        let y = view2(self.value(x), rows, v).dot(&view2(self.value(a), v, v));
        let value = y.into_shape_with_order(IxDyn(&xs)).expect("mix output");
        let ng = self.ng(x) || self.ng(a);
        Ok(self.push(value, Op::GraphMix { x, a }, ng))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(shape_err("batch_norm", format!("input {xs:?} has no batch axes")));
        }
        let c = xs[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm", format!("affine parameters must have length {c}")));
        }
        let m = self.value(x).len() / c;
        if m == 0 {
            return Err(shape_err("batch_norm", "zero-size batch".into()));
        }
        Ok((c, m))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[F], inv_std: Vec<F>, batch: bool) -> Var {
        let c = mean.len();
        let m = self.value(x).len() / c;
        let xv = self.value(x).as_slice().expect("standard layout");
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![F::zero(); xv.len()];
        let mut y = vec![F::zero(); xv.len()];
        let chunks = xv.chunks_exact(m).zip(xhat.chunks_exact_mut(m)).zip(y.chunks_exact_mut(m));
        for (ch, ((xs, hs), ys)) in chunks.enumerate() {
            let (g, b, mu, is) = (gv[ch], bv[ch], mean[ch], inv_std[ch]);
            for ((&a, h), o) in xs.iter().zip(hs.iter_mut()).zip(ys.iter_mut()) {
                *h = (a - mu) * is;
                *o = g * *h + b;
            }
        }
        let shape = self.shape(x).to_vec();
        let xhat = ArrayD::from_shape_vec(IxDyn(&shape), xhat).expect("bn shape");
        let value = ArrayD::from_shape_vec(IxDyn(&shape), y).expect("bn shape");
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
            ng,
        )
    }

    /// Training-mode batch normalization over every axis except the leading channel axis.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<F>)> {
        let (c, m) = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x).as_slice().expect("standard layout");
        let mf = F::of(m as f64);
        let mut mean = Vec::with_capacity(c);
        let mut var_b = Vec::with_capacity(c);
        for chunk in xv.chunks(m) {
            let mu = chunk.iter().copied().sum::<F>() / mf;
            let var = chunk.iter().map(|&a| (a - mu) * (a - mu)).sum::<F>() / mf;
            mean.push(mu);
            var_b.push(var);
        }
        let inv_std = var_b.iter().map(|&v| (v + F::of(eps)).sqrt().recip()).collect();
        let unbias = if m > 1 { mf / F::of((m - 1) as f64) } else { F::one() };
        let stats = BatchStats {
            var: var_b.iter().map(|&v| v * unbias).collect(),
            mean: mean.clone(),
        };
        Ok((self.bn_apply(x, gamma, beta, &mean, inv_std, true), stats))
    }

    /// Evaluation-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: f64,
    ) -> Result<Var> {
        let (c, _) = self.check_bn(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batch_norm", "running statistics length".into()));
        }
        let inv_std = running_var.iter().map(|&v| (v + F::of(eps)).sqrt().recip()).collect();
        Ok(self.bn_apply(x, gamma, beta, running_mean, inv_std, false))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let ng = self.ng(x) && self.grad_enabled;
        if !ng {
            let value = self.value(x).mapv(|a| kind.apply(a));
            return self.push(value, Op::Leaf, false);
        }
        let src = self.value(x).as_slice().expect("standard layout");
        let mut value = Vec::with_capacity(src.len());
        let mut deriv = Vec::with_capacity(src.len());
        for &a in src {
            let (y, d) = kind.apply_with_derivative(a);
            value.push(y);
            deriv.push(d);
        }
        let shape = IxDyn(self.shape(x));
        let value = ArrayD::from_shape_vec(shape.clone(), value).expect("activation shape");
        let deriv = ArrayD::from_shape_vec(shape, deriv).expect("activation shape");
        self.push(value, Op::Act { x, deriv }, true)
    }

    /// Arithmetic mean over `axes`; reduced axes are kept with length 1 when `keep_dims`.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keep_dims: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(shape_err("mean_over_axes", format!("repeated axis in {axes:?}")));
        }
        if let Some(&bad) = sorted.iter().find(|&&a| a >= shape.len()) {
            return Err(shape_err("mean_over_axes", format!("axis {bad} out of range for {shape:?}")));
        }
        let mut value = self.value(x).clone();
        let mut count = 1;
        for &ax in sorted.iter().rev() {
            count *= shape[ax];
            value = value.sum_axis(Axis(ax));
            if keep_dims {
                value = value.insert_axis(Axis(ax));
            }
        }
        let value = value / F::of(count as f64);
        let ng = self.ng(x);
        Ok(self.push(value, Op::Mean { x, axes: sorted, count }, ng))
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum(x), ng)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let views: Vec<_> = xs.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(axis), &views).map_err(|e| shape_err("concat", e.to_string()))?;
        let ng = xs.iter().any(|&v| self.ng(v));
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }, ng))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(shape_err("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
        }
        let value = self
            .value(x)
            .slice_axis(Axis(axis), Slice::from(start..end))
            .as_standard_layout()
            .into_owned();
        let ng = self.ng(x);
        Ok(self.push(value, Op::Slice { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| shape_err("reshape", e.to_string()))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let value = view2(self.value(a), sa[0], sa[1]).dot(&view2(self.value(b), sb[0], sb[1]));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value.into_dyn(), Op::MatMul(a, b), ng))
    }

    /// Mean softmax cross-entropy of `[Q, N]` logits against `N` class targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[1] != targets.len() || s[1] == 0 {
            return Err(shape_err("softmax_cross_entropy", format!("logits {s:?} vs {} targets", targets.len())));
        }
        let q = s[0];
        if let Some(&t) = targets.iter().find(|&&t| t >= q) {
            return Err(Error::arg(format!("target class {t} out of range for {q} classes")));
        }
        let z = view2(self.value(logits), q, s[1]);
        let mut probs = Array2::<F>::zeros((q, s[1]));
        let mut loss = F::zero();
        for (n, &t) in targets.iter().enumerate() {
            let col = z.column(n);
            let max = col.iter().copied().fold(F::neg_infinity(), F::max);
            let denom: F = col.iter().map(|&v| (v - max).exp()).sum();
            for i in 0..q {
                probs[[i, n]] = (col[i] - max).exp() / denom;
            }
            loss += denom.ln() - (col[t] - max);
        }
        let loss = loss / F::of(targets.len() as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Op::SoftmaxCe {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Propagates d`loss` back through the tape, accumulating into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::arg(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contributions = self.node_backward(i, g, store);
            for (v, dg) in contributions {
                if !self.ng(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &dg,
                    slot => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: ArrayD<F>, store: &mut ParamStore<F>) -> Vec<(Var, ArrayD<F>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, &g),
            Op::Add(a, b) => {
                if self.ng(*a) {
                    out.push((*a, reduce_to(g.clone(), self.shape(*a))));
                }
                if self.ng(*b) {
                    out.push((*b, reduce_to(g, self.shape(*b))));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    out.push((*a, reduce_to(&g * self.value(*b), self.shape(*a))));
                }
                if self.ng(*b) {
                    out.push((*b, reduce_to(&g * self.value(*a), self.shape(*b))));
                }
            }
            Op::Scale(a, s) => out.push((*a, g * *s)),
            Op::Pointwise { x, w, b } => {
                let xs = self.shape(*x);
                let (cin, rest) = (xs[0], self.value(*x).len() / xs[0]);
                let cout = self.shape(*w)[0];
                let g2 = view2(&g, cout, rest);
                let w2 = view2(self.value(*w), cout, cin);
                if self.ng(*x) {
                    let dx = w2.t().dot(&g2).into_shape_with_order(IxDyn(xs)).expect("dx shape");
                    out.push((*x, dx));
                }
                if self.ng(*w) {
                    let dw = g2.dot(&view2(self.value(*x), cin, rest).t());
                    out.push((*w, dw.into_dyn()));
                }
                if let Some(b) = b.filter(|b| self.ng(*b)) {
                    out.push((b, g2.sum_axis(Axis(1)).into_dyn()));
                }
            }
            Op::TemporalConv { x, w, b, geom } => {
                let need = (self.ng(*x), self.ng(*w), b.is_some_and(|b| self.ng(b)));
                let grads = conv_backward(
                    g.as_slice().expect("standard layout"),
                    self.value(*x).as_slice().expect("standard layout"),
                    self.value(*w).as_slice().expect("standard layout"),
                    geom,
                    need,
                );
                if let Some(dx) = grads.dx {
                    out.push((*x, ArrayD::from_shape_vec(IxDyn(self.shape(*x)), dx).expect("dx")));
                }
                if let Some(dw) = grads.dw {
                    out.push((*w, ArrayD::from_shape_vec(IxDyn(self.shape(*w)), dw).expect("dw")));
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    out.push((*b, Array1::from(db).into_dyn()));
                }
            }
            Op::GraphMix { x, a } => {
                let v = self.shape(*a)[0];
                let rows = g.len() / v;
                let g2 = view2(&g, rows, v);
                if self.ng(*x) {
                    let dx = g2.dot(&view2(self.value(*a), v, v).t());
                    out.push((*x, dx.into_shape_with_order(IxDyn(self.shape(*x))).expect("dx")));
                }
                if self.ng(*a) {
                    let da = view2(self.value(*x), rows, v).t().dot(&g2);
                    out.push((*a, da.into_dyn()));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let c = inv_std.len();
                let m = g.len() / c;
                let gs = g.as_slice().expect("standard layout");
                let hs = xhat.as_slice().expect("standard layout");
                let gamma_v = self.value(*gamma);
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for ch in 0..c {
                    let r = ch * m..(ch + 1) * m;
                    dbeta[ch] = gs[r.clone()].iter().copied().sum();
                    dgamma[ch] = gs[r.clone()].iter().zip(&hs[r]).map(|(&a, &b)| a * b).sum();
                }
                if self.ng(*x) {
                    let mf = F::of(m as f64);
                    let mut dx = vec![F::zero(); g.len()];
                    let chunks = dx.chunks_exact_mut(m).zip(gs.chunks_exact(m)).zip(hs.chunks_exact(m));
                    for (ch, ((ds, gc), hc)) in chunks.enumerate() {
                        let scale = gamma_v[ch] * inv_std[ch];
                        if *batch {
                            let (k, db, dg) = (scale / mf, dbeta[ch], dgamma[ch]);
                            for ((d, &gg), &h) in ds.iter_mut().zip(gc).zip(hc) {
                                *d = k * (mf * gg - db - h * dg);
                            }
                        } else {
                            for (d, &gg) in ds.iter_mut().zip(gc) {
                                *d = scale * gg;
                            }
                        }
                    }
                    out.push((*x, ArrayD::from_shape_vec(IxDyn(self.shape(*x)), dx).expect("dx")));
                }
                if self.ng(*gamma) {
                    out.push((*gamma, Array1::from(dgamma).into_dyn()));
                }
                if self.ng(*beta) {
                    out.push((*beta, Array1::from(dbeta).into_dyn()));
                }
            }
            Op::Act { x, deriv } => {
                let mut dx = g;
                for (d, &k) in dx.as_slice_mut().expect("standard layout").iter_mut().zip(deriv.as_slice().expect("standard layout")) {
                    *d = *d * k;
                }
                out.push((*x, dx));
            }
            Op::Mean { x, axes, count } => {
                let xs = self.shape(*x);
                let mut gg = g;
                if gg.ndim() != xs.len() {
                    for &ax in axes {
                        gg = gg.insert_axis(Axis(ax));
                    }
                }
                let dx = gg.broadcast(IxDyn(xs)).expect("mean broadcast").to_owned() / F::of(*count as f64);
                out.push((*x, dx));
            }
            Op::Sum(x) => {
                let s = *g.iter().next().expect("scalar grad");
                out.push((*x, ArrayD::from_elem(IxDyn(self.shape(*x)), s)));
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.ng(v) {
                        let part = g.slice_axis(Axis(*axis), Slice::from(offset..offset + len));
                        out.push((v, part.as_standard_layout().into_owned()));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let mut dx = ArrayD::zeros(IxDyn(self.shape(*x)));
                let len = g.shape()[*axis];
                dx.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len)).assign(&g);
                out.push((*x, dx));
            }
            Op::Reshape(x) => {
                let dx = g.into_shape_with_order(IxDyn(self.shape(*x))).expect("reshape grad");
                out.push((*x, dx));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let g2 = view2(&g, sa[0], sb[1]);
                if self.ng(*a) {
                    out.push((*a, g2.dot(&view2(self.value(*b), sb[0], sb[1]).t()).into_dyn()));
                }
                if self.ng(*b) {
                    out.push((*b, view2(self.value(*a), sa[0], sa[1]).t().dot(&g2).into_dyn()));
                }
            }
            Op::SoftmaxCe { logits, probs, targets } => {
                let s = *g.iter().next().expect("scalar grad") / F::of(targets.len() as f64);
                let mut d = probs.clone();
                for (n, &t) in targets.iter().enumerate() {
                    d[[t, n]] = d[[t, n]] - F::one();
                }
                out.push((*logits, (d * s).into_dyn()));
            }
        }
        out
    }
}
