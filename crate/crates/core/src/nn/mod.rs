//! Layers, blocks and the multi-branch network built on the tape.

mod attention;
mod block;
mod network;
pub mod probe;
mod sgc;
mod temporal;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{fan_uniform, Activation, BufferId, Element, Graph, ParamId, ParamKind, ParamStore, Var};

pub use attention::{st_joint_att, Attention, StJointWeights};
pub use block::GcnBlock;
pub use network::{batch_branches, NetOutput, Network};
pub use sgc::{sgc_forward, SgcLayer};
pub use temporal::TcLayer;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DROPOUT: f64 = 0.25;

/// Everything a forward pass needs besides its input.
pub struct Ctx<'a, F: Element> {
    pub graph: &'a mut Graph<F>,
    pub store: &'a mut ParamStore<F>,
    /// Batch statistics and dropout on; running statistics are updated.
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl<F: Element> Ctx<'_, F> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, F: Element> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, F: Element> Builder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, F> {
        Builder {
            prefix: self.name(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn weight(&mut self, leaf: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let value = fan_uniform(shape, fan_in, fan_out, self.rng);
        self.store.add_param(self.name(leaf), ParamKind::Weight, value)
    }

    pub fn constant(&mut self, leaf: &str, kind: ParamKind, shape: &[usize], fill: f64) -> Result<ParamId> {
        let value = ArrayD::from_elem(IxDyn(shape), F::of(fill));
        self.store.add_param(self.name(leaf), kind, value)
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], fill: f64) -> Result<BufferId> {
        self.store.add_buffer(self.name(leaf), ArrayD::from_elem(IxDyn(shape), F::of(fill)))
    }
}

/// Batch normalization over every axis but the leading channel axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<F: Element>(b: &mut Builder<'_, F>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.constant("gamma", ParamKind::BnScale, &[channels], 1.0)?,
            beta: b.constant("beta", ParamKind::BnShift, &[channels], 0.0)?,
            running_mean: b.buffer("running_mean", &[channels], 0.0)?,
            running_var: b.buffer("running_var", &[channels], 1.0)?,
            channels,
        })
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        if ctx.train {
            let (y, stats) = ctx.graph.batch_norm_train(x, g, b, BN_EPS)?;
            let mu = F::of(BN_MOMENTUM);
            let keep = F::one() - mu;
            for (buf, batch) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var)] {
                for (r, &s) in ctx.store.buffer_mut(buf).iter_mut().zip(batch) {
                    *r = keep * *r + mu * s;
                }
            }
            Ok(y)
        } else {
            let rm: Vec<F> = ctx.store.buffer(self.running_mean).iter().copied().collect();
            let rv: Vec<F> = ctx.store.buffer(self.running_var).iter().copied().collect();
            ctx.graph.batch_norm_eval(x, g, b, &rm, &rv, BN_EPS)
        }
    }
}

/// `L x 1` convolution with bias; point-wise when `kernel == 1`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

impl Conv {
    pub fn new<F: Element>(
        b: &mut Builder<'_, F>,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || channels_in % groups != 0 || channels_out % groups != 0 {
            return Err(Error::arg(format!(
                "{channels_in} -> {channels_out} channels cannot be split into {groups} groups"
            )));
        }
        let cig = channels_in / groups;
        Ok(Self {
            weight: b.weight("weight", &[channels_out, cig, kernel, 1], cig * kernel, channels_out / groups * kernel)?,
            bias: b.constant("bias", ParamKind::Bias, &[channels_out], 0.0)?,
            channels_in,
            channels_out,
            kernel,
            stride,
            groups,
        })
    }

    pub fn pointwise<F: Element>(b: &mut Builder<'_, F>, channels_in: usize, channels_out: usize) -> Result<Self> {
        Self::new(b, channels_in, channels_out, 1, 1, 1)
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (w, bias) = (ctx.p(self.weight), ctx.p(self.bias));
        if self.kernel == 1 && self.stride == 1 && self.groups == 1 {
            let w2 = ctx.graph.reshape(w, &[self.channels_out, self.channels_in])?;
            ctx.graph.pointwise(x, w2, Some(bias))
        } else {
            ctx.graph.temporal_conv(x, w, Some(bias), self.stride, self.groups)
        }
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)`; identity outside training.
pub fn dropout<F: Element, R: Rng + ?Sized>(
    graph: &mut Graph<F>,
    x: Var,
    p: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if !train || p == 0.0 {
        return Ok(x);
    }
    let keep = F::of(1.0 / (1.0 - p));
    let mask = ArrayD::from_shape_fn(IxDyn(graph.shape(x)), |_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    });
    let m = graph.input(mask);
    graph.mul(x, m)
}

/// `W x + b` for `x` of shape `[C, N]`, giving `[Q, N]`.
pub fn fully_connected<F: Element>(graph: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    graph.pointwise(x, w, Some(b))
}

pub(crate) fn swish<F: Element>(graph: &mut Graph<F>, x: Var) -> Var {
    graph.activation(x, Activation::Swish)
}
