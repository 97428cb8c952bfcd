use super::{BatchNorm, Builder, Conv, Ctx};
use crate::arch::{reduced, AttentionKind};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Element, Graph, Var};

/// Graph handles of the ST-JointAtt weights for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct StJointWeights {
    /// `[C/r, C]` and bias `[C/r]`.
    pub fcn: (Var, Var),
    /// `[C, C/r]` and bias `[C]`, frame scores.
    pub conv_t: (Var, Var),
    /// `[C, C/r]` and bias `[C]`, joint scores.
    pub conv_v: (Var, Var),
}

/// Spatial-temporal joint attention on `[C, N, T, V]`.
///
/// `bn` normalizes the compacted `[C/r, N, T+V, 1]` features.
pub fn st_joint_att<F: Element>(
    graph: &mut Graph<F>,
    x: Var,
    w: &StJointWeights,
    bn: impl FnOnce(&mut Graph<F>, Var) -> Result<Var>,
) -> Result<Var> {
    let s = graph.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::arg(format!("attention input must be [C, N, T, V], got {s:?}")));
    }
    let (c, n, t, v) = (s[0], s[1], s[2], s[3]);
    let pt = graph.mean_axes(x, &[3], true)?;
    let pv = graph.mean_axes(x, &[2], true)?;
    let pv = graph.reshape(pv, &[c, n, v, 1])?;
    let cat = graph.concat(&[pt, pv], 2)?;
    let h = graph.pointwise(cat, w.fcn.0, Some(w.fcn.1))?;
    let h = bn(graph, h)?;
    let h = graph.activation(h, Activation::HardSwish);
    let i = graph.shape(h)[0];
    let ht = graph.slice(h, 2, 0, t)?;
    let hv = graph.slice(h, 2, t, t + v)?;
    let hv = graph.reshape(hv, &[i, n, 1, v])?;
    let st = graph.pointwise(ht, w.conv_t.0, Some(w.conv_t.1))?;
    let st = graph.activation(st, Activation::Sigmoid);
    let sv = graph.pointwise(hv, w.conv_v.0, Some(w.conv_v.1))?;
    let sv = graph.activation(sv, Activation::Sigmoid);
    let y = graph.mul(x, st)?;
    graph.mul(y, sv)
}

/// Attention module attached to the end of a block.
#[derive(Debug, Clone)]
pub enum Attention {
    StJoint {
        fcn: Conv,
        bn: BatchNorm,
        conv_t: Conv,
        conv_v: Conv,
    },
    /// Squeeze-excitation scores per channel, frame or joint.
    Se {
        kind: AttentionKind,
        fc1: Conv,
        fc2: Conv,
    },
}

fn weights<F: Element>(ctx: &mut Ctx<'_, F>, conv: &Conv) -> Result<(Var, Var)> {
    let w = ctx.p(conv.weight);
    let w = ctx.graph.reshape(w, &[conv.channels_out, conv.channels_in])?;
    Ok((w, ctx.p(conv.bias)))
}

impl Attention {
    pub fn new<F: Element>(
        b: &mut Builder<'_, F>,
        kind: AttentionKind,
        channels: usize,
        ratio: f64,
    ) -> Result<Option<Self>> {
        let i = reduced(channels, ratio);
        Ok(match kind {
            AttentionKind::None => None,
            AttentionKind::StJoint => Some(Attention::StJoint {
                fcn: Conv::pointwise(&mut b.scope("fcn"), channels, i)?,
                bn: BatchNorm::new(&mut b.scope("bn"), i)?,
                conv_t: Conv::pointwise(&mut b.scope("conv_t"), i, channels)?,
                conv_v: Conv::pointwise(&mut b.scope("conv_v"), i, channels)?,
            }),
            AttentionKind::Channel | AttentionKind::Frame | AttentionKind::Joint => {
                let out = if kind == AttentionKind::Channel { channels } else { 1 };
                Some(Attention::Se {
                    kind,
                    fc1: Conv::pointwise(&mut b.scope("fc1"), channels, i)?,
                    fc2: Conv::pointwise(&mut b.scope("fc2"), i, out)?,
                })
            }
        })
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        match self {
            Attention::StJoint { fcn, bn, conv_t, conv_v } => {
                let w = StJointWeights {
                    fcn: weights(ctx, fcn)?,
                    conv_t: weights(ctx, conv_t)?,
                    conv_v: weights(ctx, conv_v)?,
                };
                let (gamma, beta) = (ctx.p(bn.gamma), ctx.p(bn.beta));
                let train = ctx.train;
                let (rm, rv) = (bn.running_mean, bn.running_var);
                let mut stats = None;
                let running: (Vec<F>, Vec<F>) = (
                    ctx.store.buffer(rm).iter().copied().collect(),
                    ctx.store.buffer(rv).iter().copied().collect(),
                );
                let y = st_joint_att(ctx.graph, x, &w, |g, h| {
                    if train {
                        let (y, s) = g.batch_norm_train(h, gamma, beta, super::BN_EPS)?;
                        stats = Some(s);
                        Ok(y)
                    } else {
                        g.batch_norm_eval(h, gamma, beta, &running.0, &running.1, super::BN_EPS)
                    }
                })?;
                if let Some(s) = stats {
                    let mu = F::of(super::BN_MOMENTUM);
                    for (buf, batch) in [(rm, &s.mean), (rv, &s.var)] {
                        for (r, &b) in ctx.store.buffer_mut(buf).iter_mut().zip(batch) {
                            *r = (F::one() - mu) * *r + mu * b;
                        }
                    }
                }
                Ok(y)
            }
            Attention::Se { kind, fc1, fc2 } => {
                let axes: &[usize] = match kind {
                    AttentionKind::Channel => &[2, 3],
                    AttentionKind::Frame => &[3],
                    _ => &[2],
                };
                let pooled = ctx.graph.mean_axes(x, axes, true)?;
                let (w1, b1) = weights(ctx, fc1)?;
                let (w2, b2) = weights(ctx, fc2)?;
                let h = ctx.graph.pointwise(pooled, w1, Some(b1))?;
                let h = ctx.graph.activation(h, Activation::Relu);
                let s = ctx.graph.pointwise(h, w2, Some(b2))?;
                let s = ctx.graph.activation(s, Activation::Sigmoid);
                ctx.graph.mul(x, s)
            }
        }
    }
}
