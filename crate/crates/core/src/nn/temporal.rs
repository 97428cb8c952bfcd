use super::{swish, BatchNorm, Builder, Conv, Ctx};
use crate::arch::{expanded, reduced, LayerKind, LayerSpec};
use crate::error::Result;
use crate::tensor::{Element, Var};

/// One temporal layer: a chain of conv + BN sub-layers with Swish in between,
/// and a residual link around the chain.
#[derive(Debug, Clone)]
pub struct TcLayer {
    pub spec: LayerSpec,
    pub subs: Vec<(Conv, BatchNorm)>,
    pub residual: Option<(Conv, BatchNorm)>,
}

impl TcLayer {
    pub fn new<F: Element>(b: &mut Builder<'_, F>, spec: LayerSpec) -> Result<Self> {
        spec.validate()?;
        let (ci, co, l, s, r) = (spec.channels_in, spec.channels_out, spec.kernel, spec.stride, spec.ratio);
        // (in, out, kernel, stride, groups)
        let plan: Vec<(usize, usize, usize, usize, usize)> = match spec.kind {
            LayerKind::Basic => vec![(ci, co, l, s, 1)],
            LayerKind::Bottle => {
                let i = reduced(ci, r);
                vec![(ci, i, 1, 1, 1), (i, i, l, s, 1), (i, co, 1, 1, 1)]
            }
            LayerKind::Sep => vec![(ci, ci, l, s, ci), (ci, co, 1, 1, 1)],
            LayerKind::EpSep => {
                let i = expanded(ci, r);
                vec![(ci, i, 1, 1, 1), (i, i, l, s, i), (i, co, 1, 1, 1)]
            }
            LayerKind::Sg => {
                let i = reduced(ci, r);
                vec![(ci, ci, l, 1, ci), (ci, i, 1, 1, 1), (i, co, 1, 1, 1), (co, co, l, s, co)]
            }
        };
        let mut subs = Vec::with_capacity(plan.len());
        for (k, &(a, o, kk, st, g)) in plan.iter().enumerate() {
            let mut sb = b.scope(&format!("sub{k}"));
            let conv = Conv::new(&mut sb.scope("conv"), a, o, kk, st, g)?;
            let bn = BatchNorm::new(&mut sb.scope("bn"), o)?;
            subs.push((conv, bn));
        }
        let residual = if spec.projects() {
            Some((
                Conv::new(&mut b.scope("residual.conv"), ci, co, 1, s, 1)?,
                BatchNorm::new(&mut b.scope("residual.bn"), co)?,
            ))
        } else {
            None
        };
        Ok(Self { spec, subs, residual })
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.subs.len() - 1;
        for (k, (conv, bn)) in self.subs.iter().enumerate() {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            if k != last {
                h = swish(ctx.graph, h);
            }
        }
        let res = match &self.residual {
            Some((conv, bn)) => {
                let r = conv.forward(ctx, x)?;
                bn.forward(ctx, r)?
            }
            None => x,
        };
        let out = ctx.graph.add(h, res)?;
        Ok(swish(ctx.graph, out))
    }
}
