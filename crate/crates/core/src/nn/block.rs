use ndarray::Array2;

use super::{Attention, Builder, Ctx, SgcLayer, TcLayer};
use crate::arch::BlockSpec;
use crate::error::Result;
use crate::tensor::{Element, Var};

/// SGC layer, `depth` temporal layers (the first one strided), then attention.
#[derive(Debug, Clone)]
pub struct GcnBlock {
    pub spec: BlockSpec,
    pub sgc: SgcLayer,
    pub layers: Vec<TcLayer>,
    pub attention: Option<Attention>,
}

impl GcnBlock {
    pub fn new<F: Element>(b: &mut Builder<'_, F>, spec: BlockSpec, adjacency: &[Array2<f64>]) -> Result<Self> {
        let sgc = SgcLayer::new(&mut b.scope("sgc"), spec.channels_in, spec.channels_out, adjacency)?;
        let layers = spec
            .layers()
            .into_iter()
            .enumerate()
            .map(|(i, l)| TcLayer::new(&mut b.scope(&format!("tcn{i}")), l))
            .collect::<Result<Vec<_>>>()?;
        let attention = Attention::new(&mut b.scope("att"), spec.attention, spec.channels_out, spec.attention_ratio)?;
        Ok(Self {
            spec,
            sgc,
            layers,
            attention,
        })
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let mut h = self.sgc.forward(ctx, x)?;
        for l in &self.layers {
            h = l.forward(ctx, h)?;
        }
        match &self.attention {
            Some(a) => a.forward(ctx, h),
            None => Ok(h),
        }
    }
}
