use ndarray::Array2;

use super::{swish, BatchNorm, Builder, Conv, Ctx};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamId, ParamKind, Var};

/// `sum_d mix(W_d x + b_d, A_d * M_d)` plus an optional residual.
///
/// `x` is `[C_in, N, T, V]`, each weight `[C_out, C_in]`, each mask and
/// adjacency `[V, V]`. Mixing follows `y[.., i] = sum_j h[.., j] a[j, i]`.
pub fn sgc_forward<F: Element>(
    graph: &mut Graph<F>,
    x: Var,
    weights: &[(Var, Option<Var>)],
    masks: &[Var],
    adjacency: &[Array2<f64>],
    residual: Option<Var>,
) -> Result<Var> {
    if weights.len() != adjacency.len() || masks.len() != adjacency.len() || adjacency.is_empty() {
        return Err(Error::arg(format!(
            "sgc needs one weight and mask per partition: {} weights, {} masks, {} partitions",
            weights.len(),
            masks.len(),
            adjacency.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for ((&(w, b), &m), a) in weights.iter().zip(masks).zip(adjacency) {
        let h = graph.pointwise(x, w, b)?;
        let a = graph.input(a.mapv(F::of).into_dyn());
        let am = graph.mul(a, m)?;
        let y = graph.graph_mix(h, am)?;
        acc = Some(match acc {
            Some(s) => graph.add(s, y)?,
            None => y,
        });
    }
    let out = acc.expect("at least one partition");
    match residual {
        Some(r) => graph.add(out, r),
        None => Ok(out),
    }
}

/// Spatial graph convolution layer: partitioned mixing, BN, residual, Swish.
#[derive(Debug, Clone)]
pub struct SgcLayer {
    pub convs: Vec<Conv>,
    pub masks: Vec<ParamId>,
    adjacency: Vec<Array2<f64>>,
    pub bn: BatchNorm,
    /// Projection used when input and output widths differ.
    pub residual: Option<(Conv, BatchNorm)>,
    pub channels_in: usize,
    pub channels_out: usize,
}

impl SgcLayer {
    pub fn new<F: Element>(
        b: &mut Builder<'_, F>,
        channels_in: usize,
        channels_out: usize,
        adjacency: &[Array2<f64>],
    ) -> Result<Self> {
        if adjacency.is_empty() {
            return Err(Error::arg("sgc needs at least one partition"));
        }
        let v = adjacency[0].nrows();
        let mut convs = Vec::with_capacity(adjacency.len());
        let mut masks = Vec::with_capacity(adjacency.len());
        for d in 0..adjacency.len() {
            convs.push(Conv::pointwise(&mut b.scope(&format!("conv{d}")), channels_in, channels_out)?);
            masks.push(b.constant(&format!("edge{d}"), ParamKind::EdgeImportance, &[v, v], 1.0)?);
        }
        let bn = BatchNorm::new(&mut b.scope("bn"), channels_out)?;
        let residual = if channels_in != channels_out {
            Some((
                Conv::pointwise(&mut b.scope("residual.conv"), channels_in, channels_out)?,
                BatchNorm::new(&mut b.scope("residual.bn"), channels_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            convs,
            masks,
            adjacency: adjacency.to_vec(),
            bn,
            residual,
            channels_in,
            channels_out,
        })
    }

    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let mut weights = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let w = ctx.p(c.weight);
            let w = ctx.graph.reshape(w, &[c.channels_out, c.channels_in])?;
            weights.push((w, Some(ctx.p(c.bias))));
        }
        let masks: Vec<Var> = self.masks.iter().map(|&m| ctx.p(m)).collect();
        let y = sgc_forward(ctx.graph, x, &weights, &masks, &self.adjacency, None)?;
        let y = self.bn.forward(ctx, y)?;
        let res = match &self.residual {
            Some((conv, bn)) => {
                let r = conv.forward(ctx, x)?;
                bn.forward(ctx, r)?
            }
            None => x,
        };
        let out = ctx.graph.add(y, res)?;
        Ok(swish(ctx.graph, out))
    }
}
