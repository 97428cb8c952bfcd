//! Temporal convolution kernels over `[C, N, T, V]` feature maps.

use ndarray::{Array2, ArrayView2};

use super::Element;

/// Shape bookkeeping for an `L x 1` convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub kernel: usize,
    pub stride: usize,
    pub n: usize,
    pub t: usize,
    pub v: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn t_out(&self) -> usize {
        (self.t - 1) / self.stride + 1
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.cin == self.cout
    }

    /// Input frame read by output frame `o` at kernel tap `k`, if inside the sequence.
    #[inline]
    fn source_frame(&self, o: usize, k: usize) -> Option<usize> {
        let ti = (o * self.stride + k) as isize - self.pad() as isize;
        (ti >= 0 && (ti as usize) < self.t).then_some(ti as usize)
    }
}

fn im2col<F: Element>(x: &[F], g: &ConvGeom, group: usize) -> Array2<F> {
    let (cig, l, n, v, to) = (g.cin_g(), g.kernel, g.n, g.v, g.t_out());
    let mut cols = Array2::<F>::zeros((cig * l, n * to * v));
    for ci in 0..cig {
        let c = group * cig + ci;
        for k in 0..l {
            let mut row = cols.row_mut(ci * l + k);
            let dst = row.as_slice_mut().expect("contiguous row");
            for nn in 0..n {
                for o in 0..to {
                    if let Some(ti) = g.source_frame(o, k) {
                        let src = ((c * n + nn) * g.t + ti) * v;
                        let d = (nn * to + o) * v;
                        dst[d..d + v].copy_from_slice(&x[src..src + v]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<F: Element>(dcols: &Array2<F>, dx: &mut [F], g: &ConvGeom, group: usize) {
    let (cig, l, n, v, to) = (g.cin_g(), g.kernel, g.n, g.v, g.t_out());
    for ci in 0..cig {
        let c = group * cig + ci;
        for k in 0..l {
            let row = dcols.row(ci * l + k);
            let src = row.as_slice().expect("contiguous row");
            for nn in 0..n {
                for o in 0..to {
                    if let Some(ti) = g.source_frame(o, k) {
                        let d = ((c * n + nn) * g.t + ti) * v;
                        let s = (nn * to + o) * v;
                        for (a, &b) in dx[d..d + v].iter_mut().zip(&src[s..s + v]) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

fn weight_view<'a, F: Element>(w: &'a [F], g: &ConvGeom, group: usize) -> ArrayView2<'a, F> {
    let (cog, row) = (g.cout_g(), g.cin_g() * g.kernel);
    let start = group * cog * row;
    ArrayView2::from_shape((cog, row), &w[start..start + cog * row]).expect("weight slice shape")
}

pub(crate) fn conv_forward<F: Element>(x: &[F], w: &[F], b: Option<&[F]>, g: &ConvGeom) -> Vec<F> {
    let (n, v, to) = (g.n, g.v, g.t_out());
    let plane = n * to * v;
    let mut y = vec![F::zero(); g.cout * plane];
    if g.depthwise() {
        let l = g.kernel;
        for c in 0..g.cin {
            for nn in 0..n {
                for o in 0..to {
                    let yo = ((c * n + nn) * to + o) * v;
                    let yrow = &mut y[yo..yo + v];
                    for k in 0..l {
                        if let Some(ti) = g.source_frame(o, k) {
                            let wk = w[c * l + k];
                            let xo = ((c * n + nn) * g.t + ti) * v;
                            for (a, &xv) in yrow.iter_mut().zip(&x[xo..xo + v]) {
                                *a += wk * xv;
                            }
                        }
                    }
                }
            }
        }
    } else {
        let cog = g.cout_g();
        for group in 0..g.groups {
            let cols = im2col(x, g, group);
            let yg = weight_view(w, g, group).dot(&cols);
            let start = group * cog * plane;
            y[start..start + cog * plane].copy_from_slice(yg.as_slice().expect("standard layout"));
        }
    }
    if let Some(b) = b {
        for (c, chunk) in y.chunks_mut(plane).enumerate() {
            for a in chunk {
                *a += b[c];
            }
        }
    }
    y
}

pub(crate) struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Option<Vec<F>>,
    pub db: Option<Vec<F>>,
}

pub(crate) fn conv_backward<F: Element>(
    dy: &[F],
    x: &[F],
    w: &[F],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<F> {
    let (need_dx, need_dw, need_db) = need;
    let (n, v, to) = (g.n, g.v, g.t_out());
    let plane = n * to * v;
    let mut dx = need_dx.then(|| vec![F::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![F::zero(); w.len()]);
    let db = need_db.then(|| dy.chunks(plane).map(|c| c.iter().copied().sum()).collect());

    if g.depthwise() {
        let l = g.kernel;
        for c in 0..g.cin {
            for nn in 0..n {
                for o in 0..to {
                    let yo = ((c * n + nn) * to + o) * v;
                    let drow = &dy[yo..yo + v];
                    for k in 0..l {
                        let Some(ti) = g.source_frame(o, k) else { continue };
                        let xo = ((c * n + nn) * g.t + ti) * v;
                        if let Some(dw) = dw.as_mut() {
                            let s: F = drow.iter().zip(&x[xo..xo + v]).map(|(&a, &b)| a * b).sum();
                            dw[c * l + k] += s;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wk = w[c * l + k];
                            for (a, &d) in dx[xo..xo + v].iter_mut().zip(drow) {
                                *a += wk * d;
                            }
                        }
                    }
                }
            }
        }
    } else {
        let cog = g.cout_g();
        for group in 0..g.groups {
            let start = group * cog * plane;
            let dyg = ArrayView2::from_shape((cog, plane), &dy[start..start + cog * plane])
                .expect("gradient slice shape");
            if let Some(dw) = dw.as_mut() {
                let cols = im2col(x, g, group);
                let dwg = dyg.dot(&cols.t());
                let row = g.cin_g() * g.kernel;
                let ws = group * cog * row;
                dw[ws..ws + cog * row].copy_from_slice(dwg.as_slice().expect("standard layout"));
            }
            if let Some(dx) = dx.as_mut() {
                let dcols = weight_view(w, g, group).t().dot(&dyg);
                col2im_add(&dcols, dx, g, group);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
