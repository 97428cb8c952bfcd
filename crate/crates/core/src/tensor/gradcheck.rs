use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Graph, ParamStore, Var};
use crate::error::Result;

/// Anything that owns parameters and can rebuild a scalar loss from them.
///
/// The loss must be a deterministic function of the parameter values.
pub trait GradCheckable<F: Element> {
    fn store(&mut self) -> &mut ParamStore<F>;

    fn loss(&mut self, graph: &mut Graph<F>) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter; smaller tensors are checked exhaustively.
    pub samples_per_param: usize,
    /// Denominator floor for the relative error, so exactly-zero gradients
    /// compare on an absolute scale.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            samples_per_param: 32,
            abs_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

fn eval_loss<F: Element, M: GradCheckable<F> + ?Sized>(model: &mut M) -> Result<f64> {
    let mut g = Graph::inference();
    let loss = model.loss(&mut g)?;
    Ok(g.scalar(loss).as_f64())
}

/// Compares tape gradients against central finite differences.
pub fn grad_check<F: Element, M: GradCheckable<F> + ?Sized>(
    model: &mut M,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let loss = model.loss(&mut g)?;
    model.store().zero_grad();
    g.backward(loss, model.store())?;
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = model.store().ids().collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let (name, len, analytic) = {
            let p = model.store().param(id);
            let grad = p
                .grad
                .clone()
                .unwrap_or_else(|| ndarray::ArrayD::zeros(p.value.raw_dim()));
            (p.name.clone(), p.value.len(), grad)
        };
        let coords: Vec<usize> = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_rel = 0.0f64;
        for &k in &coords {
            let orig = model.store().param(id).value.as_slice().expect("standard layout")[k];
            let set = |m: &mut M, v: F| {
                m.store().param_mut(id).value.as_slice_mut().expect("standard layout")[k] = v;
            };
            set(model, orig + F::of(opts.step));
            let up = eval_loss(model)?;
            set(model, orig - F::of(opts.step));
            let down = eval_loss(model)?;
            set(model, orig);
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.as_slice().expect("standard layout")[k].as_f64();
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
        entries.push(ParamCheck {
            name,
            checked: coords.len(),
            max_rel_error: max_rel,
            passed: max_rel <= opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        entries,
    })
}

/// A parameter store paired with a loss-building closure.
pub struct ClosureModel<F: Element, L> {
    pub store: ParamStore<F>,
    pub build: L,
}

impl<F, L> GradCheckable<F> for ClosureModel<F, L>
where
    F: Element,
    L: FnMut(&mut Graph<F>, &ParamStore<F>) -> Result<Var>,
{
    fn store(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn loss(&mut self, graph: &mut Graph<F>) -> Result<Var> {
        (self.build)(graph, &self.store)
    }
}
