use ndarray::{ArrayD, Zip};

use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore};

/// One Nesterov SGD update in place.
///
/// `g = grad + wd * p`, `v = momentum * v + g`, `p -= lr * (g + momentum * v)`.
pub fn sgd_nesterov_step<F: Element>(
    param: &mut ArrayD<F>,
    grad: &ArrayD<F>,
    velocity: &mut ArrayD<F>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::arg(format!(
            "parameter {:?}, gradient {:?} and velocity {:?} shapes differ",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let (lr, mu, wd) = (F::of(lr), F::of(momentum), F::of(weight_decay));
    Zip::from(param).and(grad).and(velocity).for_each(|p, &dp, v| {
        let g = dp + wd * *p;
        *v = mu * *v + g;
        *p = *p - lr * (g + mu * *v);
    });
    Ok(())
}

/// Nesterov SGD over every parameter of a store, with per-parameter velocity.
#[derive(Debug, Clone)]
pub struct Sgd<F: Element> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// When set, weight decay only touches `ParamKind::Weight` tensors.
    pub exclude_norm_and_bias: bool,
    velocity: Vec<ArrayD<F>>,
}

impl<F: Element> Sgd<F> {
    pub fn new(store: &ParamStore<F>, momentum: f64, weight_decay: f64, exclude_norm_and_bias: bool) -> Self {
        Self {
            momentum,
            weight_decay,
            exclude_norm_and_bias,
            velocity: store.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        }
    }

    /// Weight decay applied to the parameter at `index` of the store.
    pub fn decay_for(&self, store: &ParamStore<F>, index: usize) -> f64 {
        if !self.exclude_norm_and_bias || store.params()[index].kind.decays() {
            self.weight_decay
        } else {
            0.0
        }
    }

    /// Applies one update; parameters without a gradient see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if self.velocity.len() != store.params().len() {
            return Err(Error::State("optimizer was built for a different parameter store".into()));
        }
        let decays: Vec<f64> = (0..self.velocity.len()).map(|i| self.decay_for(store, i)).collect();
        for ((p, v), wd) in store.params_mut().iter_mut().zip(&mut self.velocity).zip(decays) {
            let grad = match p.grad.take() {
                Some(g) => g,
                None => ArrayD::zeros(p.value.raw_dim()),
            };
            sgd_nesterov_step(&mut p.value, &grad, v, lr, self.momentum, wd)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn scalar(x: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(&[1]), x)
    }

    #[test]
    fn plain_descent_and_zero_grad() {
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        sgd_nesterov_step(&mut p, &scalar(0.5), &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p[0], 0.95);
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        sgd_nesterov_step(&mut p, &scalar(0.0), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn two_step_trace() {
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        sgd_nesterov_step(&mut p, &scalar(0.5), &mut v, lr, mu, wd).unwrap();
        // g1 = 0.5 + 0.01 = 0.51, v1 = 0.51, p1 = 1 - 0.1 * (0.51 + 0.459)
        let g1 = 0.5 + wd * 1.0;
        let v1 = g1;
        let p1 = 1.0 - lr * (g1 + mu * v1);
        assert_eq!(p[0], p1);
        assert_eq!(v[0], v1);
        sgd_nesterov_step(&mut p, &scalar(-0.2), &mut v, lr, mu, wd).unwrap();
        let g2 = -0.2 + wd * p1;
        let v2 = mu * v1 + g2;
        let p2 = p1 - lr * (g2 + mu * v2);
        assert_eq!(p[0], p2);
        assert_eq!(v[0], v2);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = ArrayD::<f64>::zeros(IxDyn(&[2]));
        let mut v = ArrayD::<f64>::zeros(IxDyn(&[2]));
        assert!(sgd_nesterov_step(&mut p, &scalar(1.0), &mut v, 0.1, 0.9, 0.0).is_err());
    }
}
