use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moments per parameter, plus the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter changes.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(crate::error::shape_err("adam_step", &[p.shape(), g.shape()]));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let c1 = T::one() - T::of(config.beta1.powi(t));
    let c2 = T::one() - T::of(config.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(config.eps));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![value]));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.5);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut st, &AdamConfig::default(), 1e-3).unwrap();
        let update = p.tensors()[0].data()[0] - 0.5;
        assert!((update + 1e-3 / (1.0 + 1e-9)).abs() < 1e-15, "{update}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.25);
        let mut st = AdamState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::from_vec(vec![0.0])], &mut st, &AdamConfig::default(), 0.1).unwrap();
        }
        assert_eq!(p.tensors()[0].data()[0], 0.25);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut p = single(0.25);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::from_vec(vec![f64::NAN])], &mut st, &AdamConfig::default(), 0.1);
        assert!(matches!(err, Err(Error::NonFiniteGradient(name)) if name == "w"));
        assert_eq!(p.tensors()[0].data()[0], 0.25);
        assert_eq!(st.step, 0);
    }
}
