use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| vec![T::ZERO; p.value.len()]).collect();
        Self {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn matches(&self, params: &ParamStore<T>) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(p, (m, v))| m.len() == p.value.len() && v.len() == p.value.len())
    }
}

/// One bias-corrected Adam update with learning rate `lr`; clears the
/// gradients afterwards. Every parameter must carry a gradient.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamParams,
) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::invalid("adam_step", "optimizer state does not match parameters"));
    }
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one_m_b1 = T::from_f64(1.0 - hyper.beta1);
    let one_m_b2 = T::from_f64(1.0 - hyper.beta2);
    let corr1 = T::from_f64(1.0 - hyper.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - hyper.beta2.powi(t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(hyper.epsilon);

    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = p.grad.take().expect("checked above");
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + one_m_b1 * g;
            *vi = b2 * *vi + one_m_b2 * g * g;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
