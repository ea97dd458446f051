use super::network::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam update. Parameters of frozen layers, and their
/// moments, are left untouched.
pub fn adam_step(p: &mut NetworkParams, st: &mut AdamState, grad: &[f64]) -> Result<()> {
    let n = p.param_count();
    if grad.len() != n || st.m.len() != n || st.v.len() != n {
        return Err(Error::InvalidInput(format!(
            "gradient {} / moments {} for {n} parameters",
            grad.len(),
            st.m.len()
        )));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite gradient entry {k}")));
    }
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - st.beta1.powi(t);
    let c2 = 1.0 - st.beta2.powi(t);
    let frozen = p.frozen_params();
    let w = p.weights_mut();
    for k in 0..n {
        if frozen[k] {
            continue;
        }
        let g = grad[k];
        st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
        st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g * g;
        let mh = st.m[k] / c1;
        let vh = st.v[k] / c2;
        w[k] -= st.lr * mh / (vh.sqrt() + st.eps);
    }
    Ok(())
}
