//! Adam optimizer with bias correction.

use super::{NetworkSpec, NnError, Params};

/// Optimizer state: first/second moment accumulators shaped like the
/// parameters, plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Params,
    v: Params,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(spec: &NetworkSpec, lr: f64) -> Self {
        AdamState {
            m: Params::zeros(spec),
            v: Params::zeros(spec),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. Rejects non-finite gradients, naming the
/// offending tensor.
pub fn adam_step(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
) -> Result<(), NnError> {
    for (name, tensor) in grads.flatten() {
        if tensor.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(name));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);

    let mut p_flat = params.flatten_mut();
    let g_flat = grads.flatten();
    let mut m_flat = state.m.flatten_mut();
    let mut v_flat = state.v.flatten_mut();
    debug_assert_eq!(p_flat.len(), g_flat.len());

    for (((p, g), m), v) in p_flat
        .iter_mut()
        .zip(&g_flat)
        .zip(m_flat.iter_mut())
        .zip(v_flat.iter_mut())
    {
        if p.1.len() != g.1.len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient tensor `{}`: {} vs {}",
                g.0,
                g.1.len(),
                p.1.len()
            )));
        }
        for i in 0..p.1.len() {
            let grad = g.1[i];
            m.1[i] = state.beta1 * m.1[i] + (1.0 - state.beta1) * grad;
            v.1[i] = state.beta2 * v.1[i] + (1.0 - state.beta2) * grad * grad;
            let m_hat = m.1[i] / bias1;
            let v_hat = v.1[i] / bias2;
            p.1[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
