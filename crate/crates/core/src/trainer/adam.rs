use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::param::Param;

/// Bias-corrected Adam with moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    /// name -> (first moment, second moment)
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One update of every parameter in `params` with the matching entry of
/// `grads`. The step counter advances once per call.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Param], grads: &[Vec<f64>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.data.len() != g.len() {
            return Err(Error::shape("adam_step", &p.shape, &[g.len()]));
        }
        if let Some((m, _)) = state.moments.get(&p.name) {
            if m.len() != g.len() {
                return Err(Error::shape("adam_step moments", &[m.len()], &[g.len()]));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (p, g) in params.iter_mut().zip(grads) {
        let (m, v) = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
