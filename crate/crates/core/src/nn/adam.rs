use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Bias-corrected Adam. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

/// One update of every parameter from its accumulated gradient.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState) -> Result<(), NnError> {
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len()
        || params.iter().zip(&state.first_moment).any(|(p, m)| p.len() != m.len())
    {
        return Err(NnError::Shape("optimizer state does not match the parameter list".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first_moment).zip(&mut state.second_moment) {
        let grad: Vec<f64> = match p.grad() {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => continue,
        };
        for (((w, g), mi), vi) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w = T::of(w.as_f64() - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon));
        }
    }
    Ok(())
}
