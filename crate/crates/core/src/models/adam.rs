use ndarray::Zip;

use super::Matrix;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

/// One bias-corrected Adam update with step size `lr`.
pub fn adam_step(params: Vec<&mut Matrix>, grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() {
            return Err(Error::Shape(format!("parameter {i}: {:?} vs gradient {:?}", p.dim(), g.dim())));
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Matrix::zeros(g.raw_dim())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(grads).any(|(m, g)| m.dim() != g.dim()) {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        });
    }
    Ok(())
}
