//! Central finite-difference verification of the analytic gradients.

use ndarray::Array2;
use rand::Rng;

use super::{ArchConfig, CountModel, Matrix, ModelKind, Mode, OrderingStyle};
use crate::rng;
use crate::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const GRADIENT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kind: ModelKind,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Builds a small random `kind` model and minibatch from `seed`, then compares
/// every analytic parameter gradient of the training loss with a five-point
/// central difference of step `epsilon`.
///
/// Regression targets are placed so that every residual is at least `0.2 δ`
/// away from the Huber kink at `|r| = δ`, where the loss has no second
/// derivative and differences are not informative.
pub fn gradient_check(kind: ModelKind, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let mut rng = rng::stream(seed, "gradcheck");
    let rows = rng.gen_range(1..=3);
    let cols = rng.gen_range(1..=3);
    let dim = rng.gen_range(2..=5);
    let k = rng.gen_range(1..=3);
    let batch = rng.gen_range(2..=4);
    let depth = rng.gen_range(1..=2);
    let arch = ArchConfig {
        hidden: (0..depth).map(|_| rng.gen_range(2..=6)).collect(),
        batch_norm: rng.gen_bool(0.5),
        seq_batch_norm: rng.gen_bool(0.5),
        encoder_dim: rng.gen_range(2..=5),
        lstm_hidden: rng.gen_range(1..=4),
        lstm_depth: 2,
        head_hidden: rng.gen_range(2..=5),
        ordering: if rng.gen_bool(0.5) { OrderingStyle::ColumnMajor } else { OrderingStyle::Snake },
        max_count: rng.gen_range(1..=4),
    };
    let delta = rng.gen_range(0.3..2.0);
    let mut model = CountModel::new(kind, rows, cols, dim, k, arch, seed)?;
    // move parameters off their initial values so biases and scales matter too
    for p in model.params_mut() {
        p.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
    }

    let x = Array2::from_shape_simple_fn((batch * model.rows_per_sample(), dim), || rng.gen_range(-1.0..1.0));
    let (out, _) = model.forward(&x, Mode::Train)?;
    let target: Matrix = match kind {
        ModelKind::GtClass => {
            let classes = model.arch.max_count + 1;
            Array2::from_shape_simple_fn((batch, k), || rng.gen_range(0..classes) as f64)
        }
        _ => out.mapv(|p| {
            let magnitude = if rng.gen_bool(0.5) {
                rng.gen_range(0.0..0.8) * delta
            } else {
                rng.gen_range(1.2..3.0) * delta
            };
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            p - sign * magnitude
        }),
    };

    let loss_at = |m: &CountModel| -> Result<f64> {
        let (out, _) = m.forward(&x, Mode::Train)?;
        Ok(m.loss(&out, &target, delta)?.0)
    };
    let (out, cache) = model.forward(&x, Mode::Train)?;
    let (_, d_out) = model.loss(&out, &target, delta)?;
    let analytic = model.backward(&cache, &d_out);

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut count = 0;
    for (p, grad) in analytic.iter().enumerate() {
        let grad = grad.as_standard_layout();
        for idx in 0..grad.len() {
            let original = nth(&mut model, p, idx, None);
            let mut at = |offset: f64| -> Result<f64> {
                nth(&mut model, p, idx, Some(original + offset));
                loss_at(&model)
            };
            let (up2, up, down, down2) = (at(2.0 * epsilon)?, at(epsilon)?, at(-epsilon)?, at(-2.0 * epsilon)?);
            nth(&mut model, p, idx, Some(original));
            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * epsilon);
            let a = grad.as_slice().expect("standard layout")[idx];
            let abs = (a - numeric).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR));
            count += 1;
        }
    }
    Ok(GradCheckReport {
        kind,
        parameters: count,
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
    })
}

/// Reads element `idx` of parameter `p`, optionally overwriting it.
fn nth(model: &mut CountModel, p: usize, idx: usize, set: Option<f64>) -> f64 {
    let mut params = model.params_mut();
    let slot = &mut params[p].as_slice_mut().expect("standard layout")[idx];
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}
