//! Losses with their derivatives, averaged over every output element.

use ndarray::Array2;

use super::Matrix;
use crate::{Error, Result};

/// Huber loss of the residual `prediction - target` and its derivative with
/// respect to `prediction`: quadratic within `delta`, linear outside.
pub fn huber_loss(prediction: f64, target: f64, delta: f64) -> (f64, f64) {
    let r = prediction - target;
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

fn check_shapes(out: &Matrix, target: &Matrix) -> Result<()> {
    if out.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            out.dim(),
            target.dim()
        )));
    }
    Ok(())
}

pub fn huber(out: &Matrix, target: &Matrix, delta: f64) -> Result<(f64, Matrix)> {
    check_shapes(out, target)?;
    let n = out.len() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.iter_mut().zip(out.iter()).zip(target.iter()) {
        let (l, d) = huber_loss(p, t, delta);
        total += l;
        *g = d / n;
    }
    Ok((total / n, grad))
}

/// Half squared error.
pub fn squared(out: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check_shapes(out, target)?;
    let n = out.len() as f64;
    let r = out - target;
    let loss = r.iter().map(|v| 0.5 * v * v).sum::<f64>() / n;
    Ok((loss, r / n))
}

/// Softmax over consecutive groups of `classes` columns.
pub fn grouped_softmax(logits: &Matrix, classes: usize) -> Matrix {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        for group in row.as_slice_mut().expect("standard layout").chunks_mut(classes) {
            let max = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in group.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in group.iter_mut() {
                *v /= z;
            }
        }
    }
    probs
}

/// Cross-entropy of grouped softmax outputs. `target` has one column per
/// group holding the class index.
pub fn grouped_cross_entropy(logits: &Matrix, target: &Matrix, classes: usize) -> Result<(f64, Matrix)> {
    if logits.nrows() != target.nrows() || logits.ncols() != target.ncols() * classes {
        return Err(Error::Shape(format!(
            "logits {:?} vs class targets {:?} with {classes} classes",
            logits.dim(),
            target.dim()
        )));
    }
    let mut grad = grouped_softmax(logits, classes);
    let n = target.len() as f64;
    let mut total = 0.0;
    for ((r, k), &t) in target.indexed_iter() {
        let class = t as usize;
        if t < 0.0 || class >= classes || t.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!("class target {t} outside 0..{classes}")));
        }
        let col = k * classes + class;
        total -= grad[[r, col]].max(f64::MIN_POSITIVE).ln();
        grad[[r, col]] -= 1.0;
    }
    grad /= n;
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn huber_values() {
        assert_eq!(huber_loss(3.0, 3.0, 1.0), (0.0, 0.0));
        assert_eq!(huber_loss(0.5, 0.0, 1.0), (0.125, 0.5));
        assert_eq!(huber_loss(2.0, 0.0, 1.0), (1.5, 1.0));
        assert_eq!(huber_loss(-2.0, 0.0, 1.0), (1.5, -1.0));
    }

    #[test]
    fn huber_smooth_at_kink() {
        for delta in [0.3, 1.0, 2.5] {
            let (l_in, g_in) = huber_loss(delta - 1e-12, 0.0, delta);
            let (l_out, g_out) = huber_loss(delta + 1e-12, 0.0, delta);
            assert!((l_in - l_out).abs() < 1e-9);
            assert!((g_in - g_out).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let logits = Array2::zeros((1, 8));
        let (l, g) = grouped_cross_entropy(&logits, &array![[0.0, 3.0]], 4).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.sum()).abs() < 1e-12);
    }
}
