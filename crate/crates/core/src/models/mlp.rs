//! Multi-layer perceptron with optional batch normalization before every
//! rectifier, and its backward pass.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics (when the batch has more than one row).
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub sizes: Vec<usize>,
    /// Whether the last layer is also followed by normalization and a rectifier.
    pub relu_output: bool,
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..=limit)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array2::ones((1, width)),
            beta: Array2::zeros((1, width)),
            running_mean: Array2::zeros((1, width)),
            running_var: Array2::ones((1, width)),
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Matrix,
    inv_std: Matrix,
    /// Batch statistics, present when they were used.
    batch_stats: Option<(Matrix, Matrix)>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    norm: Option<NormCache>,
    /// Rectifier output (or the affine output for a linear last layer).
    output_mask: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub norms: Vec<Option<BatchNorm>>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.sizes.len() < 2 || spec.sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {:?}", spec.sizes)));
        }
        let n = spec.sizes.len() - 1;
        let layers = spec.sizes.windows(2).map(|s| Dense::init(s[0], s[1], rng)).collect();
        let norms = (0..n)
            .map(|i| (spec.batch_norm && (i + 1 < n || spec.relu_output)).then(|| BatchNorm::new(spec.sizes[i + 1])))
            .collect();
        Ok(Mlp { spec, layers, norms })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.sizes.last().unwrap()
    }

    fn rectified(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.spec.relu_output
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = h;
            let mut z = layer.forward(&input);
            let mut norm = None;
            if let Some(bn) = &self.norms[i] {
                let (y, cache) = bn_forward(bn, &z, mode);
                z = y;
                norm = Some(cache);
            }
            let output_mask = if self.rectified(i) {
                z.mapv_inplace(|v| v.max(0.0));
                Some(z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            } else {
                None
            };
            caches.push(LayerCache {
                input,
                norm,
                output_mask,
            });
            h = z;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    /// Gradient with respect to the input, and parameter gradients in
    /// [`Mlp::params`] order.
    pub fn backward(&self, cache: &MlpCache, d_out: &Matrix) -> (Matrix, Vec<Matrix>) {
        let mut grads: Vec<Vec<Matrix>> = vec![Vec::new(); self.layers.len()];
        let mut d = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[i];
            if let Some(mask) = &lc.output_mask {
                d = d * mask;
            }
            let mut norm_grads = Vec::new();
            if let (Some(bn), Some(nc)) = (&self.norms[i], &lc.norm) {
                let (dz, dgamma, dbeta) = bn_backward(bn, nc, &d);
                d = dz;
                norm_grads = vec![dgamma, dbeta];
            }
            let dw = lc.input.t().dot(&d);
            let db = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dx = d.dot(&layer.w.t());
            grads[i].push(dw);
            grads[i].push(db);
            grads[i].extend(norm_grads);
            d = dx;
        }
        (d, grads.into_iter().flatten().collect())
    }

    /// Folds the batch statistics seen in `cache` into the running averages.
    pub fn update_running_stats(&mut self, cache: &MlpCache) {
        for (bn, lc) in self.norms.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(NormCache { batch_stats: Some((mean, var)), .. })) = (bn, &lc.norm) {
                bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + var * BN_MOMENTUM;
            }
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            out.push(&layer.w);
            out.push(&layer.b);
            if let Some(bn) = norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for (layer, norm) in self.layers.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
            if let Some(bn) = norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, norm) in self.norms.iter().enumerate() {
            out.push(format!("{prefix}layer{i}.weight"));
            out.push(format!("{prefix}layer{i}.bias"));
            if norm.is_some() {
                out.push(format!("{prefix}layer{i}.bn_scale"));
                out.push(format!("{prefix}layer{i}.bn_shift"));
            }
        }
        out
    }

    /// Non-trainable state (running statistics), with names.
    pub fn buffers(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        self.norms
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|bn| (i, bn)))
            .flat_map(|(i, bn)| {
                [
                    (format!("{prefix}layer{i}.running_mean"), &bn.running_mean),
                    (format!("{prefix}layer{i}.running_var"), &bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Matrix> {
        self.norms
            .iter_mut()
            .flatten()
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var])
            .collect()
    }
}

fn bn_forward(bn: &BatchNorm, z: &Matrix, mode: Mode) -> (Matrix, NormCache) {
    let use_batch = mode == Mode::Train && z.nrows() > 1;
    let (mean, var) = if use_batch {
        let mean = z.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let centered = z - &mean;
        let var = (&centered * &centered).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let xhat = (z - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    let batch_stats = use_batch.then_some((mean, var));
    (
        y,
        NormCache {
            xhat,
            inv_std,
            batch_stats,
        },
    )
}

fn bn_backward(bn: &BatchNorm, cache: &NormCache, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let dz = if cache.batch_stats.is_some() {
        let n = dy.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0)).insert_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &cache.inv_std / n
    } else {
        dxhat * &cache.inv_std
    };
    (dz, dgamma, dbeta)
}
