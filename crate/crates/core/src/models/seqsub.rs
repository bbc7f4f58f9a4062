//! Sequential subitizing: a shared per-cell encoder, two cell traversals each
//! fed to its own stack of bi-directional LSTMs, and a head mapping every
//! cell's concatenated context vector to per-category counts.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstmCache, BiLstmStack};
use super::mlp::{Mlp, MlpCache, MlpSpec, Mode};
use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStyle {
    /// Column-major raster.
    #[default]
    ColumnMajor,
    /// Column-wise boustrophedon: down the first column, up the second, ...
    Snake,
}

/// The two traversals of a `rows x cols` grid: the reflected-N order
/// (column-wise) and the Z order (row-major raster). Entries are row-major
/// cell indices.
pub fn cell_orderings(rows: usize, cols: usize) -> (Vec<usize>, Vec<usize>) {
    cell_orderings_with(rows, cols, OrderingStyle::ColumnMajor)
}

pub fn cell_orderings_with(rows: usize, cols: usize, style: OrderingStyle) -> (Vec<usize>, Vec<usize>) {
    let z: Vec<usize> = (0..rows * cols).collect();
    let n = (0..cols)
        .flat_map(|c| {
            let down = style == OrderingStyle::ColumnMajor || c % 2 == 0;
            (0..rows).map(move |r| if down { r } else { rows - 1 - r }).map(move |r| r * cols + c)
        })
        .collect();
    (n, z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqSubSpec {
    pub rows: usize,
    pub cols: usize,
    pub input_dim: usize,
    pub encoder_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_depth: usize,
    pub head_hidden: usize,
    pub outputs: usize,
    pub batch_norm: bool,
    #[serde(default)]
    pub ordering: OrderingStyle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqSub {
    pub spec: SeqSubSpec,
    pub orderings: [Vec<usize>; 2],
    pub encoder: Mlp,
    pub aggregators: [BiLstmStack; 2],
    pub head: Mlp,
}

pub struct SeqSubCache {
    batch: usize,
    encoder: MlpCache,
    aggregators: Vec<Vec<BiLstmCache>>,
    head: MlpCache,
}

impl SeqSub {
    pub fn new(spec: SeqSubSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.rows == 0 || spec.cols == 0 || spec.lstm_hidden == 0 || spec.lstm_depth == 0 {
            return Err(Error::InvalidArgument(format!("bad seq-sub spec {spec:?}")));
        }
        let encoder = Mlp::new(
            MlpSpec {
                sizes: vec![spec.input_dim, spec.encoder_dim],
                relu_output: true,
                batch_norm: spec.batch_norm,
            },
            rng,
        )?;
        let aggregators = [
            BiLstmStack::new(spec.encoder_dim, spec.lstm_hidden, spec.lstm_depth, rng),
            BiLstmStack::new(spec.encoder_dim, spec.lstm_hidden, spec.lstm_depth, rng),
        ];
        let head = Mlp::new(
            MlpSpec {
                sizes: vec![4 * spec.lstm_hidden, spec.head_hidden, spec.outputs],
                relu_output: false,
                batch_norm: spec.batch_norm,
            },
            rng,
        )?;
        let (n_order, z_order) = cell_orderings_with(spec.rows, spec.cols, spec.ordering);
        Ok(SeqSub {
            spec,
            orderings: [n_order, z_order],
            encoder,
            aggregators,
            head,
        })
    }

    pub fn cells(&self) -> usize {
        self.spec.rows * self.spec.cols
    }

    /// `x` holds `batch * cells` rows, row `b * cells + i` being cell `i` of
    /// sample `b`. Output rows follow the same layout.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, SeqSubCache)> {
        let n = self.cells();
        if x.nrows() % n != 0 {
            return Err(Error::Shape(format!(
                "{} rows is not a whole number of {}x{} grids",
                x.nrows(),
                self.spec.rows,
                self.spec.cols
            )));
        }
        let batch = x.nrows() / n;
        let (encoded, enc_cache) = self.encoder.forward(x, mode)?;

        let mut contexts = Vec::with_capacity(2);
        let mut agg_caches = Vec::with_capacity(2);
        for (order, stack) in self.orderings.iter().zip(&self.aggregators) {
            let seq: Vec<Matrix> = order
                .iter()
                .map(|&cell| gather_rows(&encoded, batch, n, cell))
                .collect();
            let (outs, cache) = stack.run(&seq);
            let mut context = Array2::zeros((batch * n, stack.output_dim()));
            for (t, &cell) in order.iter().enumerate() {
                for b in 0..batch {
                    context.row_mut(b * n + cell).assign(&outs[t].row(b));
                }
            }
            contexts.push(context);
            agg_caches.push(cache);
        }
        let v = concatenate(Axis(1), &[contexts[0].view(), contexts[1].view()]).unwrap();
        let (out, head_cache) = self.head.forward(&v, mode)?;
        Ok((
            out,
            SeqSubCache {
                batch,
                encoder: enc_cache,
                aggregators: agg_caches,
                head: head_cache,
            },
        ))
    }

    /// Parameter gradients in [`SeqSub::params`] order.
    pub fn backward(&self, cache: &SeqSubCache, d_out: &Matrix) -> Vec<Matrix> {
        let n = self.cells();
        let batch = cache.batch;
        let (d_v, head_grads) = self.head.backward(&cache.head, d_out);
        let width = self.aggregators[0].output_dim();

        let mut d_encoded = Array2::zeros((batch * n, self.spec.encoder_dim));
        let mut agg_grads = Vec::new();
        for (j, (order, stack)) in self.orderings.iter().zip(&self.aggregators).enumerate() {
            let d_context = d_v.slice(s![.., j * width..(j + 1) * width]);
            let d_outs: Vec<Matrix> = order
                .iter()
                .map(|&cell| {
                    let mut d = Array2::zeros((batch, width));
                    for b in 0..batch {
                        d.row_mut(b).assign(&d_context.row(b * n + cell));
                    }
                    d
                })
                .collect();
            let (d_seq, grads) = stack.backprop(&cache.aggregators[j], &d_outs);
            for (t, &cell) in order.iter().enumerate() {
                for b in 0..batch {
                    let mut row = d_encoded.row_mut(b * n + cell);
                    row += &d_seq[t].row(b);
                }
            }
            agg_grads.extend(grads);
        }
        let (_, enc_grads) = self.encoder.backward(&cache.encoder, &d_encoded);
        enc_grads.into_iter().chain(agg_grads).chain(head_grads).collect()
    }

    pub fn update_running_stats(&mut self, cache: &SeqSubCache) {
        self.encoder.update_running_stats(&cache.encoder);
        self.head.update_running_stats(&cache.head);
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = self.encoder.params();
        out.extend(self.aggregators[0].params());
        out.extend(self.aggregators[1].params());
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let SeqSub {
            encoder,
            aggregators,
            head,
            ..
        } = self;
        let [a0, a1] = aggregators;
        let mut out = encoder.params_mut();
        out.extend(a0.params_mut());
        out.extend(a1.params_mut());
        out.extend(head.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = self.encoder.param_names("encoder.");
        out.extend(self.aggregators[0].param_names("context_n."));
        out.extend(self.aggregators[1].param_names("context_z."));
        out.extend(self.head.param_names("head."));
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.buffers("encoder.");
        out.extend(self.head.buffers("head."));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.buffers_mut();
        out.extend(self.head.buffers_mut());
        out
    }
}

fn gather_rows(m: &Matrix, batch: usize, cells: usize, cell: usize) -> Matrix {
    let mut out = Array2::zeros((batch, m.ncols()));
    for b in 0..batch {
        out.row_mut(b).assign(&m.row(b * cells + cell));
    }
    out
}
