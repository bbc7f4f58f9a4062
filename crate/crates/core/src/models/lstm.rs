//! LSTM, bi-directional LSTM and the two-layer bi-directional stack used to
//! pass context along a cell sequence.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::Matrix;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gates are packed `[input, forget, candidate, output]` along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub hidden: usize,
    pub wx: Matrix,
    pub wh: Matrix,
    pub b: Matrix,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    i: Matrix,
    f: Matrix,
    g: Matrix,
    o: Matrix,
    tanh_c: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepCache>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let limit_x = (6.0 / (input + 4 * hidden) as f64).sqrt();
        let limit_h = (6.0 / (5 * hidden) as f64).sqrt();
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Lstm {
            hidden,
            wx: Array2::from_shape_simple_fn((input, 4 * hidden), || rng.gen_range(-limit_x..=limit_x)),
            wh: Array2::from_shape_simple_fn((hidden, 4 * hidden), || rng.gen_range(-limit_h..=limit_h)),
            b,
        }
    }

    /// Runs the sequence from zero initial state; returns the hidden state at every step.
    pub fn forward(&self, xs: &[Matrix]) -> (Vec<Matrix>, LstmCache) {
        let hd = self.hidden;
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut h = Array2::zeros((batch, hd));
        let mut c = Array2::zeros((batch, hd));
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let a = x.dot(&self.wx) + h.dot(&self.wh) + &self.b;
            let i = a.slice(s![.., 0..hd]).mapv(sigmoid);
            let f = a.slice(s![.., hd..2 * hd]).mapv(sigmoid);
            let g = a.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
            let o = a.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            steps.push(StepCache {
                x: x.clone(),
                h_prev: h,
                c_prev: c,
                i,
                f,
                g,
                o,
                tanh_c,
            });
            outs.push(h_new.clone());
            h = h_new;
            c = c_new;
        }
        (outs, LstmCache { steps })
    }

    /// Back-propagation through time. Returns input gradients per step and
    /// `[d wx, d wh, d b]`.
    pub fn backward(&self, cache: &LstmCache, d_hs: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>) {
        let hd = self.hidden;
        let mut dwx = Array2::zeros(self.wx.raw_dim());
        let mut dwh = Array2::zeros(self.wh.raw_dim());
        let mut db = Array2::zeros(self.b.raw_dim());
        let mut dxs = vec![Array2::zeros((0, 0)); cache.steps.len()];
        let Some(first) = cache.steps.first() else {
            return (dxs, vec![dwx, dwh, db]);
        };
        let batch = first.x.nrows();
        let mut dh_next: Matrix = Array2::zeros((batch, hd));
        let mut dc_next: Matrix = Array2::zeros((batch, hd));
        for (t, st) in cache.steps.iter().enumerate().rev() {
            let dh = &d_hs[t] + &dh_next;
            let d_o = &dh * &st.tanh_c;
            let dc = &dc_next + &(&dh * &st.o * &st.tanh_c.mapv(|v| 1.0 - v * v));
            let di = &dc * &st.g;
            let dg = &dc * &st.i;
            let df = &dc * &st.c_prev;
            dc_next = &dc * &st.f;

            let mut da = Array2::zeros((batch, 4 * hd));
            da.slice_mut(s![.., 0..hd]).assign(&(di * st.i.mapv(|v| v * (1.0 - v))));
            da.slice_mut(s![.., hd..2 * hd]).assign(&(df * st.f.mapv(|v| v * (1.0 - v))));
            da.slice_mut(s![.., 2 * hd..3 * hd]).assign(&(dg * st.g.mapv(|v| 1.0 - v * v)));
            da.slice_mut(s![.., 3 * hd..4 * hd]).assign(&(d_o * st.o.mapv(|v| v * (1.0 - v))));

            dwx += &st.x.t().dot(&da);
            dwh += &st.h_prev.t().dot(&da);
            db += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = da.dot(&self.wx.t());
            dh_next = da.dot(&self.wh.t());
        }
        (dxs, vec![dwx, dwh, db])
    }

    fn params(&self) -> [&Matrix; 3] {
        [&self.wx, &self.wh, &self.b]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.wx, &mut self.wh, &mut self.b]
    }
}

/// Forward and reverse LSTMs over the same sequence; the output at step `t`
/// is `[forward_t | backward_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(input, hidden, rng),
            backward: Lstm::new(input, hidden, rng),
        }
    }

    pub fn run(&self, xs: &[Matrix]) -> (Vec<Matrix>, BiLstmCache) {
        let (hf, fwd) = self.forward.forward(xs);
        let reversed: Vec<Matrix> = xs.iter().rev().cloned().collect();
        let (mut hb, bwd) = self.backward.forward(&reversed);
        hb.reverse();
        let outs = hf
            .iter()
            .zip(&hb)
            .map(|(f, b)| ndarray::concatenate(Axis(1), &[f.view(), b.view()]).unwrap())
            .collect();
        (outs, BiLstmCache { fwd, bwd })
    }

    pub fn backprop(&self, cache: &BiLstmCache, d_outs: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>) {
        let hd = self.forward.hidden;
        let d_f: Vec<Matrix> = d_outs.iter().map(|d| d.slice(s![.., 0..hd]).to_owned()).collect();
        let d_b_rev: Vec<Matrix> = d_outs.iter().rev().map(|d| d.slice(s![.., hd..2 * hd]).to_owned()).collect();
        let (dx_f, g_f) = self.forward.backward(&cache.fwd, &d_f);
        let (dx_b_rev, g_b) = self.backward.backward(&cache.bwd, &d_b_rev);
        let dxs = dx_f.iter().zip(dx_b_rev.iter().rev()).map(|(a, b)| a + b).collect();
        (dxs, g_f.into_iter().chain(g_b).collect())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.forward.params().into_iter().chain(self.backward.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let BiLstm { forward, backward } = self;
        forward.params_mut().into_iter().chain(backward.params_mut()).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        ["fwd", "bwd"]
            .iter()
            .flat_map(|d| ["wx", "wh", "bias"].map(|p| format!("{prefix}{d}.{p}")))
            .collect()
    }
}

/// Bi-directional layers applied in sequence, each consuming the previous
/// layer's per-step outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstm>,
}

impl BiLstmStack {
    pub fn new(input: usize, hidden: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..depth)
            .map(|d| BiLstm::new(if d == 0 { input } else { 2 * hidden }, hidden, rng))
            .collect();
        BiLstmStack { layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers.last().map_or(0, |l| l.forward.hidden)
    }

    pub fn run(&self, xs: &[Matrix]) -> (Vec<Matrix>, Vec<BiLstmCache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut seq = xs.to_vec();
        for layer in &self.layers {
            let (out, cache) = layer.run(&seq);
            caches.push(cache);
            seq = out;
        }
        (seq, caches)
    }

    pub fn backprop(&self, caches: &[BiLstmCache], d_outs: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>) {
        let mut grads: Vec<Vec<Matrix>> = vec![Vec::new(); self.layers.len()];
        let mut d = d_outs.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backprop(&caches[l], &d);
            grads[l] = g;
            d = dx;
        }
        (d, grads.into_iter().flatten().collect())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(BiLstm::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(BiLstm::params_mut).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| layer.param_names(&format!("{prefix}layer{l}.")))
            .collect()
    }
}
