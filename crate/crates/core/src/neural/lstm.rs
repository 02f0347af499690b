use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, HasParams, Param};
use crate::error::{Error, Result};

/// Single-direction LSTM. Gate blocks in the `4u` axis are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_x: Param,
    pub w_h: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates, `T x 4u`.
    gates: Array2<f64>,
    /// Cell states, `T x u`.
    cells: Array2<f64>,
    /// Hidden states, `T x u`.
    hidden: Array2<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w_x: Param::uniform(format!("{name}.w_x"), &[input, 4 * units], scale, rng),
            w_h: Param::uniform(format!("{name}.w_h"), &[units, 4 * units], scale, rng),
            bias: Param::zeros(format!("{name}.bias"), &[4 * units]),
        }
    }

    pub fn zeros(name: &str, input: usize, units: usize) -> Self {
        Self {
            w_x: Param::zeros(format!("{name}.w_x"), &[input, 4 * units]),
            w_h: Param::zeros(format!("{name}.w_h"), &[units, 4 * units]),
            bias: Param::zeros(format!("{name}.bias"), &[4 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, LstmCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "lstm expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::shape("lstm input has no timesteps"));
        }
        let (steps, u) = (x.nrows(), self.units());
        let pre_x = x.dot(&self.w_x.mat()) + &self.bias.vec();
        let w_h = self.w_h.mat();
        let mut gates = Array2::zeros((steps, 4 * u));
        let mut cells = Array2::zeros((steps, u));
        let mut hidden = Array2::zeros((steps, u));
        let mut h = Array1::<f64>::zeros(u);
        let mut c = Array1::<f64>::zeros(u);
        for t in 0..steps {
            let a = &pre_x.row(t) + &h.dot(&w_h);
            let mut g = gates.row_mut(t);
            for j in 0..u {
                let i_g = sigmoid(a[j]);
                let f_g = sigmoid(a[u + j]);
                let c_g = a[2 * u + j].tanh();
                let o_g = sigmoid(a[3 * u + j]);
                g[j] = i_g;
                g[u + j] = f_g;
                g[2 * u + j] = c_g;
                g[3 * u + j] = o_g;
                c[j] = f_g * c[j] + i_g * c_g;
                h[j] = o_g * c[j].tanh();
            }
            cells.row_mut(t).assign(&c);
            hidden.row_mut(t).assign(&h);
        }
        Ok((hidden.clone(), LstmCache { gates, cells, hidden }))
    }

    /// Backpropagation through time. `dh` is the loss gradient w.r.t. every
    /// output row; returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: ArrayView2<'_, f64>, cache: &LstmCache, dh: ArrayView2<'_, f64>) -> Array2<f64> {
        let (steps, u) = (x.nrows(), self.units());
        let mut da_all = Array2::<f64>::zeros((steps, 4 * u));
        let mut dh_next = Array1::<f64>::zeros(u);
        let mut dc_next = Array1::<f64>::zeros(u);
        let w_h = self.w_h.mat().to_owned();
        for t in (0..steps).rev() {
            let g = cache.gates.row(t);
            let c = cache.cells.row(t);
            let mut da = da_all.row_mut(t);
            for j in 0..u {
                let (i_g, f_g, c_g, o_g) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { 0.0 };
                let tanh_c = c[j].tanh();
                let dh_j = dh[[t, j]] + dh_next[j];
                let d_o = dh_j * tanh_c;
                let dc = dh_j * o_g * (1.0 - tanh_c * tanh_c) + dc_next[j];
                da[j] = dc * c_g * i_g * (1.0 - i_g);
                da[u + j] = dc * c_prev * f_g * (1.0 - f_g);
                da[2 * u + j] = dc * i_g * (1.0 - c_g * c_g);
                da[3 * u + j] = d_o * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            dh_next = w_h.dot(&da);
        }
        // h_{t-1} rows, with zeros for t = 0
        let mut h_prev = Array2::<f64>::zeros((steps, u));
        if steps > 1 {
            h_prev.slice_mut(s![1.., ..]).assign(&cache.hidden.slice(s![..steps - 1, ..]));
        }
        self.w_x.grad_mat_mut().scaled_add(1.0, &x.t().dot(&da_all));
        self.w_h.grad_mat_mut().scaled_add(1.0, &h_prev.t().dot(&da_all));
        self.bias.grad_vec_mut().scaled_add(1.0, &da_all.sum_axis(Axis(0)));
        da_all.dot(&self.w_x.mat().t())
    }
}

impl HasParams for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

/// Forward and backward LSTMs with outputs concatenated per timestep as
/// `[forward, backward]`, plus output dropout in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    reversed: Array2<f64>,
    mask: Option<Array2<f64>>,
}

fn reverse_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl BiLstm {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, dropout: f64, scale: f64, rng: &mut R) -> Self {
        Self {
            forward: Lstm::new(&format!("{name}.fwd"), input, units, scale, rng),
            backward: Lstm::new(&format!("{name}.bwd"), input, units, scale, rng),
            dropout,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.units()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, train: bool, seed: u64) -> Result<(Array2<f64>, BiLstmCache)> {
        let u = self.forward.units();
        let (hf, fwd) = self.forward.forward(x)?;
        let reversed = reverse_rows(x);
        let (hb, bwd) = self.backward.forward(reversed.view())?;
        let mut out = Array2::zeros((x.nrows(), 2 * u));
        out.slice_mut(s![.., ..u]).assign(&hf);
        out.slice_mut(s![.., u..]).assign(&hb.slice(s![..;-1, ..]));
        let mask = (train && self.dropout > 0.0).then(|| dropout_mask(x.nrows(), 2 * u, self.dropout, seed));
        if let Some(m) = &mask {
            out *= m;
        }
        Ok((out, BiLstmCache { fwd, bwd, reversed, mask }))
    }

    pub fn backward(&mut self, x: ArrayView2<'_, f64>, cache: &BiLstmCache, dout: ArrayView2<'_, f64>) -> Array2<f64> {
        let u = self.forward.units();
        let dout = match &cache.mask {
            Some(m) => &dout * m,
            None => dout.to_owned(),
        };
        let dx_f = self.forward.backward(x, &cache.fwd, dout.slice(s![.., ..u]));
        let dhb = reverse_rows(dout.slice(s![.., u..]));
        let dx_b = self.backward.backward(cache.reversed.view(), &cache.bwd, dhb.view());
        dx_f + &dx_b.slice(s![..;-1, ..])
    }
}

impl HasParams for BiLstm {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.forward.params();
        v.extend(self.backward.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.forward.params_mut();
        v.extend(self.backward.params_mut());
        v
    }
}
