use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{HasParams, Param};

/// Affine map `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[input, output], scale, rng),
            bias: Param::zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[input, output]),
            bias: Param::zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward_vec(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        x.dot(&self.weight.mat()) + &self.bias.vec()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.mat()) + &self.bias.vec()
    }

    pub fn backward_vec(&mut self, x: ArrayView1<'_, f64>, dy: ArrayView1<'_, f64>) -> Array1<f64> {
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        for i in 0..n_in {
            let xi = x[i];
            if xi != 0.0 {
                let row = &mut self.weight.grad[i * n_out..(i + 1) * n_out];
                for (g, &d) in row.iter_mut().zip(dy.iter()) {
                    *g += xi * d;
                }
            }
        }
        for (g, &d) in self.bias.grad.iter_mut().zip(dy.iter()) {
            *g += d;
        }
        self.weight.mat().dot(&dy)
    }

    pub fn backward(&mut self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        let gw = x.t().dot(&dy);
        self.weight.grad_mat_mut().scaled_add(1.0, &gw);
        self.bias.grad_vec_mut().scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dy.dot(&self.weight.mat().t())
    }
}

impl HasParams for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
