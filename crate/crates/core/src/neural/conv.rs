use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::{Activation, HasParams, Param};
use crate::error::{Error, Result};

/// 1-D convolution over time ("valid" windows) followed by max-over-time pooling.
///
/// Filters are stored flattened as a `(ks * dim) x m` matrix so that a window
/// of `ks` consecutive rows, read row-major, is one input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCnn {
    pub filters: Param,
    pub bias: Param,
    pub ks: usize,
    pub dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    /// Winning window start per channel.
    pub argmax: Vec<usize>,
    /// Pre-activation value at the winning window.
    pub pre_max: Vec<f64>,
}

impl ContentCnn {
    pub fn new<R: Rng>(
        name: &str,
        ks: usize,
        dim: usize,
        channels: usize,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            filters: Param::uniform(format!("{name}.filters"), &[ks * dim, channels], scale, rng),
            bias: Param::zeros(format!("{name}.bias"), &[channels]),
            ks,
            dim,
            activation,
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::shape(format!("cnn expects width {}, got {}", self.dim, x.ncols())));
        }
        if x.nrows() < self.ks {
            return Err(Error::shape(format!(
                "sequence length {} shorter than kernel width {}",
                x.nrows(),
                self.ks
            )));
        }
        Ok(())
    }

    /// Pre-activation map, `(T - ks + 1) x m`.
    pub fn feature_map(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let x = x.as_standard_layout();
        let flat = x.as_slice().unwrap();
        let positions = x.nrows() - self.ks + 1;
        let width = self.ks * self.dim;
        let mut windows = Array2::zeros((positions, width));
        for t in 0..positions {
            windows
                .row_mut(t)
                .assign(&ArrayView1::from(&flat[t * self.dim..t * self.dim + width]));
        }
        Ok(windows.dot(&self.filters.mat()) + &self.bias.vec())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, CnnCache)> {
        let pre = self.feature_map(x)?;
        let (pre_max, argmax) = super::max_over_time(pre.view());
        // activation is monotone, so pooling before activating is equivalent
        let pooled = pre_max.iter().map(|&v| self.activation.apply(v)).collect();
        Ok((pooled, CnnCache { argmax, pre_max }))
    }

    /// Accumulates filter/bias gradients; returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: ArrayView2<'_, f64>, cache: &CnnCache, dpooled: &[f64]) -> Array2<f64> {
        let m = self.channels();
        let width = self.ks * self.dim;
        let x = x.as_standard_layout();
        let flat = x.as_slice().unwrap();
        let mut dx = Array2::zeros(x.raw_dim());
        let dx_flat = dx.as_slice_mut().unwrap();
        for c in 0..m {
            let d = dpooled[c] * self.activation.derivative(cache.pre_max[c]);
            if d == 0.0 {
                continue;
            }
            let start = cache.argmax[c] * self.dim;
            let window = &flat[start..start + width];
            for (j, &w) in window.iter().enumerate() {
                self.filters.grad[j * m + c] += w * d;
                dx_flat[start + j] += self.filters.value[j * m + c] * d;
            }
            self.bias.grad[c] += d;
        }
        dx
    }
}

impl HasParams for ContentCnn {
    fn params(&self) -> Vec<&Param> {
        vec![&self.filters, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.filters, &mut self.bias]
    }
}
