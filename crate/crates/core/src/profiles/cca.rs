//! Regularized canonical correlation analysis.
//!
//! Both views are centred, their covariances ridged by `r * I` and whitened
//! with the inverse square root; the SVD of the whitened cross-covariance
//! gives the canonical pairs. Directions are unit-variance under the ridged
//! covariance, i.e. `Wx' (Cxx + rI) Wx = I`.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which an unregularized covariance is singular.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaProjection {
    /// `ds x k`
    pub wx: Array2<f64>,
    /// `dp x k`
    pub wy: Array2<f64>,
    /// Non-increasing, each in `[0, 1]`.
    pub correlations: Vec<f64>,
    pub reg: f64,
    pub x_mean: Array1<f64>,
    pub y_mean: Array1<f64>,
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn covariance(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    a.t().dot(b) / (a.nrows() as f64 - 1.0)
}

/// `(C + rI)^(-1/2)` for symmetric positive (semi)definite `C`.
fn inverse_sqrt(cov: &Array2<f64>, reg: f64, view: &str) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let mut m = to_dmatrix(cov);
    for i in 0..n {
        m[(i, i)] += reg;
    }
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > RANK_TOL * max.max(1.0)) {
        return Err(Error::Cca(if reg == 0.0 {
            format!("{view} covariance is rank-deficient (min eigenvalue {min:.3e}); use a regularizer r > 0")
        } else {
            format!("{view} covariance is not positive definite (min eigenvalue {min:.3e})")
        }));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * inv * eig.eigenvectors.transpose())
}

/// Fits the top-`k` canonical directions of `x` (`n x ds`) and `y` (`n x dp`).
pub fn cca_fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, k: usize, reg: f64) -> Result<CcaProjection> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::shape(format!("CCA views have {n} and {} rows", y.nrows())));
    }
    if n < 2 {
        return Err(Error::Cca(format!("need at least 2 samples, got {n}")));
    }
    if k == 0 || k > x.ncols().min(y.ncols()) {
        return Err(Error::Cca(format!(
            "k={k} out of range 1..={}",
            x.ncols().min(y.ncols())
        )));
    }
    if !(reg.is_finite() && reg >= 0.0) {
        return Err(Error::Cca(format!("regularizer must be non-negative, got {reg}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Cca("non-finite input".into()));
    }
    let x_mean = x.mean_axis(Axis(0)).unwrap();
    let y_mean = y.mean_axis(Axis(0)).unwrap();
    let xc = &x - &x_mean;
    let yc = &y - &y_mean;

    let cxx_is = inverse_sqrt(&covariance(&xc, &xc), reg, "x")?;
    let cyy_is = inverse_sqrt(&covariance(&yc, &yc), reg, "y")?;
    let cxy = to_dmatrix(&covariance(&xc, &yc));
    let whitened = &cxx_is * cxy * &cyy_is;

    let svd = SVD::new(whitened, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = &order[..k];

    let u_k = DMatrix::from_fn(u.nrows(), k, |i, j| u[(i, top[j])]);
    let v_k = DMatrix::from_fn(v_t.ncols(), k, |i, j| v_t[(top[j], i)]);
    let correlations = top
        .iter()
        .map(|&i| svd.singular_values[i].clamp(0.0, 1.0))
        .collect();
    Ok(CcaProjection {
        wx: to_array(&(&cxx_is * u_k)),
        wy: to_array(&(&cyy_is * v_k)),
        correlations,
        reg,
        x_mean,
        y_mean,
    })
}

impl CcaProjection {
    pub fn k(&self) -> usize {
        self.wx.ncols()
    }

    pub fn fuse(&self, style: &[f64], personality: &[f64]) -> Result<Vec<f64>> {
        fuse_user_embedding(style, personality, self)
    }
}

/// Mean of the two canonical projections: `(style' Wx + personality' Wy) / 2`.
pub fn fuse_user_embedding(style: &[f64], personality: &[f64], proj: &CcaProjection) -> Result<Vec<f64>> {
    if style.len() != proj.wx.nrows() || personality.len() != proj.wy.nrows() {
        return Err(Error::shape(format!(
            "fuse expects ({}, {}) inputs, got ({}, {})",
            proj.wx.nrows(),
            proj.wy.nrows(),
            style.len(),
            personality.len()
        )));
    }
    let s = ndarray::ArrayView1::from(style).dot(&proj.wx);
    let p = ndarray::ArrayView1::from(personality).dot(&proj.wy);
    Ok(((s + p) * 0.5).to_vec())
}
