//! Differentiable building blocks with hand-written backward passes.
//!
//! Layers keep their parameters in [`Param`] blocks and expose
//! `forward`/`backward` pairs; `backward` accumulates into the parameter
//! gradient buffers and returns the gradient with respect to the input.

mod adam;
mod conv;
mod dense;
mod embedding;
mod gradcheck;
mod hyper;
mod loss;
mod lstm;
mod param;
pub mod transformer;

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use conv::{CnnCache, ContentCnn};
pub use dense::Dense;
pub use embedding::Embedding;
pub use gradcheck::{grad_check, grad_check_fn, relative_error, GradCheckReport};
pub use hyper::HyperParams;
pub use loss::{log_softmax, sigmoid, sigmoid_bce, softmax, softmax_cross_entropy};
pub use lstm::{dropout_mask, BiLstm, BiLstmCache, Lstm, LstmCache};
pub use param::{HasParams, Param};

/// Elementwise activation. All variants are monotone non-decreasing, so they
/// commute with max-pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`. ReLU uses 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

/// Independent child seed for a named sub-stream (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Max over rows for each column, with the first arg-max row.
pub fn max_over_time(x: ndarray::ArrayView2<'_, f64>) -> (Vec<f64>, Vec<usize>) {
    let cols = x.ncols();
    let mut best = vec![f64::NEG_INFINITY; cols];
    let mut arg = vec![0usize; cols];
    for (t, row) in x.outer_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = t;
            }
        }
    }
    (best, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn max_pool_is_permutation_invariant(
            vals in prop::collection::vec(-10.0f64..10.0, 12),
            perm_seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let x = Array2::from_shape_vec((4, 3), vals).unwrap();
            let mut order: Vec<usize> = (0..4).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let permuted = x.select(ndarray::Axis(0), &order);
            prop_assert_eq!(max_over_time(x.view()).0, max_over_time(permuted.view()).0);
        }
    }
}
