use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HasParams;

/// Floor on the relative-error denominator so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn sample_coords(n: usize, max_coords: usize, seed: u64) -> Vec<usize> {
    if n <= max_coords {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, max_coords).into_vec();
    idx.sort_unstable();
    idx
}

/// Central finite differences of `f` at `x`, compared against `analytic` on a
/// seeded subset of at most `max_coords` coordinates.
pub fn grad_check_fn<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64, max_coords: usize, seed: u64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in sample_coords(x.len(), max_coords, seed) {
        point[i] = x[i] + eps;
        let plus = f(&point);
        point[i] = x[i] - eps;
        let minus = f(&point);
        point[i] = x[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        report.coords_checked += 1;
        if err > report.max_rel_error || report.coords_checked == 1 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Checks a model's parameter gradients.
///
/// `loss(model, backward)` must return the scalar loss and, when `backward`
/// is true, accumulate its gradient into the model's parameter buffers.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, eps: f64, max_coords: usize, seed: u64) -> GradCheckReport
where
    M: HasParams,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grads();
    loss(model, true);
    let analytic = model.flat_grads();
    let x = model.flat_values();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let set = |model: &mut M, flat: &[f64]| {
        let mut offset = 0;
        for (p, n) in model.params_mut().into_iter().zip(&sizes) {
            p.value.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    };
    let report = grad_check_fn(
        |point| {
            set(model, point);
            loss(model, false)
        },
        &x,
        &analytic,
        eps,
        max_coords,
        seed,
    );
    set(model, &x);
    report
}
