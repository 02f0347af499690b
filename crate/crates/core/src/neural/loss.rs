pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Cross-entropy of `softmax(logits)` against class `label`, with its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
    grad[label] -= 1.0;
    (-logp[label], grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over independent sigmoid outputs, with gradient
/// w.r.t. the logits. Targets may be soft labels in `[0, 1]`.
pub fn sigmoid_bce(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        // log(1 + e^z) computed stably
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        loss += softplus - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check_fn;

    #[test]
    fn uniform_logits_cost_ln2() {
        for label in 0..2 {
            let (loss, _) = softmax_cross_entropy(&[0.0, 0.0], label);
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_logits() {
        let (loss, _) = softmax_cross_entropy(&[30.0, -30.0], 0);
        assert!(loss < 1e-9);
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0], 1);
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        for (seed, logits) in [(1u64, [0.3, -1.2]), (2, [2.5, 2.4]), (3, [-4.0, 1.0])] {
            for label in 0..2 {
                let (_, grad) = softmax_cross_entropy(&logits, label);
                let r = grad_check_fn(|z| softmax_cross_entropy(z, label).0, &logits, &grad, 1e-4, 200, seed);
                assert!(r.max_rel_error < 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let logits = [0.4, -2.0, 1.5, 0.0, 3.0];
        let targets = [1.0, 0.0, 0.3, 1.0, 0.9];
        let (_, grad) = sigmoid_bce(&logits, &targets);
        let r = grad_check_fn(|z| sigmoid_bce(z, &targets).0, &logits, &grad, 1e-4, 200, 0);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
