//! Small numeric helpers shared across modules.

/// Log of the sum of exponentials, stable under large negative inputs.
/// Entries of negative infinity contribute nothing; an all-`-inf` (or empty)
/// input yields negative infinity.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Softmax over unnormalized log-weights. Shifts by the maximum before
/// exponentiating so the result is invariant (up to rounding) to adding a
/// constant to every input.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf: no information, fall back to uniform.
        return vec![1.0 / xs.len() as f64; xs.len()];
    }
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Log-softmax over unnormalized log-weights.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = logsumexp(xs);
    xs.iter().map(|&x| x - z).collect()
}

/// `acc + w * term`, skipping the multiplication entirely when `w == 0` so a
/// zero weight never propagates `NaN` from an infinite term.
pub fn weighted_add(acc: f64, w: f64, term: f64) -> f64 {
    if w == 0.0 {
        acc
    } else {
        acc + w * term
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[0.3, -2.0, 5.0, 0.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs = [-1.0f64, -2.0, -0.5];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum();
        assert!((logsumexp(&xs) - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_ignores_neg_infinity() {
        let xs = [f64::NEG_INFINITY, -1.0];
        assert!((logsumexp(&xs) - (-1.0)).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn weighted_add_zero_weight_skips_infinite_term() {
        assert_eq!(weighted_add(-1.5, 0.0, f64::NEG_INFINITY), -1.5);
        assert_eq!(weighted_add(-1.5, 2.0, -1.0), -3.5);
    }
}
