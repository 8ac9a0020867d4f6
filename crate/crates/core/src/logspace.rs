//! Log-domain accumulation for integrals of `exp(x(s))` whose exponent spans hundreds of units.

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `out[i] = log of the trapezoid integral of exp(x)` over the first `i` cells of width `dt`.
/// `out[0] = -inf`.
pub fn log_cumulative_trapezoid(exponents: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(exponents.len());
    if exponents.is_empty() {
        return out;
    }
    let log_half_dt = (0.5 * dt).ln();
    let mut acc = f64::NEG_INFINITY;
    out.push(acc);
    for w in exponents.windows(2) {
        acc = log_add_exp(acc, log_half_dt + log_add_exp(w[0], w[1]));
        out.push(acc);
    }
    out
}

/// `(1/gamma) log(1 + gamma * I)` given `log I`.
pub fn smoothed_log(log_integral: f64, gamma: f64) -> f64 {
    log_add_exp(0.0, gamma.ln() + log_integral) / gamma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_exp_matches_direct() {
        for &(a, b) in &[
            (0.0, 0.0),
            (1.0, -2.0),
            (-30.0, -31.0),
            (5.0, f64::NEG_INFINITY),
        ] {
            let direct = (f64::exp(a) + f64::exp(b)).ln();
            assert!((log_add_exp(a, b) - direct).abs() < 1e-14);
        }
        assert_eq!(
            log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
        assert!((log_add_exp(800.0, 800.0) - (800.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_of_linear_exponent() {
        // Integral of exp(s) on [0,1] is e - 1; trapezoid error is O(dt^2).
        let m = 1000;
        let dt = 1.0 / m as f64;
        let x: Vec<f64> = (0..=m).map(|i| i as f64 * dt).collect();
        let out = log_cumulative_trapezoid(&x, dt);
        assert_eq!(out[0], f64::NEG_INFINITY);
        let exact = (1f64.exp() - 1.0).ln();
        assert!((out[m] - exact).abs() < 1e-6);
    }

    #[test]
    fn huge_exponents_stay_finite() {
        let x = vec![700.0; 11];
        let out = log_cumulative_trapezoid(&x, 0.1);
        assert!((out[10] - 700.0).abs() < 1e-12);
        assert!((smoothed_log(out[10], 100.0) - (700.0 + 100f64.ln()) / 100.0).abs() < 1e-12);
    }
}
