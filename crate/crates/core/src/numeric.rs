//! Numerically stable scalar helpers shared across the crate.

pub const LN2: f64 = std::f64::consts::LN_2;

/// Stable `ln(1 + exp(x))` via `max(x,0) + ln(1 + exp(-|x|))`.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic sigmoid `1 / (1 + exp(-x))`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let r = 1.0 / (1.0 + e);
    if x >= 0.0 {
        r
    } else {
        e * r
    }
}

/// Max-shifted `ln(sum_k exp(x_k))`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// `h(x) = 1 / log2(1 + e^x)` with its first two derivatives.
///
/// This is the per-bit completion time as a function of the log SINR
/// target. Writing `s(x) = ln(1 + e^x)` we have `h = ln2 / s`,
/// `h' = -ln2 * sig / s^2` and
/// `h'' = ln2 * e^x (2 e^x - s) / ((1+e^x)^2 s^3)`, which is strictly
/// positive for finite `x` since `y > ln(1+y)` for `y > 0`.
pub fn ct_bound(x: f64) -> (f64, f64, f64) {
    let s = log1pexp(x); // natural-log softplus
    let sig = sigmoid(x);
    let h = LN2 / s;
    let h1 = -LN2 * sig / (s * s);
    // 2*sig^2 - sig*(1-sig)*s == sig^2 * (2 - s/e^x), the docstring form
    let h2 = LN2 * (2.0 * sig * sig - sig * (1.0 - sig) * s) / (s * s * s);
    (h, h1, h2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log1pexp_matches_naive_in_safe_range() {
        for &x in &[-20.0, -1.0, 0.0, 1.0, 20.0] {
            assert_relative_eq!(log1pexp(x), (1.0 + x.exp()).ln(), max_relative = 1e-14);
        }
    }

    #[test]
    fn log1pexp_no_overflow() {
        assert_relative_eq!(log1pexp(800.0), 800.0, max_relative = 1e-15);
        assert!(log1pexp(-800.0) >= 0.0);
    }

    #[test]
    fn ct_bound_at_zero() {
        let (h, _, _) = ct_bound(0.0);
        assert_relative_eq!(h, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn ct_bound_second_derivative_positive() {
        for &x in &[-10.0, -1.0, 0.0, 1.0, 10.0] {
            let (_, _, h2) = ct_bound(x);
            assert!(h2 > 0.0, "h'' not positive at x={x}: {h2}");
        }
    }

    #[test]
    fn ct_bound_derivatives_match_finite_differences() {
        let step = 1e-5;
        for k in 0..=40 {
            let x = -10.0 + 0.5 * k as f64;
            let (_, h1, h2) = ct_bound(x);
            let (hp, hp1, _) = ct_bound(x + step);
            let (hm, hm1, _) = ct_bound(x - step);
            let fd1 = (hp - hm) / (2.0 * step);
            let fd2 = (hp1 - hm1) / (2.0 * step);
            assert_relative_eq!(h1, fd1, max_relative = 1e-6);
            assert_relative_eq!(h2, fd2, max_relative = 1e-6);
        }
    }

    #[test]
    fn logsumexp_shift_invariant() {
        let xs = [1.0, 2.0, 3.0];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 700.0).collect();
        assert_relative_eq!(logsumexp(&shifted) - 700.0, logsumexp(&xs), max_relative = 1e-12);
    }
}
