//! Special functions backing the distribution families.

use std::f64::consts::SQRT_2;

pub use statrs::function::erf::erfc;
pub use statrs::function::gamma::{digamma, gamma, ln_gamma};

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        statrs::function::gamma::gamma_lr(a, x)
    }
}

/// ψ'(x) by upward recurrence and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0))));
    acc + series
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn trigamma_values() {
        assert!(close(trigamma(1.0), PI * PI / 6.0, 1e-12));
        assert!(close(trigamma(0.5), PI * PI / 2.0, 1e-12));
        let x = 3.7;
        assert!(close(trigamma(x) - trigamma(x + 1.0), 1.0 / (x * x), 1e-12));
        // derivative of digamma by central difference
        let h = 1e-5;
        assert!(close(trigamma(x), (digamma(x + h) - digamma(x - h)) / (2.0 * h), 1e-8));
    }

    #[test]
    fn normal_helpers() {
        assert!(close(norm_cdf(1.96), 0.975_002_104_851_780, 1e-11));
        for p in [1e-10, 0.001, 0.02, 0.3, 0.5, 0.9, 0.999] {
            assert!(close(norm_cdf(norm_quantile(p)), p, 1e-11));
        }
    }

    #[test]
    fn incomplete_gamma_edges() {
        assert_eq!(gamma_p(2.0, 0.0), 0.0);
        assert_eq!(gamma_p(2.0, f64::INFINITY), 1.0);
        for x in [0.1, 1.0, 3.0, 10.0] {
            assert!(close(gamma_p(1.0, x), 1.0 - (-x).exp(), 1e-14));
        }
    }
}
