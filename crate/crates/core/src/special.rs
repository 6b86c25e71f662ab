//! Scalar special functions: the standard normal law, the regularized lower
//! incomplete gamma function and chi-square upper quantiles.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF through the complementary error function, accurate in
/// both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `E|g + a|` for `g ~ N(0, 1)`, i.e. `2φ(a) + a(2Φ(a) − 1)`.
///
/// Evaluated at `|a|` and written as `|a| + 2φ(|a|) − 2|a|Φ(−|a|)` so no
/// cancellation occurs in either tail.
pub fn abs_normal_mean(a: f64) -> f64 {
    let t = a.abs();
    t + 2.0 * norm_pdf(t) - 2.0 * t * norm_cdf(-t)
}

/// Derivative of [`abs_normal_mean`]: `2Φ(a) − 1`.
pub fn abs_normal_mean_derivative(a: f64) -> f64 {
    libm::erf(a / std::f64::consts::SQRT_2)
}

/// Regularized lower incomplete gamma function `P(s, x)`.
pub fn gamma_p(s: f64, x: f64) -> Result<f64> {
    if !(s > 0.0) || !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("gamma_p needs s > 0 and x >= 0, got s={s}, x={x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let log_prefactor = s * x.ln() - x - libm::lgamma(s);
    if x < s + 1.0 {
        // series: P = e^{-x} x^s / Γ(s+1) Σ x^n / ((s+1)...(s+n))
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut denom = s;
        for _ in 0..10_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        Ok((sum.ln() + log_prefactor).exp().min(1.0))
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (log_prefactor + h.ln()).exp();
        Ok((1.0 - q).max(0.0))
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidInput("chi-square needs at least one degree of freedom".into()));
    }
    gamma_p(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Upper `alpha`-quantile `q` of the chi-square law: `P(χ²_dof > q) = alpha`.
/// Bisection on the CDF to an absolute error below 1e-12.
pub fn chi2_upper_quantile(dof: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof)? < target {
        hi *= 2.0;
    }
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn cdf_symmetry_and_tails() {
        assert_eq!(norm_cdf(0.0), 0.5);
        for x in [0.3, 1.7, 5.0, 12.0] {
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
        // Φ(-10) ≈ 7.6198530241605e-24
        assert!((norm_cdf(-10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abs_mean_at_zero_and_symmetry() {
        assert!((abs_normal_mean(0.0) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        for a in [0.1, 1.0, 3.0, 9.0, 40.0] {
            assert_eq!(abs_normal_mean(a), abs_normal_mean(-a));
        }
        // direct formula agrees where it is well conditioned
        for a in [-2.0, -0.5, 0.7, 2.5] {
            let direct = 2.0 * norm_pdf(a) + a * (2.0 * norm_cdf(a) - 1.0);
            assert!((abs_normal_mean(a) - direct).abs() < 1e-14);
        }
        assert!((abs_normal_mean(-40.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn abs_mean_derivative_matches_finite_difference() {
        for a in [-3.0, -0.4, 0.0, 0.9, 2.2] {
            let h = 1e-6;
            let fd = (abs_normal_mean(a + h) - abs_normal_mean(a - h)) / (2.0 * h);
            assert!((abs_normal_mean_derivative(a) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn chi2_quantiles_match_tables() {
        assert!((chi2_upper_quantile(1, 0.05).unwrap() - 3.841_458_820_694_124).abs() < 1e-10);
        assert!((chi2_upper_quantile(2, 0.05).unwrap() - 5.991_464_547_107_979).abs() < 1e-10);
    }

    #[test]
    fn chi2_quantiles_match_statrs() {
        for dof in 1..=10 {
            let law = ChiSquared::new(dof as f64).unwrap();
            for alpha in [0.01, 0.05, 0.1, 0.5, 0.9] {
                let q = chi2_upper_quantile(dof, alpha).unwrap();
                assert!((law.cdf(q) - (1.0 - alpha)).abs() < 1e-10, "dof={dof} alpha={alpha}");
            }
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(chi2_upper_quantile(1, 0.0).is_err());
        assert!(chi2_upper_quantile(1, 1.0).is_err());
    }
}
