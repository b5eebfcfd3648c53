//! Gaussian primitives and densities of the maximum of two Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SstaError};
use crate::special::{std_normal_cdf, std_normal_pdf};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Mean and standard deviation of a normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    /// Builds a parameter pair; `sigma` may be zero (a point mass) but not
    /// negative, and both values must be finite.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let p = GaussianParams { mu, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn standard() -> Self {
        GaussianParams { mu: 0.0, sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(SstaError::domain(format!(
                "gaussian parameters must be finite (mu = {}, sigma = {})",
                self.mu, self.sigma
            )));
        }
        if self.sigma < 0.0 {
            return Err(SstaError::domain(format!(
                "standard deviation must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but also rejects `sigma == 0`.
    pub fn require_positive(&self) -> Result<()> {
        self.validate()?;
        if self.sigma <= 0.0 {
            return Err(SstaError::domain(format!(
                "standard deviation must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Standardised coordinate (x - mu) / sigma.
    #[inline]
    pub fn z(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    /// Density without the sigma check; `sigma > 0` is the caller's job.
    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        INV_SQRT_2PI / self.sigma * (-0.5 * z * z).exp()
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu) / self.sigma)
    }
}

/// Two Gaussians with a correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatedPair {
    pub a: GaussianParams,
    pub b: GaussianParams,
    pub rho: f64,
}

impl CorrelatedPair {
    pub fn new(a: GaussianParams, b: GaussianParams, rho: f64) -> Result<Self> {
        a.validate()?;
        b.validate()?;
        if !(-1.0..=1.0).contains(&rho) {
            return Err(SstaError::domain(format!(
                "correlation must lie in [-1, 1], got {rho}"
            )));
        }
        Ok(CorrelatedPair { a, b, rho })
    }

    pub fn independent(a: GaussianParams, b: GaussianParams) -> Self {
        CorrelatedPair { a, b, rho: 0.0 }
    }

    pub fn swapped(&self) -> Self {
        CorrelatedPair {
            a: self.b,
            b: self.a,
            rho: self.rho,
        }
    }

    fn require_positive(&self) -> Result<()> {
        self.a.require_positive()?;
        self.b.require_positive()
    }

    fn require_strict_correlation(&self) -> Result<()> {
        if self.rho.is_nan() || self.rho.abs() >= 1.0 {
            return Err(SstaError::DegenerateCorrelation { rho: self.rho });
        }
        Ok(())
    }
}

/// Normal density φ(x | μ, σ).
pub fn gauss_pdf(x: f64, p: &GaussianParams) -> Result<f64> {
    p.require_positive()?;
    Ok(p.density(x))
}

/// Standard normal CDF Φ(x).
pub fn gauss_cdf(x: f64) -> f64 {
    std_normal_cdf(x)
}

/// Φ((x - μ) / σ).
pub fn shifted_cdf(x: f64, p: &GaussianParams) -> Result<f64> {
    p.require_positive()?;
    Ok(p.cdf(x))
}

#[inline]
pub(crate) fn max2_independent_unchecked(z: f64, a: &GaussianParams, b: &GaussianParams) -> f64 {
    a.density(z) * b.cdf(z) + b.density(z) * a.cdf(z)
}

/// Density of max(X1, X2) for independent Gaussians: f1 F2 + f2 F1.
pub fn max2_independent_pdf(z: f64, a: &GaussianParams, b: &GaussianParams) -> Result<f64> {
    a.require_positive()?;
    b.require_positive()?;
    Ok(max2_independent_unchecked(z, a, b))
}

/// CDF of max(X1, X2) for independent Gaussians, F1 F2.
pub fn max2_independent_cdf(z: f64, a: &GaussianParams, b: &GaussianParams) -> Result<f64> {
    a.require_positive()?;
    b.require_positive()?;
    Ok(a.cdf(z) * b.cdf(z))
}

#[inline]
pub(crate) fn max2_correlated_unchecked(z: f64, pair: &CorrelatedPair) -> f64 {
    let s = 1.0 / (1.0 - pair.rho * pair.rho).sqrt();
    let za = pair.a.z(z);
    let zb = pair.b.z(z);
    pair.a.density(z) * std_normal_cdf(s * (zb - pair.rho * za))
        + pair.b.density(z) * std_normal_cdf(s * (za - pair.rho * zb))
}

/// Density of max(X1, X2) for correlated Gaussians with |rho| < 1.
///
/// At rho = ±1 the pair is comonotone (or antimonotone) and the density has
/// jump discontinuities; that limit is refused here with
/// [`SstaError::DegenerateCorrelation`].
pub fn max2_correlated_pdf(z: f64, pair: &CorrelatedPair) -> Result<f64> {
    pair.require_positive()?;
    pair.require_strict_correlation()?;
    Ok(max2_correlated_unchecked(z, pair))
}

/// First-order correction δf_max(z) of the max density in rho.
pub fn max2_delta(z: f64, a: &GaussianParams, b: &GaussianParams) -> Result<f64> {
    a.require_positive()?;
    b.require_positive()?;
    Ok(max2_delta_unchecked(z, a, b))
}

#[inline]
fn max2_delta_unchecked(z: f64, a: &GaussianParams, b: &GaussianParams) -> f64 {
    -a.density(z) * b.density(z) * (a.z(z) * b.sigma + b.z(z) * a.sigma)
}

/// Linear-in-rho approximation g(z) + rho δf_max(z). Not a density for
/// large |rho|: it can dip slightly below zero.
pub fn max2_weak_corr_pdf(z: f64, pair: &CorrelatedPair) -> Result<f64> {
    pair.require_positive()?;
    Ok(
        max2_independent_unchecked(z, &pair.a, &pair.b)
            + pair.rho * max2_delta_unchecked(z, &pair.a, &pair.b),
    )
}

/// Mean and variance of max(X1, X2) by moment matching (Clark).
pub fn clark_max_moments(pair: &CorrelatedPair) -> Result<(f64, f64)> {
    pair.require_positive()?;
    if pair.rho.is_nan() || pair.rho.abs() > 1.0 {
        return Err(SstaError::domain(format!(
            "correlation must lie in [-1, 1], got {}",
            pair.rho
        )));
    }
    let (a, b, rho) = (pair.a, pair.b, pair.rho);
    let theta2 = a.variance() + b.variance() - 2.0 * rho * a.sigma * b.sigma;
    let theta = theta2.max(0.0).sqrt();
    if theta <= 1e-300 {
        // identical comonotone variables (or parallel shift)
        return if a.mu >= b.mu {
            Ok((a.mu, a.variance()))
        } else {
            Ok((b.mu, b.variance()))
        };
    }
    let alpha = (a.mu - b.mu) / theta;
    let pa = std_normal_cdf(alpha);
    let pb = std_normal_cdf(-alpha);
    let d = std_normal_pdf(alpha);
    let mean = a.mu * pa + b.mu * pb + theta * d;
    let second =
        (a.mu * a.mu + a.variance()) * pa + (b.mu * b.mu + b.variance()) * pb + (a.mu + b.mu) * theta * d;
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Integration window [min μ - k max σ, max μ + k max σ] around several
/// Gaussians.
pub fn envelope(params: &[GaussianParams], k: f64) -> (f64, f64) {
    let lo = params.iter().map(|p| p.mu).fold(f64::INFINITY, f64::min);
    let hi = params.iter().map(|p| p.mu).fold(f64::NEG_INFINITY, f64::max);
    let s = params.iter().map(|p| p.sigma).fold(0.0, f64::max);
    (lo - k * s, hi + k * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};
    use proptest::prelude::*;

    fn g(mu: f64, sigma: f64) -> GaussianParams {
        GaussianParams::new(mu, sigma).unwrap()
    }

    #[test]
    fn pdf_at_mode_and_one_sigma() {
        let std = GaussianParams::standard();
        assert!((gauss_pdf(0.0, &std).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        let p = g(2.5, 0.3);
        let peak = gauss_pdf(2.5, &p).unwrap();
        let off = gauss_pdf(2.8, &p).unwrap();
        assert!((off - peak * (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn pdf_is_cdf_derivative() {
        let p = g(1.0, 0.75);
        let h = 1e-5;
        let fd = (shifted_cdf(1.5 + h, &p).unwrap() - shifted_cdf(1.5 - h, &p).unwrap()) / (2.0 * h);
        assert!((fd - gauss_pdf(1.5, &p).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn cdf_matches_quadrature_of_density() {
        let phi = |x: f64| std_normal_pdf(x);
        let q = integrate(phi, -40.0, 1.0, &QuadOptions::default()).unwrap();
        assert!((gauss_cdf(1.0) - q.value).abs() < 1e-10);
        assert_eq!(gauss_cdf(0.0), 0.5);
        assert!((gauss_cdf(8.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_cdf_identities() {
        let p = g(-1.2, 2.0);
        assert_eq!(shifted_cdf(-1.2, &p).unwrap(), 0.5);
        assert!((shifted_cdf(-1.2 + 6.0, &p).unwrap() - gauss_cdf(3.0)).abs() < 1e-15);
        assert_eq!(shifted_cdf(2.0, &g(1.0, 0.5)).unwrap(), gauss_cdf(2.0));
    }

    #[test]
    fn nonpositive_sigma_is_domain_error() {
        let bad = GaussianParams { mu: 0.0, sigma: 0.0 };
        assert!(matches!(gauss_pdf(0.0, &bad), Err(SstaError::Domain(_))));
        assert!(matches!(shifted_cdf(0.0, &bad), Err(SstaError::Domain(_))));
        assert!(GaussianParams::new(0.0, -1.0).is_err());
        assert!(GaussianParams::new(f64::NAN, 1.0).is_err());
        let std = GaussianParams::standard();
        assert!(max2_independent_pdf(0.0, &bad, &std).is_err());
    }

    #[test]
    fn max_of_iid_at_zero() {
        let s = GaussianParams::standard();
        let v = max2_independent_pdf(0.0, &s, &s).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn dominated_max_is_the_larger_input() {
        let a = g(0.0, 1.0);
        let b = g(100.0, 1.0);
        for i in 0..=100 {
            let z = 95.0 + 0.1 * i as f64;
            let v = max2_independent_pdf(z, &a, &b).unwrap();
            assert!((v - b.density(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlated_rejects_unit_rho() {
        let pair = CorrelatedPair::new(g(0.0, 1.0), g(1.0, 2.0), 1.0).unwrap();
        assert!(matches!(
            max2_correlated_pdf(0.0, &pair),
            Err(SstaError::DegenerateCorrelation { .. })
        ));
        assert!(CorrelatedPair::new(g(0.0, 1.0), g(1.0, 2.0), 1.5).is_err());
    }

    #[test]
    fn correlated_reduces_to_independent() {
        let a = g(1.0, 0.5);
        let b = g(3.0, 3.0);
        let pair = CorrelatedPair::independent(a, b);
        for i in 0..=250 {
            let z = -10.0 + 0.1 * i as f64;
            let c = max2_correlated_pdf(z, &pair).unwrap();
            let ind = max2_independent_pdf(z, &a, &b).unwrap();
            assert!((c - ind).abs() < 1e-13);
            assert_eq!(max2_weak_corr_pdf(z, &pair).unwrap(), ind);
        }
    }

    #[test]
    fn comonotone_limit_approaches_the_common_density() {
        let s = GaussianParams::standard();
        let grid: Vec<f64> = (0..=120).map(|i| -6.0 + 0.1 * i as f64).collect();
        let mut prev = f64::INFINITY;
        for rho in [0.9, 0.99, 0.999, 0.9999, 0.999_999] {
            let pair = CorrelatedPair::new(s, s, rho).unwrap();
            let sup = grid
                .iter()
                .map(|&z| (max2_correlated_pdf(z, &pair).unwrap() - s.density(z)).abs())
                .fold(0.0, f64::max);
            assert!(sup < prev, "rho {rho}: {sup} !< {prev}");
            prev = sup;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn weak_corr_is_good_for_small_rho_and_breaks_for_large() {
        let a = g(1.0, 0.5);
        let b = g(3.0, 3.0);
        let sup = |rho: f64, weak: bool| {
            let pair = CorrelatedPair::new(a, b, rho).unwrap();
            (0..=2500)
                .map(|i| -10.0 + 0.01 * i as f64)
                .map(|z| {
                    let exact = max2_correlated_pdf(z, &pair).unwrap();
                    let approx = if weak {
                        max2_weak_corr_pdf(z, &pair).unwrap()
                    } else {
                        max2_independent_pdf(z, &a, &b).unwrap()
                    };
                    (exact - approx).abs()
                })
                .fold(0.0, f64::max)
        };
        let weak_small = sup(0.1, true);
        assert!(weak_small < sup(0.1, false));
        assert!(sup(0.9, true) > weak_small);
    }

    #[test]
    fn linearisation_matches_finite_difference() {
        let a = g(0.4, 1.3);
        let b = g(1.1, 0.7);
        let rho = 1e-4;
        let pair = CorrelatedPair::new(a, b, rho).unwrap();
        for i in 0..=80 {
            let z = -4.0 + 0.1 * i as f64;
            let fd =
                (max2_correlated_pdf(z, &pair).unwrap() - max2_independent_pdf(z, &a, &b).unwrap()) / rho;
            assert!((fd - max2_delta(z, &a, &b).unwrap()).abs() < 1e-4);
        }
    }

    #[test]
    fn clark_reference_values() {
        let s = GaussianParams::standard();
        let (m, v) = clark_max_moments(&CorrelatedPair::independent(s, s)).unwrap();
        assert!((m - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((v - (1.0 - 1.0 / std::f64::consts::PI)).abs() < 1e-15);
        let (m, _) = clark_max_moments(&CorrelatedPair::independent(s, g(100.0, 1.0))).unwrap();
        assert!((m - 100.0).abs() < 1e-9);
        let (m, v) = clark_max_moments(&CorrelatedPair::new(s, s, 1.0).unwrap()).unwrap();
        assert_eq!((m, v), (0.0, 1.0));
    }

    #[test]
    fn clark_mean_matches_quadrature_of_correlated_density() {
        let pair = CorrelatedPair::new(g(1.0, 0.75), g(2.0, 3.0), 0.5).unwrap();
        let (lo, hi) = envelope(&[pair.a, pair.b], 12.0);
        let opts = QuadOptions::default().with_rel_tol(1e-13);
        let mean = integrate(|z| z * max2_correlated_pdf(z, &pair).unwrap(), lo, hi, &opts).unwrap();
        let (m, _) = clark_max_moments(&pair).unwrap();
        assert!((mean.value - m).abs() < 1e-8);
    }

    fn params() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (
            -5.0..5.0f64,
            0.1..5.0f64,
            -5.0..5.0f64,
            0.1..5.0f64,
            -0.95..0.95f64,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn max_densities_are_normalised((m1, s1, m2, s2, rho) in params()) {
            let pair = CorrelatedPair::new(g(m1, s1), g(m2, s2), rho).unwrap();
            let (lo, hi) = envelope(&[pair.a, pair.b], 12.0);
            let opts = QuadOptions::default();
            let ind = integrate(|z| max2_independent_pdf(z, &pair.a, &pair.b).unwrap(), lo, hi, &opts).unwrap();
            let cor = integrate(|z| max2_correlated_pdf(z, &pair).unwrap(), lo, hi, &opts).unwrap();
            prop_assert!((ind.value - 1.0).abs() < 1e-8);
            prop_assert!((cor.value - 1.0).abs() < 1e-8);
        }

        #[test]
        fn max_densities_are_symmetric((m1, s1, m2, s2, rho) in params(), z in -20.0..20.0f64) {
            let pair = CorrelatedPair::new(g(m1, s1), g(m2, s2), rho).unwrap();
            let sw = pair.swapped();
            prop_assert!((max2_independent_pdf(z, &pair.a, &pair.b).unwrap() - max2_independent_pdf(z, &sw.a, &sw.b).unwrap()).abs() < 1e-13);
            prop_assert!((max2_correlated_pdf(z, &pair).unwrap() - max2_correlated_pdf(z, &sw).unwrap()).abs() < 1e-13);
            prop_assert!((max2_weak_corr_pdf(z, &pair).unwrap() - max2_weak_corr_pdf(z, &sw).unwrap()).abs() < 1e-13);
        }

        #[test]
        fn max_cdf_is_dominated((m1, s1, m2, s2, _rho) in params(), z in -20.0..20.0f64) {
            let (a, b) = (g(m1, s1), g(m2, s2));
            let f = max2_independent_cdf(z, &a, &b).unwrap();
            prop_assert!(f <= a.cdf(z).min(b.cdf(z)));
        }

        #[test]
        fn zero_rho_reduction((m1, s1, m2, s2, _rho) in params(), z in -20.0..20.0f64) {
            let pair = CorrelatedPair::independent(g(m1, s1), g(m2, s2));
            prop_assert!((max2_correlated_pdf(z, &pair).unwrap() - max2_independent_pdf(z, &pair.a, &pair.b).unwrap()).abs() < 1e-13);
        }
    }
}
