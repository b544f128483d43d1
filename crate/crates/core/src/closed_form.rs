//! Exact laws of symmetric sticky Brownian motion started at the origin:
//! generator `½f''` off zero with `½f'(0+) - ½f'(0-) = α·½f''(0)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::StickyPoint;
use crate::quad::{integrate, QuadOptions};
use crate::special::{erfc, erfcx};

/// Relative tolerance for every quadrature in this module.
pub const REL_TOL: f64 = 1e-8;

fn opts() -> QuadOptions {
    QuadOptions { rel_tol: REL_TOL, abs_tol: 1e-15, max_intervals: 2000 }
}

/// Delay and time horizon of a symmetric sticky Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickyBMParams {
    pub alpha: f64,
    pub t: f64,
}

impl StickyBMParams {
    pub fn new(alpha: f64, t: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("t must be nonnegative, got {t}")));
        }
        Ok(StickyBMParams { alpha, t })
    }

    /// Closed forms exist only for the symmetric case.
    pub fn from_point(p: &StickyPoint, t: f64) -> Result<Self> {
        if p.p_plus != p.p_minus {
            return Err(Error::Domain(format!(
                "closed forms need p_+ = p_-, got {} and {}",
                p.p_plus, p.p_minus
            )));
        }
        Self::new(p.alpha, t)
    }

    pub fn point_mass(&self) -> f64 {
        point_mass(self.t, self.alpha)
    }

    pub fn expected_occupation(&self) -> Result<f64> {
        expected_occupation(self.t, self.alpha)
    }

    pub fn char_fn(&self, lambda: f64) -> Result<f64> {
        char_fn(lambda, self.t, self.alpha)
    }

    /// CDF of `α L(t, 0)` at `y`.
    pub fn occupation_cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else if y >= self.t {
            1.0
        } else {
            1.0 - sticky_local_time_tail(self.t, y, self.alpha).unwrap_or(0.0)
        }
    }
}

pub use crate::special::normal_cdf;

/// `P(L^W(t, 0) > y) = 2(1 - Φ(y/√t))` for Brownian local time.
pub fn bm_local_time_tail(t: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    if t <= 0.0 {
        return 0.0;
    }
    erfc(y / (2.0 * t).sqrt()).min(1.0)
}

/// `P(α L^X(t, 0) > y) = P(α L^W(t - y, 0) > y)`, defined for `0 <= y < t`.
pub fn sticky_local_time_tail(t: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(y < t) {
        return Err(Error::Domain(format!("y = {y} must be below t = {t}: α L <= t almost surely")));
    }
    if y < 0.0 {
        return Err(Error::Domain(format!("y = {y} must be nonnegative")));
    }
    Ok(bm_local_time_tail(t - y, y / alpha))
}

/// `P(X(t) = 0) = 2 e^{2t/α²} (1 - Φ(2√t/α)) = erfcx(√(2t)/α)`.
pub fn point_mass(t: f64, alpha: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    erfcx((2.0 * t).sqrt() / alpha)
}

/// `E[α L^X(t, 0)] = ∫₀ᵗ P(α L^X(t,0) > y) dy`, integrated in
/// `u = √(t - y)` so the steep end at `y = t` is resolved.
pub fn expected_occupation(t: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let y = t - u * u;
        2.0 * u * bm_local_time_tail(u * u, y.max(0.0) / alpha)
    };
    Ok(integrate(integrand, 0.0, t.sqrt(), opts())?.value.clamp(0.0, t))
}

/// `∫₀ᵗ P(X(s) = 0) ds`, integrated in `s = v²` to remove the `√s`
/// behaviour at the origin.
pub fn integrated_point_mass(t: f64, alpha: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(integrate(|v| 2.0 * v * point_mass(v * v, alpha), 0.0, t.sqrt(), opts())?.value)
}

/// Characteristic function of `X(t)`; real because the law is symmetric.
///
/// Solves `∂φ/∂t = -(λ²/2)(φ - P(X(t) = 0))` with `φ(λ, 0) = 1`:
/// `φ = e^{-λ²t/2} + (λ²/2) ∫₀ᵗ e^{-λ²(t-s)/2} P(X(s) = 0) ds`.
pub fn char_fn(lambda: f64, t: f64, alpha: f64) -> Result<f64> {
    char_fn_with(lambda, t, alpha, opts())
}

pub fn char_fn_with(lambda: f64, t: f64, alpha: f64, q: QuadOptions) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Domain(format!("t must be nonnegative, got {t}")));
    }
    let k = 0.5 * lambda * lambda;
    if k == 0.0 || t == 0.0 {
        return Ok(1.0);
    }
    let integrand = |v: f64| {
        let s = v * v;
        2.0 * v * (-k * (t - s)).exp() * point_mass(s, alpha)
    };
    let i = integrate(integrand, 0.0, t.sqrt(), q)?.value;
    Ok(((-k * t).exp() + k * i).clamp(-1.0, 1.0))
}

/// `E|W(t)| = √(2t/π)`: the mean Brownian local time at the origin.
pub fn bm_mean_local_time(t: f64) -> f64 {
    (2.0 * t / PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Golden values: 30-digit mpmath quadrature of the defining integrals.
    const EO_1_1: f64 = 0.465_986_562_026_035_96;
    const PM_1_1: f64 = 0.336_204_002_446_341_2;
    const PHI_1_1_1: f64 = 0.783_781_145_237_070_4;

    #[test]
    fn local_time_tail_values() {
        assert_eq!(bm_local_time_tail(1.0, 0.0), 1.0);
        assert!((bm_local_time_tail(1.0, 1.0) - 0.317_310_507_862_914_1).abs() < 1e-12);
        assert!(bm_local_time_tail(1.0, 50.0) < 1e-300);
        let mut prev = 1.0;
        for i in 0..100 {
            let v = bm_local_time_tail(2.0, i as f64 * 0.05);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn sticky_tail_values() {
        assert_eq!(sticky_local_time_tail(1.0, 0.0, 1.0).unwrap(), 1.0);
        // 2(1 - Φ(0.5/√0.5))
        assert!((sticky_local_time_tail(1.0, 0.5, 1.0).unwrap() - 0.479_500_122_186_953_5).abs() < 1e-12);
        assert!(sticky_local_time_tail(1.0, 1.0 - 1e-12, 1.0).unwrap() <= 1e-6);
        assert!(sticky_local_time_tail(1.0, 1.0, 1.0).is_err());
        assert!(sticky_local_time_tail(1.0, 2.0, 1.0).is_err());
        let mut prev = 1.0;
        for i in 0..1000 {
            let v = sticky_local_time_tail(1.0, i as f64 / 1000.0, 0.7).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn point_mass_values() {
        assert_eq!(point_mass(0.0, 1.0), 1.0);
        assert!((point_mass(1.0, 1.0) - PM_1_1).abs() < 1e-13);
        // 2e²(1 - Φ(2)) via the plain normal CDF agrees.
        let direct = 2.0 * 2f64.exp() * (1.0 - normal_cdf(2.0));
        assert!((point_mass(1.0, 1.0) - direct).abs() < 1e-12);
        assert!(point_mass(1.0, 1e-6) <= 1e-5);
        assert!(point_mass(1e6, 1.0) < 1e-3);
        let mut prev = 1.0;
        for i in 1..200 {
            let v = point_mass(i as f64 * 0.05, 0.8);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn expected_occupation_values() {
        assert_eq!(expected_occupation(0.0, 1.0).unwrap(), 0.0);
        assert!(expected_occupation(1.0, 1e-8).unwrap() <= 1e-4);
        let v = expected_occupation(1.0, 1.0).unwrap();
        assert!((v - EO_1_1).abs() < 1e-9, "{v}");
        assert!(expected_occupation(1.0, 0.0).is_err());
    }

    #[test]
    fn expected_occupation_matches_simpson_oracle() {
        // Composite Simpson on ∫₀ᵗ 2(1-Φ(y/(α√(t-y)))) dy, dense grid.
        let (t, alpha) = (1.5, 0.7);
        let n = 200_000;
        let h = t / n as f64;
        let g = |y: f64| if y >= t { 0.0 } else { 2.0 * (1.0 - normal_cdf(y / (alpha * (t - y).sqrt()))) };
        let mut s = g(0.0) + g(t);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let simpson = s * h / 3.0;
        assert!((expected_occupation(t, alpha).unwrap() - simpson).abs() < 1e-8);
    }

    #[test]
    fn occupation_is_integral_of_point_mass() {
        for t in [0.5, 1.0, 2.0] {
            for alpha in [0.5, 1.0, 2.0] {
                let a = expected_occupation(t, alpha).unwrap();
                let b = integrated_point_mass(t, alpha).unwrap();
                assert!((a - b).abs() < 1e-6, "t={t} α={alpha}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn point_mass_is_derivative_of_occupation() {
        let h = 1e-3;
        for t in [0.5, 1.0, 2.0] {
            for alpha in [0.5, 1.0, 2.0] {
                let fd = (expected_occupation(t + h, alpha).unwrap() - expected_occupation(t - h, alpha).unwrap())
                    / (2.0 * h);
                assert!((fd - point_mass(t, alpha)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn char_fn_basic_properties() {
        assert_eq!(char_fn(0.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((char_fn(1.0, 1.0, 1.0).unwrap() - PHI_1_1_1).abs() < 1e-9);
        for i in -50..=50 {
            let lambda = i as f64 * 0.1;
            let sticky = char_fn(lambda, 1.0, 1e-8).unwrap();
            assert!((sticky - (-0.5 * lambda * lambda).exp()).abs() < 1e-5);
        }
        for i in -40..=40 {
            let lambda = i as f64 * 0.5;
            let v = char_fn(lambda, 1.0, 1.0).unwrap();
            assert!(v.abs() <= 1.0);
            assert_eq!(v, char_fn(-lambda, 1.0, 1.0).unwrap());
        }
    }

    #[test]
    fn char_fn_two_resolutions_agree() {
        let fine = QuadOptions { rel_tol: 1e-12, abs_tol: 1e-16, max_intervals: 5000 };
        let a = char_fn(1.0, 1.0, 1.0).unwrap();
        let b = char_fn_with(1.0, 1.0, 1.0, fine).unwrap();
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn char_fn_solves_its_ode() {
        let h = 1e-4;
        for lambda in [0.5, 1.0, 3.0, 5.0] {
            for t in [0.3, 1.0, 2.0] {
                let d = (char_fn(lambda, t + h, 1.0).unwrap() - char_fn(lambda, t - h, 1.0).unwrap()) / (2.0 * h);
                let phi = char_fn(lambda, t, 1.0).unwrap();
                let residual = d + 0.5 * lambda * lambda * (phi - point_mass(t, 1.0));
                assert!(residual.abs() < 1e-5, "λ={lambda} t={t}: {residual}");
            }
        }
    }

    #[test]
    fn params_reject_asymmetric_points() {
        let p = StickyPoint::new(0.0, 0.7, 1.0);
        assert!(StickyBMParams::from_point(&p, 1.0).is_err());
        let p = StickyPoint::symmetric(0.0, 1.0);
        let params = StickyBMParams::from_point(&p, 1.0).unwrap();
        assert_eq!(params.point_mass(), point_mass(1.0, 1.0));
        assert_eq!(params.occupation_cdf(-1.0), 0.0);
        assert_eq!(params.occupation_cdf(1.0), 1.0);
        assert!(StickyBMParams::new(0.0, 1.0).is_err());
        assert!(StickyBMParams::new(1.0, -1.0).is_err());
    }
}
