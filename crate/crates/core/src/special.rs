//! Normal distribution function and the scaled complementary error function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `½ erfc(-x/√2)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Arguments above this use the continued fraction in [`erfcx`].
const ERFCX_SWITCH: f64 = 4.25;

/// Scaled complementary error function `exp(x²) erfc(x)`.
///
/// For large positive `x` the product is evaluated by the Laplace
/// continued fraction so that `exp(x²)` never overflows.
pub fn erfcx(x: f64) -> f64 {
    if x < ERFCX_SWITCH {
        return (x * x).exp() * libm::erfc(x);
    }
    // erfc(x) e^{x²} = (1/√π) · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = x;
    for k in (1..=80).rev() {
        tail = x + 0.5 * k as f64 / tail;
    }
    1.0 / (tail * PI.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(40.0) - 1.0).abs() <= 1e-15);
        assert!(normal_cdf(-40.0) >= 0.0 && normal_cdf(-40.0) < 1e-300);
        // 30-digit mpmath ncdf(2): 0.977249868051820792799717362833
        assert!((normal_cdf(2.0) - 0.977_249_868_051_820_8).abs() <= 1e-15);
        // ncdf(-1.5) = 0.0668072012688580660...
        assert!((normal_cdf(-1.5) - 0.066_807_201_268_858_07).abs() <= 1e-16);
        assert!((normal_sf(1.0) - 0.158_655_253_931_457_05).abs() <= 1e-16);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        // Φ(x) = ½ + φ(x) Σ x^{2k+1}/(1·3·…·(2k+1)), converges for all x.
        let series = |x: f64| {
            let mut term = x;
            let mut sum = x;
            for k in 1..400 {
                term *= x * x / (2 * k + 1) as f64;
                sum += term;
            }
            0.5 + (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * sum
        };
        let mut x = -6.0;
        while x <= 6.0 {
            assert!((normal_cdf(x) - series(x)).abs() <= 1e-10, "x={x}");
            x += 0.0625;
        }
    }

    #[test]
    fn erfcx_is_continuous_across_switch() {
        let below = (ERFCX_SWITCH * ERFCX_SWITCH).exp() * libm::erfc(ERFCX_SWITCH);
        let above = erfcx(ERFCX_SWITCH);
        assert!(((below - above) / above).abs() < 1e-13, "{below} vs {above}");
        for x in [4.3f64, 5.0, 6.0, 8.0, 20.0] {
            let direct = (x * x).exp() * libm::erfc(x);
            assert!(((erfcx(x) - direct) / direct).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn erfcx_large_argument_asymptotics() {
        let x = 1e6;
        let asym = 1.0 / (x * PI.sqrt()) * (1.0 - 0.5 / (x * x));
        assert!(((erfcx(x) - asym) / asym).abs() < 1e-15);
        assert_eq!(erfcx(0.0), 1.0);
    }
}
