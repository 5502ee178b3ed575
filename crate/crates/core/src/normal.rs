//! Standard normal distribution function.

use std::f64::consts::FRAC_1_SQRT_2;

/// Φ(x), evaluated through the complementary error function so both tails
/// keep full relative precision.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent erf: Maclaurin series for small |x|, Laplace continued
    /// fraction for erfc in the tails.
    fn oracle_cdf(x: f64) -> f64 {
        let z = x.abs() / std::f64::consts::SQRT_2;
        let erfc_z = if z < 2.5 {
            let mut term = z;
            let mut sum = z;
            let mut n = 0.0;
            loop {
                n += 1.0;
                term *= -z * z / n;
                let add = term / (2.0 * n + 1.0);
                sum += add;
                if add.abs() < 1e-18 {
                    break;
                }
            }
            1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
        } else {
            // erfc(z) = exp(-z²)/√π · 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
            let mut frac = z;
            for k in (1..200).rev() {
                frac = z + (k as f64 / 2.0) / frac;
            }
            (-z * z).exp() / std::f64::consts::PI.sqrt() / frac
        };
        if x >= 0.0 {
            1.0 - 0.5 * erfc_z
        } else {
            0.5 * erfc_z
        }
    }

    #[test]
    fn zero_is_one_half() {
        assert_eq!(standard_normal_cdf(0.0), 0.5);
    }

    #[test]
    fn one_sigma_matches_table() {
        // Abramowitz & Stegun table value.
        let table = 0.841_344_746_068_542_9;
        assert!((standard_normal_cdf(1.0) - table).abs() < 1e-12);
        assert!((oracle_cdf(1.0) - table).abs() < 1e-12);
        assert!((standard_normal_cdf(-1.0) - (1.0 - table)).abs() < 1e-12);
    }

    #[test]
    fn matches_oracle_on_grid() {
        for i in -800..=800 {
            let x = i as f64 / 100.0;
            let diff = (standard_normal_cdf(x) - oracle_cdf(x)).abs();
            assert!(diff < 1e-12, "x={x} diff={diff}");
        }
    }

    proptest! {
        #[test]
        fn symmetric(x in -8.0f64..8.0) {
            let s = standard_normal_cdf(x) + standard_normal_cdf(-x);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn monotone(x in -8.0f64..8.0, dx in 0.0f64..1.0) {
            prop_assert!(standard_normal_cdf(x + dx) >= standard_normal_cdf(x));
        }
    }
}
