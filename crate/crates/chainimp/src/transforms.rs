//! Symmetrizing transforms applied before modeling and inverted after
//! imputation, plus the skewness screen used to pick transform candidates.
//!
//! The signed cube root is the workhorse for heavy-tailed amount variables:
//! unlike a logarithm it is defined on zero and negative values, and it is
//! strictly monotone, so interval bounds commute with it.

use crate::error::{Error, Result};

/// sign(x) * |x|^(1/3). Strictly monotone, odd, defined on all reals.
pub fn signed_cube_root(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::validation(format!(
            "signed_cube_root requires finite input, got {x}"
        )));
    }
    Ok(x.cbrt())
}

/// Inverse of [`signed_cube_root`]: y^3.
pub fn inverse_cube(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::validation(format!(
            "inverse_cube requires finite input, got {y}"
        )));
    }
    let out = y * y * y;
    if !out.is_finite() {
        return Err(Error::numeric(format!("inverse_cube overflow at {y}")));
    }
    Ok(out)
}

/// Sample skewness g1 = m3 / m2^(3/2) from central moments.
///
/// Requires at least 3 points and nonzero variance.
pub fn skewness(xs: &[f64]) -> Result<f64> {
    if xs.len() < 3 {
        return Err(Error::validation(format!(
            "skewness needs a sample of size >= 3, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for &x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= 0.0 {
        return Err(Error::validation(
            "skewness undefined for a zero-variance sample".to_string(),
        ));
    }
    Ok(m3 / m2.powf(1.5))
}

/// Which transform a variable declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    SignedCubeRoot,
}

impl Transform {
    pub fn apply(self, x: f64) -> Result<f64> {
        match self {
            Transform::None => Ok(x),
            Transform::SignedCubeRoot => signed_cube_root(x),
        }
    }

    pub fn invert(self, y: f64) -> Result<f64> {
        match self {
            Transform::None => Ok(y),
            Transform::SignedCubeRoot => inverse_cube(y),
        }
    }

    /// Map an original-scale interval to the transformed scale. Monotone
    /// transforms preserve interval orientation, so endpoints map directly.
    pub fn apply_interval(self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        match self {
            Transform::None => Ok((lo, hi)),
            Transform::SignedCubeRoot => {
                let tl = if lo == f64::NEG_INFINITY { lo } else { signed_cube_root(lo)? };
                let th = if hi == f64::INFINITY { hi } else { signed_cube_root(hi)? };
                Ok((tl, th))
            }
        }
    }
}

/// Flags variables whose observed sample looks skewed enough to warrant a
/// symmetrizing transform. Returns (skewness, flagged) per input sample.
pub fn transform_candidates(samples: &[(&str, Vec<f64>)], threshold: f64) -> Vec<(String, f64, bool)> {
    samples
        .iter()
        .map(|(name, xs)| {
            let g1 = skewness(xs).unwrap_or(0.0);
            (name.to_string(), g1, g1.abs() > threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp, LogNormal};

    #[test]
    fn cube_root_known_values() {
        assert_eq!(signed_cube_root(8.0).unwrap(), 2.0);
        assert_eq!(signed_cube_root(-27.0).unwrap(), -3.0);
        assert_eq!(signed_cube_root(0.0).unwrap(), 0.0);
    }

    #[test]
    fn inverse_cube_known_values() {
        assert_eq!(inverse_cube(2.0).unwrap(), 8.0);
        assert_eq!(inverse_cube(-3.0).unwrap(), -27.0);
        assert_eq!(inverse_cube(0.0).unwrap(), 0.0);
    }

    #[test]
    fn round_trip_relative_error() {
        for &x in &[1e-6, 0.5, 1.0, 123.456, -9999.0, 3.2e9, -7.7e-4] {
            let y = inverse_cube(signed_cube_root(x).unwrap()).unwrap();
            assert!((y - x).abs() <= 1e-9 * x.abs().max(1e-300), "x={x} y={y}");
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(signed_cube_root(f64::NAN).is_err());
        assert!(signed_cube_root(f64::INFINITY).is_err());
        assert!(inverse_cube(f64::NAN).is_err());
        // 1e200 cubed overflows f64
        assert!(inverse_cube(1e200).is_err());
    }

    #[test]
    fn skewness_symmetric_sample_is_zero() {
        assert_eq!(skewness(&[-1.0, 0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn skewness_degenerate_sample_errors() {
        assert!(skewness(&[1.0, 1.0]).is_err());
        assert!(skewness(&[2.0, 2.0, 2.0]).is_err());
    }

    // Analytic skewness of Exponential(1) is 2; Monte Carlo oracle.
    #[test]
    fn skewness_exponential_monte_carlo() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let exp = Exp::new(1.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| exp.sample(&mut rng)).collect();
        let g1 = skewness(&xs).unwrap();
        assert!((g1 - 2.0).abs() < 0.05, "g1={g1}");
    }

    // Cube root of a right-skewed lognormal fixture lands near the ~0.7
    // scale and is strictly smaller than the raw skewness.
    #[test]
    fn skewness_reduction_on_lognormal_fixture() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let ln = LogNormal::new(12.0, 1.0).unwrap();
        let raw: Vec<f64> = (0..100_000).map(|_| ln.sample(&mut rng)).collect();
        let transformed: Vec<f64> = raw.iter().map(|&x| signed_cube_root(x).unwrap()).collect();
        let g_raw = skewness(&raw).unwrap();
        let g_t = skewness(&transformed).unwrap();
        assert!(g_t.abs() < g_raw.abs());
        assert!(g_t > 0.5 && g_t < 1.5, "g_t={g_t}");
    }

    #[test]
    fn interval_maps_monotonically() {
        let (lo, hi) = Transform::SignedCubeRoot.apply_interval(-27.0, 8.0).unwrap();
        assert_eq!((lo, hi), (-3.0, 2.0));
        let (lo, hi) = Transform::SignedCubeRoot
            .apply_interval(f64::NEG_INFINITY, 8.0)
            .unwrap();
        assert_eq!(lo, f64::NEG_INFINITY);
        assert_eq!(hi, 2.0);
    }

    #[test]
    fn transform_candidates_flags_skewed() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let ln = LogNormal::new(0.0, 1.0).unwrap();
        let skewed: Vec<f64> = (0..5000).map(|_| ln.sample(&mut rng)).collect();
        let flat: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let report = transform_candidates(&[("skewed", skewed), ("flat", flat)], 1.0);
        assert!(report[0].2);
        assert!(!report[1].2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone(a in -1e9f64..1e9, b in -1e9f64..1e9) {
                prop_assume!(a < b);
                prop_assert!(signed_cube_root(a).unwrap() < signed_cube_root(b).unwrap());
            }

            #[test]
            fn round_trip(x in -1e9f64..1e9) {
                let y = inverse_cube(signed_cube_root(x).unwrap()).unwrap();
                prop_assert!((y - x).abs() <= 1e-9 * x.abs().max(1e-12));
            }
        }

        // |skewness(cbrt(X))| <= |skewness(X)| on lognormal fixtures with sigma >= 0.5
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn lognormal_skewness_shrinks(sigma in 0.5f64..2.0, seed in 0u64..1000) {
                use rand::SeedableRng;
                use rand_distr::{Distribution, LogNormal};
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
                let ln = LogNormal::new(0.0, sigma).unwrap();
                let raw: Vec<f64> = (0..20_000).map(|_| ln.sample(&mut rng)).collect();
                let tr: Vec<f64> = raw.iter().map(|&x| x.cbrt()).collect();
                prop_assert!(skewness(&tr).unwrap().abs() <= skewness(&raw).unwrap().abs());
            }
        }
    }
}
