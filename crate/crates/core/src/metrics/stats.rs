use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided;
use super::{MetricsError, SIGNIFICANCE_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub total: usize,
    pub mean: f64,
    /// Sample standard deviation, `n - 1` denominator.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn check_finite(values: &[f64]) -> Result<(), MetricsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MetricsError::NonFinite)
    }
}

/// Neumaier-compensated sum, so the result does not depend on input order
/// beyond the last bit in practice.
fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn descriptive_stats(values: &[f64]) -> Result<DescriptiveStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_finite(values)?;
    let n = values.len();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (sum(values.iter().copied()) / n as f64).clamp(min, max);
    let std = if n == 1 {
        0.0
    } else {
        (sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1) as f64).sqrt()
    };
    Ok(DescriptiveStats {
        total: n,
        mean,
        std,
        min,
        max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub significant_at_01: bool,
}

/// Pearson product-moment correlation with a two-sided t-test p-value.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<CorrelationResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::TooFewPoints(n));
    }
    check_finite(x)?;
    check_finite(y)?;
    let mx = sum(x.iter().copied()) / n as f64;
    let my = sum(y.iter().copied()) / n as f64;
    let sxx = sum(x.iter().map(|v| (v - mx).powi(2)));
    let syy = sum(y.iter().map(|v| (v - my).powi(2)));
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y"));
    }
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(CorrelationResult {
        r,
        p_value,
        n,
        significant_at_01: p_value < SIGNIFICANCE_LEVEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn descriptive_examples() {
        let s = descriptive_stats(&[3.0]).unwrap();
        assert_eq!((s.total, s.mean, s.std, s.min, s.max), (1, 3.0, 0.0, 3.0, 3.0));
        let s = descriptive_stats(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((s.total, s.mean, s.std, s.min, s.max), (3, 4.0, 2.0, 2.0, 6.0));
        assert_eq!(descriptive_stats(&[]), Err(MetricsError::EmptyInput));
        assert_eq!(descriptive_stats(&[1.0, f64::NAN]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn pearson_perfect_lines() {
        let r = pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((r.r, r.p_value, r.significant_at_01), (1.0, 0.0, true));
        let r = pearson_r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.r, -1.0);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(
            pearson_r(&[1.0, 2.0], &[1.0, 2.0]),
            Err(MetricsError::TooFewPoints(2))
        );
        assert_eq!(
            pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch { left: 3, right: 2 })
        );
        assert_eq!(
            pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricsError::ZeroVariance("x"))
        );
        assert_eq!(
            pearson_r(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(MetricsError::ZeroVariance("y"))
        );
    }

    // scipy.stats.pearsonr on the same data.
    #[test]
    fn pearson_matches_frozen_reference() {
        let x: Vec<f64> = (1..=20).map(f64::from).collect();
        let y: Vec<f64> = (1..=20u32).map(|i| ((i * 7919) % 23) as f64 - 0.1 * i as f64).collect();
        let res = pearson_r(&x, &y).unwrap();
        assert!((res.r - PY_R).abs() < 1e-12, "r = {}", res.r);
        assert!((res.p_value - PY_P).abs() < 1e-12, "p = {}", res.p_value);
    }
    const PY_R: f64 = -0.13585002385551787;
    const PY_P: f64 = 0.5679461381475314;

    // statrs as an independent oracle for the t tail.
    #[test]
    fn pearson_p_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let x = [1.0, 2.0, 4.0, 5.0, 7.0, 8.0, 11.0];
        let y = [2.0, 1.0, 5.0, 4.0, 9.0, 7.0, 8.0];
        let res = pearson_r(&x, &y).unwrap();
        let df = (x.len() - 2) as f64;
        let t = res.r * (df / (1.0 - res.r * res.r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let expected = 2.0 * (1.0 - dist.cdf(t.abs()));
        assert!((res.p_value - expected).abs() < 1e-9);
    }

    fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, n)
    }

    proptest! {
        #[test]
        fn descriptive_is_permutation_invariant(mut v in finite_vec(1..40), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let a = descriptive_stats(&v).unwrap();
            v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = descriptive_stats(&v).unwrap();
            prop_assert_eq!(a.total, b.total);
            prop_assert_eq!(a.min, b.min);
            prop_assert_eq!(a.max, b.max);
            prop_assert!((a.mean - b.mean).abs() <= 1e-12 * (1.0 + a.mean.abs()));
            prop_assert!((a.std - b.std).abs() <= 1e-12 * (1.0 + a.std));
            prop_assert!(a.min <= a.mean && a.mean <= a.max && a.std >= 0.0);
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40),
            scale in 0.01f64..100.0,
            shift in -100f64..100.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let Ok(a) = pearson_r(&x, &y) else { return Ok(()); };
            let b = pearson_r(&y, &x).unwrap();
            prop_assert!((a.r - b.r).abs() < 1e-12);
            let x2: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
            let c = pearson_r(&x2, &y).unwrap();
            prop_assert!((a.r - c.r).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            prop_assert_eq!(a.significant_at_01, a.p_value < 0.01);
        }
    }
}
