//! Goodness-of-fit tests used to check simulation output.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub pvalue: f64,
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Tail with Stephens' small-sample correction for effective size `ne`.
fn ks_pvalue(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov-Smirnov test against Uniform[0, 1].
pub fn ks_uniform(samples: &[f64]) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            (v - i as f64 / n).max((i + 1) as f64 / n - v)
        })
        .fold(0.0, f64::max);
    Ok(TestResult {
        statistic: d,
        pvalue: ks_pvalue(d, n),
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestResult {
        statistic: d,
        pvalue: ks_pvalue(d, na * nb / (na + nb)),
    })
}

/// Pearson chi-square goodness of fit, `df = cells - 1`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<TestResult> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            expected: expected.len(),
            got: observed.len(),
        });
    }
    if observed.len() < 2 || expected.iter().any(|&e| e.is_nan() || e <= 0.0) {
        return Err(Error::InvalidArgument(
            "chi-square needs >= 2 cells with positive expectation".into(),
        ));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic: stat,
        pvalue: dist.sf(stat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_reference_points() {
        // classic critical values of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn uniform_grid_passes() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        let r = ks_uniform(&x).unwrap();
        assert!(r.statistic <= 0.0025 + 1e-12);
        assert!(r.pvalue > 0.99);
        let skewed: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(ks_uniform(&skewed).unwrap().pvalue < 1e-6);
    }

    #[test]
    fn two_sample_detects_shift() {
        let a: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..300).map(|i| i as f64 + 0.5).collect();
        assert!(ks_two_sample(&a, &b).unwrap().pvalue > 0.9);
        let c: Vec<f64> = (0..300).map(|i| i as f64 + 100.0).collect();
        assert!(ks_two_sample(&a, &c).unwrap().pvalue < 1e-6);
    }

    #[test]
    fn chi_square_matches_table() {
        let r = chi_square_gof(&[10, 10, 10, 10], &[10.0; 4]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.pvalue - 1.0).abs() < 1e-12);
        // chi2 with 1 df: P(X > 3.841459) = 0.05
        let r = chi_square_gof(&[0, 0], &[1.0, 1.0]).unwrap();
        assert!((r.statistic - 2.0).abs() < 1e-12);
        let d = ChiSquared::new(1.0).unwrap();
        assert!((d.sf(3.841458820694124) - 0.05).abs() < 1e-9);
    }
}
