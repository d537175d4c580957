//! Goodness-of-fit tests used by the sampler and schedule checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test of `samples` against `cdf`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("KS test needs finite samples".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("KS test needs samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::InvalidParameter("chi-square needs matching bins (>= 2)".into()));
    }
    if expected.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("expected counts must be positive".into()));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic: stat,
        dof,
        p_value: dist.sf(stat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use statrs::distribution::Normal;

    #[test]
    fn kolmogorov_known_values() {
        // 5% and 1% critical points of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.358_099) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.627_624) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_accepts_and_rejects() {
        let x = RngStream::new(3).normals(5000);
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!(ks_test(&x, |v| n.cdf(v)).unwrap().p_value > 0.01);
        let shifted = Normal::new(0.1, 1.0).unwrap();
        assert!(ks_test(&x, |v| shifted.cdf(v)).unwrap().p_value < 0.01);
        let y = RngStream::new(4).normals(4000);
        assert!(ks_two_sample(&x, &y).unwrap().p_value > 0.01);
        let z: Vec<f64> = y.iter().map(|v| v * 1.2).collect();
        assert!(ks_two_sample(&x, &z).unwrap().p_value < 0.01);
    }

    #[test]
    fn ks_statistic_by_hand() {
        // uniform cdf, samples 0.1 and 0.6: D = max(0.1, 0.4, 0.1, 0.4) = 0.4
        let r = ks_test(&[0.6, 0.1], |v| v).unwrap();
        assert!((r.statistic - 0.4).abs() < 1e-15);
        let r = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn chi_square_by_hand() {
        let r = chi_square(&[10, 20, 30], &[20.0, 20.0, 20.0]).unwrap();
        assert!((r.statistic - 10.0).abs() < 1e-12);
        assert_eq!(r.dof, 2);
        // sf of chi2(2) is exp(-x/2)
        assert!((r.p_value - (-5.0f64).exp()).abs() < 1e-12);
        assert!(chi_square(&[1], &[1.0]).is_err());
    }
}
