use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Type-7 quantile of ascending data: linear interpolation at rank (n − 1)p.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// sd / mean, zero when there is no spread.
fn coeff_var(mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else if mean > 0.0 {
        sd / mean
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    pub cv: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
    pub max: f64,
}

pub fn descriptive_stats(samples: &[f64]) -> Result<DescriptiveStats, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let (mean, sd) = mean_sd(&s);
    let q = |p| quantile_sorted(&s, p);
    Ok(DescriptiveStats {
        count: s.len(),
        mean,
        sd,
        cv: coeff_var(mean, sd),
        min: s[0],
        q25: q(0.25),
        q50: q(0.50),
        q75: q(0.75),
        q90: q(0.90),
        q95: q(0.95),
        q99: q(0.99),
        max: s[s.len() - 1],
    })
}

/// |fwd − rev| / min(fwd, rev).
pub fn relative_asymmetry(fwd: f64, rev: f64) -> Result<f64, AnalysisError> {
    if !(fwd > 0.0 && rev > 0.0) {
        return Err(AnalysisError::NonPositiveDelay { fwd, rev });
    }
    Ok((fwd - rev).abs() / fwd.min(rev))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetrySummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub cv: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
    /// Mean after dropping the largest 5% of values.
    pub trimmed_mean: f64,
}

pub fn asymmetry_summary(values: &[f64]) -> Result<AsymmetrySummary, AnalysisError> {
    let d = descriptive_stats(values)?;
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let keep = s.len() - s.len() / 20;
    let trimmed_mean = s[..keep].iter().sum::<f64>() / keep as f64;
    Ok(AsymmetrySummary {
        count: d.count,
        mean: d.mean,
        sd: d.sd,
        cv: d.cv,
        q25: d.q25,
        median: d.q50,
        q75: d.q75,
        q90: d.q90,
        q95: d.q95,
        q99: d.q99,
        trimmed_mean,
    })
}

/// Empirical cdf as (value, fraction ≤ value), one row per input value in
/// ascending order; tied values all carry the fraction of the last tie.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let frac = (j + 1) as f64 / n;
        out.extend((i..=j).map(|k| (s[k], frac)));
        i = j + 1;
    }
    out
}

/// Mean with a 99% normal-approximation half-width.
pub(crate) fn mean_ci99(xs: &[f64]) -> (f64, f64) {
    let (mean, sd) = mean_sd(xs);
    (mean, 2.576 * sd / (xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        let d = descriptive_stats(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((d.mean, d.sd, d.cv, d.q50), (4.0, 2.0, 0.5, 4.0));
        let d = descriptive_stats(&[1.0; 4]).unwrap();
        assert_eq!(d.cv, 0.0);
        assert!([d.q25, d.q50, d.q75, d.q90, d.q95, d.q99].iter().all(|&q| q == 1.0));
        assert!(matches!(descriptive_stats(&[]), Err(AnalysisError::EmptyInput)));
    }

    #[test]
    fn type7_reference_values() {
        // reference values from the (n − 1)p + 1 rank rule
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.75), 3.25);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        let s = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert!((quantile_sorted(&s, 0.9) - 46.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetry_examples() {
        assert_eq!(relative_asymmetry(60.0, 90.0).unwrap(), 0.5);
        assert_eq!(relative_asymmetry(75.0, 75.0).unwrap(), 0.0);
        assert_eq!(relative_asymmetry(100.0, 250.0).unwrap(), 1.5);
        assert!(matches!(relative_asymmetry(-2.0, 5.0), Err(AnalysisError::NonPositiveDelay { .. })));
        assert!(relative_asymmetry(0.0, 5.0).is_err());
    }

    #[test]
    fn asymmetry_summary_examples() {
        let s = asymmetry_summary(&[0.0; 12]).unwrap();
        assert_eq!(s.count, 12);
        assert!([s.mean, s.sd, s.cv, s.q25, s.median, s.q75, s.q90, s.q95, s.q99, s.trimmed_mean]
            .iter()
            .all(|&v| v == 0.0));
        let mut mix = vec![0.1; 90];
        mix.extend([1.0; 10]);
        let s = asymmetry_summary(&mix).unwrap();
        assert!(s.trimmed_mean < s.mean);
        assert!(asymmetry_summary(&[]).is_err());
    }

    #[test]
    fn cdf_examples() {
        let c = cdf_points(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
        let c = cdf_points(&[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.75), (2.0, 0.75), (5.0, 1.0)]);
    }

    #[test]
    fn ci_of_constant_is_zero() {
        assert_eq!(mean_ci99(&[50.0]), (50.0, 0.0));
        assert_eq!(mean_ci99(&[40.0, 60.0]).0, 50.0);
    }

    proptest! {
        #[test]
        fn quantiles_monotone_and_bounded(xs in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let d = descriptive_stats(&xs).unwrap();
            let qs = [d.min, d.q25, d.q50, d.q75, d.q90, d.q95, d.q99, d.max];
            prop_assert!(qs.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn asymmetry_symmetric(a in 0.001f64..1e4, b in 0.001f64..1e4) {
            let x = relative_asymmetry(a, b).unwrap();
            prop_assert_eq!(x, relative_asymmetry(b, a).unwrap());
            prop_assert!(x >= 0.0);
            prop_assert_eq!(x == 0.0, a == b);
        }
    }
}
