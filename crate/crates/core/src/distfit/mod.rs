//! Delay distribution families, maximum-likelihood fitting and
//! Anderson-Darling ranking.
//!
//! ```
//! use twp_core::distfit::{gamma_moments, DistParams};
//!
//! let m = gamma_moments(&DistParams::Gamma { shape: 2.0, scale: 3.0 }).unwrap();
//! assert_eq!(m.mean, 6.0);
//! assert_eq!(m.variance, 18.0);
//! ```

mod ad;
mod family;
mod fit;
pub mod special;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ad::{anderson_darling, anderson_darling_sorted, anderson_darling_with};
pub use family::{DistFamily, DistParams};
pub use fit::{fit_mle, MIN_FIT_SAMPLES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("unknown distribution family {0:?}")]
    UnknownFamily(String),
    #[error("invalid parameters {0:?}")]
    BadParams(DistParams),
    #[error("x = {x} is outside the support of {params:?}")]
    OutOfSupport { x: f64, params: DistParams },
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("data has zero variance")]
    DegenerateData,
    #[error("data contains non-finite values")]
    NonFiniteData,
    #[error("{0} requires strictly positive data")]
    NonPositiveData(DistFamily),
    #[error("{0} fit did not converge")]
    NoConvergence(DistFamily),
    #[error("sample {index} (x = {x}) lies outside the fitted support")]
    SupportViolation { index: usize, x: f64 },
    #[error("expected a {expected} distribution, got {got}")]
    WrongFamily { expected: DistFamily, got: DistFamily },
    #[error("fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DistParams,
    pub ad_stat: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub family: DistFamily,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking {
    /// Successful fits, best (smallest A²) first.
    pub results: Vec<FitResult>,
    pub failures: Vec<FitFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMoments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn gamma_moments(params: &DistParams) -> Result<GammaMoments, DistError> {
    let DistParams::Gamma { shape, scale } = *params else {
        return Err(DistError::WrongFamily { expected: DistFamily::Gamma, got: params.family() });
    };
    params.validate()?;
    Ok(GammaMoments {
        mean: shape * scale,
        variance: shape * scale * scale,
        skewness: 2.0 / shape.sqrt(),
        excess_kurtosis: 6.0 / shape,
    })
}

/// `n` independent draws.
pub fn sample<R: Rng + ?Sized>(params: &DistParams, rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| params.draw(rng)).collect()
}

/// Fit one family and score it against the data.
pub fn fit_and_score(family: DistFamily, data: &[f64]) -> Result<FitResult, DistError> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    fit_sorted(family, &sorted)
}

fn fit_sorted(family: DistFamily, sorted: &[f64]) -> Result<FitResult, DistError> {
    let params = fit_mle(family, sorted)?;
    let ad_stat = anderson_darling_sorted(sorted, &params)?;
    Ok(FitResult { params, ad_stat, n: sorted.len() })
}

/// Fit every requested family and order the successes by A², ties going to
/// the family with fewer parameters.
pub fn rank_fits(data: &[f64], families: &[DistFamily]) -> Ranking {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq = families.to_vec();
    uniq.sort();
    uniq.dedup();

    let outcomes: Vec<_> = uniq.par_iter().map(|&f| (f, fit_sorted(f, &sorted))).collect();

    let mut ranking = Ranking::default();
    for (family, outcome) in outcomes {
        match outcome {
            Ok(r) => ranking.results.push(r),
            Err(e) => ranking.failures.push(FitFailure { family, reason: e.to_string() }),
        }
    }
    ranking.results.sort_by(|a, b| {
        a.ad_stat
            .total_cmp(&b.ad_stat)
            .then(a.params.family().n_params().cmp(&b.params.family().n_params()))
            .then(a.params.family().cmp(&b.params.family()))
    });
    ranking
}

/// ⌈fraction·n⌉, tolerant of the representation error in products like 0.001 × 551e6.
pub fn subsample_len(n: usize, fraction: f64) -> Result<usize, DistError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DistError::BadFraction(fraction));
    }
    let raw = fraction * n as f64;
    let near = raw.round();
    let k = if (raw - near).abs() <= 1e-9 * near.max(1.0) { near } else { raw.ceil() };
    Ok((k as usize).min(n))
}

/// Indices of a uniform sample without replacement from `0..n`.
pub fn subsample_indices<R: Rng + ?Sized>(
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>, DistError> {
    let k = subsample_len(n, fraction)?;
    Ok(rand::seq::index::sample(rng, n, k).into_vec())
}

pub fn subsample<T: Clone, R: Rng + ?Sized>(
    data: &[T],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<T>, DistError> {
    Ok(subsample_indices(data.len(), fraction, rng)?
        .into_iter()
        .map(|i| data[i].clone())
        .collect())
}

/// (empirical quantile, model quantile) pairs at median ranks (i − 0.3)/(n + 0.4).
pub fn probability_plot(data: &[f64], params: &DistParams) -> Vec<(f64, f64)> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, params.quantile((i as f64 + 0.7) / (n + 0.4))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_moment_values() {
        let m = gamma_moments(&DistParams::Gamma { shape: 1.0, scale: 1.0 }).unwrap();
        assert_eq!((m.mean, m.variance, m.skewness, m.excess_kurtosis), (1.0, 1.0, 2.0, 6.0));
        let m = gamma_moments(&DistParams::Gamma { shape: 4.63062, scale: 43.16537 }).unwrap();
        assert!((m.mean - 199.88).abs() < 0.01);
        assert!((m.skewness - 0.9294).abs() < 1e-3);
        assert!((m.excess_kurtosis - 1.2957).abs() < 1e-3);
        let err = gamma_moments(&DistParams::Normal { location: 0.0, scale: 1.0 }).unwrap_err();
        assert!(matches!(err, DistError::WrongFamily { .. }));
    }

    #[test]
    fn subsample_sizes() {
        assert_eq!(subsample_len(551_000_000, 0.001).unwrap(), 551_000);
        assert_eq!(subsample_len(10, 0.25).unwrap(), 3);
        assert_eq!(subsample_len(10, 1.0).unwrap(), 10);
        assert!(matches!(subsample_len(10, 0.0), Err(DistError::BadFraction(_))));
        assert!(matches!(subsample_len(10, 1.5), Err(DistError::BadFraction(_))));
    }

    #[test]
    fn full_subsample_is_permutation() {
        let data: Vec<u32> = (0..500).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = subsample(&data, 1.0, &mut rng).unwrap();
        assert_ne!(s, data);
        s.sort();
        assert_eq!(s, data);
    }

    #[test]
    fn subsample_is_seed_deterministic() {
        let data: Vec<u32> = (0..10_000).collect();
        let a = subsample(&data, 0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = subsample(&data, 0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_mean_within_clt_bound() {
        let params = DistParams::Gamma { shape: 4.63062, scale: 43.16537 };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pop = sample(&params, &mut rng, 200_000);
        let n = pop.len() as f64;
        let mu = pop.iter().sum::<f64>() / n;
        let var = pop.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
        let sub = subsample(&pop, 0.01, &mut rng).unwrap();
        let m = sub.len() as f64;
        let sub_mean = sub.iter().sum::<f64>() / m;
        // finite-population correction
        let se = (var / m * (1.0 - m / n)).sqrt();
        assert!((sub_mean - mu).abs() < 3.0 * se);
    }

    #[test]
    fn ranking_reports_failures_inline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = sample(&DistParams::Normal { location: -1.0, scale: 1.0 }, &mut rng, 500);
        let r = rank_fits(&data, &[DistFamily::Normal, DistFamily::Gamma]);
        assert_eq!(r.results.len(), 1);
        assert_eq!(r.results[0].params.family(), DistFamily::Normal);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].family, DistFamily::Gamma);
        assert!(!r.failures[0].reason.is_empty());
    }

    #[test]
    fn ranking_is_deterministic_and_orders_gamma_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = sample(&DistParams::Gamma { shape: 4.63062, scale: 43.16537 }, &mut rng, 5_000);
        let fams = [DistFamily::Normal, DistFamily::Exponential2, DistFamily::Gamma];
        let a = rank_fits(&data, &fams);
        let b = rank_fits(&data, &fams);
        assert_eq!(a, b);
        let order: Vec<_> = a.results.iter().map(|r| r.params.family()).collect();
        assert_eq!(order, vec![DistFamily::Gamma, DistFamily::Normal, DistFamily::Exponential2]);
    }

    #[test]
    fn probability_plot_on_true_model_is_near_diagonal() {
        let p = DistParams::Normal { location: 5.0, scale: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = probability_plot(&sample(&p, &mut rng, 2_000), &p);
        let mid = &pts[500..1500];
        assert!(mid.iter().all(|(e, m)| (e - m).abs() < 0.3));
    }
}
