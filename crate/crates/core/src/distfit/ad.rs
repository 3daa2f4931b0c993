use super::{DistError, DistParams};

const CDF_CLAMP: f64 = 1e-15;

/// Anderson-Darling A² of `data` against `params`. Order of `data` is irrelevant.
pub fn anderson_darling(data: &[f64], params: &DistParams) -> Result<f64, DistError> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    anderson_darling_sorted(&sorted, params)
}

/// As [`anderson_darling`] for data already sorted ascending.
pub fn anderson_darling_sorted(sorted: &[f64], params: &DistParams) -> Result<f64, DistError> {
    if let Some((index, &x)) = sorted.iter().enumerate().find(|(_, &x)| !params.in_support(x)) {
        return Err(DistError::SupportViolation { index, x });
    }
    anderson_darling_with(sorted, |x| params.cdf(x))
}

/// A² against an arbitrary cdf; `sorted` must be ascending.
pub fn anderson_darling_with<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<f64, DistError> {
    if sorted.is_empty() {
        return Err(DistError::EmptyInput);
    }
    let n = sorted.len();
    let u: Vec<f64> = sorted.iter().map(|&x| cdf(x).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP)).collect();
    let mut s = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        s += w * (u[i].ln() + (-u[n - 1 - i]).ln_1p());
    }
    Ok(-(n as f64) - s / n as f64)
}
