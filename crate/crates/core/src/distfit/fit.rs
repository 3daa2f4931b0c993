use std::f64::consts::PI;

use super::special::{digamma, trigamma};
use super::{DistError, DistFamily, DistParams};

pub const MIN_FIT_SAMPLES: usize = 30;

const THRESHOLD_GRID: usize = 200;
const GOLDEN_ITERS: usize = 60;
const MAX_NEWTON: usize = 200;

struct Summary {
    n: f64,
    mean: f64,
    /// Variance with the n denominator.
    var: f64,
    min: f64,
    max: f64,
}

impl Summary {
    fn of(data: &[f64]) -> Self {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let (min, max) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        Summary { n, mean, var, min, max }
    }
}

/// Maximum-likelihood estimate of `family` for `data` (any order).
pub fn fit_mle(family: DistFamily, data: &[f64]) -> Result<DistParams, DistError> {
    if data.len() < MIN_FIT_SAMPLES {
        return Err(DistError::TooFewSamples { n: data.len(), min: MIN_FIT_SAMPLES });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(DistError::NonFiniteData);
    }
    let s = Summary::of(data);
    if s.max <= s.min || s.var <= 0.0 {
        return Err(DistError::DegenerateData);
    }
    if family.positive_support() && s.min <= 0.0 {
        return Err(DistError::NonPositiveData(family));
    }

    let params = match family {
        DistFamily::Normal => DistParams::Normal { location: s.mean, scale: s.var.sqrt() },
        DistFamily::Lognormal => {
            let (location, scale) = log_moments(data.iter().map(|x| x.ln()));
            DistParams::Lognormal { location, scale }
        }
        DistFamily::Gamma => fit_gamma(data, &s)?,
        DistFamily::Weibull => {
            let lv: Vec<f64> = data.iter().map(|x| x.ln()).collect();
            let w = weibull_profile(&lv, None).ok_or(DistError::NoConvergence(family))?;
            DistParams::Weibull { shape: w.shape, scale: w.scale }
        }
        DistFamily::Exponential2 => {
            let scale = s.n * (s.mean - s.min) / (s.n - 1.0);
            DistParams::Exponential2 { scale, threshold: s.min - scale / s.n }
        }
        DistFamily::Lognormal3 => fit_lognormal3(data, &s)?,
        DistFamily::Loglogistic3 => fit_loglogistic3(data, &s)?,
        DistFamily::Weibull3 => fit_weibull3(data, &s)?,
    };
    params.validate().map_err(|_| DistError::NoConvergence(family))?;
    Ok(params)
}

/// Mean and n-denominator standard deviation.
fn log_moments(it: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = it.clone().fold((0.0, 0.0), |(s, n), y| (s + y, n + 1.0));
    let mean = sum / n;
    let var = it.map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fit_gamma(data: &[f64], s: &Summary) -> Result<DistParams, DistError> {
    let mean_ln = data.iter().map(|x| x.ln()).sum::<f64>() / s.n;
    let target = s.mean.ln() - mean_ln;
    if !(target > 0.0) {
        return Err(DistError::DegenerateData);
    }
    // ln k - ψ(k) = ln(mean) - mean(ln x), from the method-of-moments start
    let mut k = s.mean * s.mean / s.var;
    for _ in 0..MAX_NEWTON {
        let f = k.ln() - digamma(k) - target;
        let fp = 1.0 / k - trigamma(k);
        let mut next = k - f / fp;
        if !(next > 0.0) {
            next = 0.5 * k;
        }
        if (next - k).abs() <= 1e-13 * k {
            return Ok(DistParams::Gamma { shape: next, scale: s.mean / next });
        }
        k = next;
    }
    Err(DistError::NoConvergence(DistFamily::Gamma))
}

#[derive(Debug, Clone, Copy)]
struct WeibullFit {
    shape: f64,
    scale: f64,
    loglik: f64,
}

/// Weibull MLE from log-data by Newton on the profile equation in the shape,
/// safeguarded by bisection.
fn weibull_profile(lv: &[f64], seed: Option<f64>) -> Option<WeibullFit> {
    let n = lv.len() as f64;
    let lmax = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // work with y = v / max(v) so that y^k never overflows
    let mean_ly = lv.iter().sum::<f64>() / n - lmax;
    let sd_ly = (lv.iter().map(|l| (l - lmax - mean_ly).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd_ly > 0.0) {
        return None;
    }
    let sums = |k: f64| {
        let (mut b, mut a, mut c) = (0.0, 0.0, 0.0);
        for &l in lv {
            let ly = l - lmax;
            let w = (k * ly).exp();
            b += w;
            a += w * ly;
            c += w * ly * ly;
        }
        (b, a, c)
    };

    let mut k = seed.filter(|k| k.is_finite() && *k > 0.0).unwrap_or(PI / (6f64.sqrt() * sd_ly));
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..MAX_NEWTON {
        let (b, a, c) = sums(k);
        let g = a / b - 1.0 / k - mean_ly;
        let gp = (c * b - a * a) / (b * b) + 1.0 / (k * k);
        if g < 0.0 {
            lo = lo.max(k);
        } else {
            hi = hi.min(k);
        }
        let mut next = k - g / gp;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * k };
        }
        let done = (next - k).abs() <= 1e-12 * k;
        k = next;
        if done {
            let (b, _, _) = sums(k);
            let scale = lmax.exp() * (b / n).powf(1.0 / k);
            let loglik = n * k.ln() - n * k * scale.ln() + (k - 1.0) * lv.iter().sum::<f64>() - n;
            return Some(WeibullFit { shape: k, scale, loglik });
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct LogisticFit {
    mu: f64,
    sigma: f64,
    loglik: f64,
}

struct LogisticEval {
    ll: f64,
    g: [f64; 2],
    h: [f64; 3],
}

fn logistic_eval(y: &[f64], mu: f64, sigma: f64) -> LogisticEval {
    let n = y.len() as f64;
    let (mut ll, mut s1, mut s2, mut q, mut qz, mut qzz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &v in y {
        let z = (v - mu) / sigma;
        let e = (-z.abs()).exp();
        let softplus_neg = (-z).max(0.0) + e.ln_1p();
        let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
        ll += -z - 2.0 * softplus_neg;
        let d = 2.0 * p - 1.0;
        s1 += d;
        s2 += d * z;
        let w = p * (1.0 - p);
        q += w;
        qz += w * z;
        qzz += w * z * z;
    }
    let s2_ = sigma * sigma;
    LogisticEval {
        ll: ll - n * sigma.ln(),
        g: [s1 / sigma, (s2 - n) / sigma],
        h: [-2.0 * q / s2_, -(2.0 * qz + s1) / s2_, -(2.0 * qzz + 2.0 * s2 - n) / s2_],
    }
}

/// Logistic-distribution MLE by damped two-dimensional Newton.
fn logistic_mle(y: &[f64], seed: Option<(f64, f64)>) -> Option<LogisticFit> {
    let (mut mu, mut sigma) = seed.unwrap_or_else(|| {
        let (m, sd) = log_moments(y.iter().copied());
        (m, sd * 3f64.sqrt() / PI)
    });
    if !(sigma > 0.0) {
        return None;
    }
    let n = y.len() as f64;
    let mut cur = logistic_eval(y, mu, sigma);
    for _ in 0..MAX_NEWTON {
        let [g1, g2] = cur.g;
        let [h11, h12, h22] = cur.h;
        let det = h11 * h22 - h12 * h12;
        let (d1, d2) = if h11 < 0.0 && det > 0.0 {
            ((-h22 * g1 + h12 * g2) / det, (h12 * g1 - h11 * g2) / det)
        } else {
            let step = sigma * sigma / n;
            (g1 * step, g2 * step)
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let (m2, s2) = (mu + t * d1, sigma + t * d2);
            if s2 > 0.0 {
                let ev = logistic_eval(y, m2, s2);
                if ev.ll >= cur.ll - 1e-12 * cur.ll.abs() {
                    accepted = Some((m2, s2, ev));
                    break;
                }
            }
            t *= 0.5;
        }
        let (m2, s2, ev) = accepted?;
        let done = (m2 - mu).abs() <= 1e-11 * (1.0 + mu.abs()) && (s2 - sigma).abs() <= 1e-11 * sigma;
        mu = m2;
        sigma = s2;
        cur = ev;
        if done {
            return Some(LogisticFit { mu, sigma, loglik: cur.ll });
        }
    }
    None
}

/// Maximizes a threshold profile log-likelihood over a grid below the data
/// minimum, then refines around the best grid point by golden section.
/// `eval` receives the threshold and the previous solution as a warm start.
fn threshold_search<F>(s: &Summary, family: DistFamily, mut eval: F) -> Result<DistParams, DistError>
where
    F: FnMut(f64, Option<&DistParams>) -> Option<(f64, DistParams)>,
{
    let range = s.max - s.min;
    let lo = s.min - range;
    let hi = s.min - 1e-6 * range;
    let step = (hi - lo) / (THRESHOLD_GRID - 1) as f64;
    let grid: Vec<f64> = (0..THRESHOLD_GRID).map(|i| lo + step * i as f64).collect();

    let mut best: Option<(usize, f64, DistParams)> = None;
    let mut warm: Option<DistParams> = None;
    for (i, &t) in grid.iter().enumerate() {
        if let Some((ll, p)) = eval(t, warm.as_ref()) {
            warm = Some(p);
            if ll.is_finite() && best.as_ref().is_none_or(|b| ll > b.1) {
                best = Some((i, ll, p));
            }
        }
    }
    let (bi, mut best_ll, mut best_p) = best.ok_or(DistError::NoConvergence(family))?;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = grid[bi.saturating_sub(1)];
    let mut b = grid[(bi + 1).min(THRESHOLD_GRID - 1)];
    let mut seed = best_p;
    let mut probe = |t: f64, seed: &mut DistParams| -> f64 {
        match eval(t, Some(seed)) {
            Some((ll, p)) if ll.is_finite() => {
                *seed = p;
                if ll > best_ll {
                    best_ll = ll;
                    best_p = p;
                }
                ll
            }
            _ => f64::NEG_INFINITY,
        }
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = probe(c, &mut seed);
    let mut fd = probe(d, &mut seed);
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-12 * range {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = probe(c, &mut seed);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = probe(d, &mut seed);
        }
    }
    Ok(best_p)
}

fn shifted_logs(data: &[f64], t: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(data.iter().map(|x| (x - t).ln()));
    buf.iter().sum()
}

fn fit_lognormal3(data: &[f64], s: &Summary) -> Result<DistParams, DistError> {
    let mut buf = Vec::with_capacity(data.len());
    threshold_search(s, DistFamily::Lognormal3, |t, _| {
        let sum_ly = shifted_logs(data, t, &mut buf);
        let (location, scale) = log_moments(buf.iter().copied());
        if !(scale > 0.0) {
            return None;
        }
        let ll = -0.5 * s.n * ((2.0 * PI * scale * scale).ln() + 1.0) - sum_ly;
        Some((ll, DistParams::Lognormal3 { location, scale, threshold: t }))
    })
}

fn fit_loglogistic3(data: &[f64], s: &Summary) -> Result<DistParams, DistError> {
    let mut buf = Vec::with_capacity(data.len());
    threshold_search(s, DistFamily::Loglogistic3, |t, warm| {
        let sum_ly = shifted_logs(data, t, &mut buf);
        let seed = match warm {
            Some(DistParams::Loglogistic3 { location, scale, .. }) => Some((*location, *scale)),
            _ => None,
        };
        let f = logistic_mle(&buf, seed).or_else(|| logistic_mle(&buf, None))?;
        Some((
            f.loglik - sum_ly,
            DistParams::Loglogistic3 { location: f.mu, scale: f.sigma, threshold: t },
        ))
    })
}

fn fit_weibull3(data: &[f64], s: &Summary) -> Result<DistParams, DistError> {
    let mut buf = Vec::with_capacity(data.len());
    threshold_search(s, DistFamily::Weibull3, |t, warm| {
        shifted_logs(data, t, &mut buf);
        let f = weibull_profile(&buf, warm.and_then(DistParams::shape))?;
        Some((f.loglik, DistParams::Weibull3 { shape: f.shape, scale: f.scale, threshold: t }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfit::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn draw(p: DistParams, n: usize, seed: u64) -> Vec<f64> {
        sample(&p, &mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            fit_mle(DistFamily::Normal, &[1.0; 10]),
            Err(DistError::TooFewSamples { n: 10, .. })
        ));
        assert!(matches!(fit_mle(DistFamily::Gamma, &[7.0; 50]), Err(DistError::DegenerateData)));
        let mut d: Vec<f64> = (1..=40).map(f64::from).collect();
        d[3] = -1.0;
        assert!(matches!(fit_mle(DistFamily::Weibull, &d), Err(DistError::NonPositiveData(_))));
        assert!(fit_mle(DistFamily::Weibull3, &d).is_ok());
        d[3] = f64::NAN;
        assert!(matches!(fit_mle(DistFamily::Normal, &d), Err(DistError::NonFiniteData)));
    }

    #[test]
    fn normal_recovery() {
        let d = draw(DistParams::Normal { location: 5.0, scale: 2.0 }, 100_000, 1);
        let DistParams::Normal { location, scale } = fit_mle(DistFamily::Normal, &d).unwrap() else {
            unreachable!()
        };
        assert!((location - 5.0).abs() < 0.02);
        assert!((scale - 2.0).abs() < 0.02);
    }

    #[test]
    fn two_parameter_closure() {
        let cases = [
            DistParams::Gamma { shape: 4.63062, scale: 43.16537 },
            DistParams::Gamma { shape: 0.7, scale: 10.0 },
            DistParams::Lognormal { location: 5.20964, scale: 0.46166 },
            DistParams::Weibull { shape: 2.26, scale: 225.0 },
            DistParams::Weibull { shape: 0.8, scale: 3.0 },
            DistParams::Normal { location: 199.0, scale: 93.0 },
            DistParams::Exponential2 { scale: 50.0, threshold: 20.0 },
        ];
        for (i, truth) in cases.into_iter().enumerate() {
            let d = draw(truth, 100_000, 100 + i as u64);
            let fit = fit_mle(truth.family(), &d).unwrap();
            let pairs = [
                (fit.shape(), truth.shape()),
                (Some(fit.scale()), Some(truth.scale())),
                (fit.location(), truth.location()),
                (fit.threshold(), truth.threshold()),
            ];
            for (got, want) in pairs.into_iter().filter_map(|(g, w)| Some((g?, w?))) {
                assert!(rel(got, want) < 0.05, "{truth:?} -> {fit:?}");
            }
        }
    }

    #[test]
    fn exponential2_threshold_is_below_minimum() {
        let d = draw(DistParams::Exponential2 { scale: 5.0, threshold: 1.0 }, 200, 8);
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let fit = fit_mle(DistFamily::Exponential2, &d).unwrap();
        assert!(fit.threshold().unwrap() < min);
    }

    #[test]
    fn three_parameter_recovery() {
        let cases = [
            DistParams::Weibull3 { shape: 1.51208, scale: 158.33886, threshold: 56.63291 },
            DistParams::Lognormal3 { location: 5.0, scale: 0.35, threshold: 40.0 },
            DistParams::Loglogistic3 { location: 5.0, scale: 0.2, threshold: 40.0 },
        ];
        for (i, truth) in cases.into_iter().enumerate() {
            let d = draw(truth, 50_000, 200 + i as u64);
            let fit = fit_mle(truth.family(), &d).unwrap();
            let (tf, tt) = (fit.threshold().unwrap(), truth.threshold().unwrap());
            assert!((tf - tt).abs() < 0.15 * truth.mean(), "{truth:?} -> {fit:?}");
            assert!(rel(fit.mean(), truth.mean()) < 0.02, "{truth:?} -> {fit:?}");
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(tf < min);
        }
    }

    #[test]
    fn three_parameter_fit_beats_two_parameter_likelihood() {
        let d = draw(DistParams::Lognormal3 { location: 4.0, scale: 0.4, threshold: 100.0 }, 5_000, 9);
        let two = fit_mle(DistFamily::Lognormal, &d).unwrap();
        let three = fit_mle(DistFamily::Lognormal3, &d).unwrap();
        let ll = |p: &DistParams| d.iter().map(|&x| p.ln_pdf_unchecked(x)).sum::<f64>();
        assert!(ll(&three) > ll(&two));
    }

    #[test]
    fn logistic_newton_matches_gradient_zero() {
        let d = draw(DistParams::Loglogistic3 { location: 1.0, scale: 0.5, threshold: 0.0 }, 20_000, 4);
        let y: Vec<f64> = d.iter().map(|x| x.ln()).collect();
        let f = logistic_mle(&y, None).unwrap();
        let ev = logistic_eval(&y, f.mu, f.sigma);
        assert!(ev.g[0].abs() < 1e-6 && ev.g[1].abs() < 1e-6);
        assert!((f.mu - 1.0).abs() < 0.02 && (f.sigma - 0.5).abs() < 0.02);
    }
}
