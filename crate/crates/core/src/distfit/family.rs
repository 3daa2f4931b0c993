use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::special::{gamma_p, ln_gamma, norm_cdf, norm_quantile};
use super::DistError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistFamily {
    Gamma,
    Lognormal,
    Lognormal3,
    Loglogistic3,
    Weibull,
    Weibull3,
    Normal,
    Exponential2,
}

impl DistFamily {
    pub const ALL: [DistFamily; 8] = [
        DistFamily::Gamma,
        DistFamily::Lognormal,
        DistFamily::Lognormal3,
        DistFamily::Loglogistic3,
        DistFamily::Weibull,
        DistFamily::Weibull3,
        DistFamily::Normal,
        DistFamily::Exponential2,
    ];

    pub fn n_params(self) -> usize {
        match self {
            DistFamily::Lognormal3 | DistFamily::Loglogistic3 | DistFamily::Weibull3 => 3,
            _ => 2,
        }
    }

    /// Families whose support is bounded below by zero rather than a fitted threshold.
    pub fn positive_support(self) -> bool {
        matches!(self, DistFamily::Gamma | DistFamily::Lognormal | DistFamily::Weibull)
    }

    pub fn key(self) -> &'static str {
        match self {
            DistFamily::Gamma => "gamma",
            DistFamily::Lognormal => "lognormal",
            DistFamily::Lognormal3 => "lognormal3",
            DistFamily::Loglogistic3 => "loglogistic3",
            DistFamily::Weibull => "weibull",
            DistFamily::Weibull3 => "weibull3",
            DistFamily::Normal => "normal",
            DistFamily::Exponential2 => "exponential2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DistFamily::Gamma => "Gamma",
            DistFamily::Lognormal => "Lognormal",
            DistFamily::Lognormal3 => "3-Par Lognormal",
            DistFamily::Loglogistic3 => "3-Par Loglogistic",
            DistFamily::Weibull => "Weibull",
            DistFamily::Weibull3 => "3-Par Weibull",
            DistFamily::Normal => "Normal",
            DistFamily::Exponential2 => "2-Par Exponential",
        }
    }
}

impl fmt::Display for DistFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DistFamily {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, DistError> {
        let k = s.trim().to_ascii_lowercase();
        DistFamily::ALL
            .into_iter()
            .find(|f| f.key() == k)
            .ok_or_else(|| DistError::UnknownFamily(s.to_string()))
    }
}

/// Parameters of one fitted or configured family.
///
/// `location` is the log-scale location for the lognormal and loglogistic
/// families and the mean for the normal; `scale` is the log-scale spread
/// for those same families and the standard deviation for the normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistParams {
    Gamma { shape: f64, scale: f64 },
    Lognormal { location: f64, scale: f64 },
    Lognormal3 { location: f64, scale: f64, threshold: f64 },
    Loglogistic3 { location: f64, scale: f64, threshold: f64 },
    Weibull { shape: f64, scale: f64 },
    Weibull3 { shape: f64, scale: f64, threshold: f64 },
    Normal { location: f64, scale: f64 },
    Exponential2 { scale: f64, threshold: f64 },
}

impl DistParams {
    pub fn family(&self) -> DistFamily {
        match self {
            DistParams::Gamma { .. } => DistFamily::Gamma,
            DistParams::Lognormal { .. } => DistFamily::Lognormal,
            DistParams::Lognormal3 { .. } => DistFamily::Lognormal3,
            DistParams::Loglogistic3 { .. } => DistFamily::Loglogistic3,
            DistParams::Weibull { .. } => DistFamily::Weibull,
            DistParams::Weibull3 { .. } => DistFamily::Weibull3,
            DistParams::Normal { .. } => DistFamily::Normal,
            DistParams::Exponential2 { .. } => DistFamily::Exponential2,
        }
    }

    pub fn shape(&self) -> Option<f64> {
        match *self {
            DistParams::Gamma { shape, .. } | DistParams::Weibull { shape, .. } | DistParams::Weibull3 { shape, .. } => {
                Some(shape)
            }
            _ => None,
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            DistParams::Gamma { scale, .. }
            | DistParams::Lognormal { scale, .. }
            | DistParams::Lognormal3 { scale, .. }
            | DistParams::Loglogistic3 { scale, .. }
            | DistParams::Weibull { scale, .. }
            | DistParams::Weibull3 { scale, .. }
            | DistParams::Normal { scale, .. }
            | DistParams::Exponential2 { scale, .. } => scale,
        }
    }

    pub fn location(&self) -> Option<f64> {
        match *self {
            DistParams::Lognormal { location, .. }
            | DistParams::Lognormal3 { location, .. }
            | DistParams::Loglogistic3 { location, .. }
            | DistParams::Normal { location, .. } => Some(location),
            _ => None,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            DistParams::Lognormal3 { threshold, .. }
            | DistParams::Loglogistic3 { threshold, .. }
            | DistParams::Weibull3 { threshold, .. }
            | DistParams::Exponential2 { threshold, .. } => Some(threshold),
            _ => None,
        }
    }

    /// Infimum of the support; `-inf` for the normal.
    pub fn support_min(&self) -> f64 {
        match self.family() {
            DistFamily::Normal => f64::NEG_INFINITY,
            f if f.positive_support() => 0.0,
            _ => self.threshold().unwrap_or(0.0),
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        x.is_finite() && (self.family() == DistFamily::Normal || x > self.support_min())
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let finite = [Some(self.scale()), self.shape(), self.location(), self.threshold()]
            .into_iter()
            .flatten()
            .all(f64::is_finite);
        let positive = self.scale() > 0.0 && self.shape().is_none_or(|s| s > 0.0);
        if finite && positive {
            Ok(())
        } else {
            Err(DistError::BadParams(*self))
        }
    }

    pub fn pdf(&self, x: f64) -> Result<f64, DistError> {
        if !self.in_support(x) {
            return Err(DistError::OutOfSupport { x, params: *self });
        }
        Ok(self.ln_pdf_unchecked(x).exp())
    }

    /// Log density for `x` inside the support.
    pub(crate) fn ln_pdf_unchecked(&self, x: f64) -> f64 {
        match *self {
            DistParams::Gamma { shape, scale } => {
                (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
            }
            DistParams::Lognormal { location, scale } => lognormal_ln_pdf(x, location, scale),
            DistParams::Lognormal3 { location, scale, threshold } => {
                lognormal_ln_pdf(x - threshold, location, scale)
            }
            DistParams::Loglogistic3 { location, scale, threshold } => {
                let y = (x - threshold).ln();
                let z = (y - location) / scale;
                // log of e^{-z} / (σ (1 + e^{-z})²), written to avoid overflow
                -z.abs() - 2.0 * (-z.abs()).exp().ln_1p() - scale.ln() - y
            }
            DistParams::Weibull { shape, scale } => weibull_ln_pdf(x, shape, scale),
            DistParams::Weibull3 { shape, scale, threshold } => weibull_ln_pdf(x - threshold, shape, scale),
            DistParams::Normal { location, scale } => {
                let z = (x - location) / scale;
                -0.5 * z * z - scale.ln() - 0.5 * (2.0 * PI).ln()
            }
            DistParams::Exponential2 { scale, threshold } => -(x - threshold) / scale - scale.ln(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        if self.family() != DistFamily::Normal && x <= self.support_min() {
            return 0.0;
        }
        match *self {
            DistParams::Gamma { shape, scale } => gamma_p(shape, x / scale),
            DistParams::Lognormal { location, scale } => norm_cdf((x.ln() - location) / scale),
            DistParams::Lognormal3 { location, scale, threshold } => {
                norm_cdf(((x - threshold).ln() - location) / scale)
            }
            DistParams::Loglogistic3 { location, scale, threshold } => {
                let z = ((x - threshold).ln() - location) / scale;
                1.0 / (1.0 + (-z).exp())
            }
            DistParams::Weibull { shape, scale } => -(-(x / scale).powf(shape)).exp_m1(),
            DistParams::Weibull3 { shape, scale, threshold } => {
                -(-((x - threshold) / scale).powf(shape)).exp_m1()
            }
            DistParams::Normal { location, scale } => norm_cdf((x - location) / scale),
            DistParams::Exponential2 { scale, threshold } => -(-(x - threshold) / scale).exp_m1(),
        }
    }

    /// Inverse cdf for `0 < p < 1`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.support_min();
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        match *self {
            DistParams::Gamma { shape, scale } => gamma_quantile(shape, p) * scale,
            DistParams::Lognormal { location, scale } => (location + scale * norm_quantile(p)).exp(),
            DistParams::Lognormal3 { location, scale, threshold } => {
                threshold + (location + scale * norm_quantile(p)).exp()
            }
            DistParams::Loglogistic3 { location, scale, threshold } => {
                threshold + (location + scale * (p / (1.0 - p)).ln()).exp()
            }
            DistParams::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            DistParams::Weibull3 { shape, scale, threshold } => {
                threshold + scale * (-(-p).ln_1p()).powf(1.0 / shape)
            }
            DistParams::Normal { location, scale } => location + scale * norm_quantile(p),
            DistParams::Exponential2 { scale, threshold } => threshold - scale * (-p).ln_1p(),
        }
    }

    /// One draw. Gamma uses the Marsaglia-Tsang squeeze method, boosted by
    /// `U^{1/shape}` when the shape is below one.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistParams::Gamma { shape, scale } => standard_gamma(shape, rng) * scale,
            DistParams::Lognormal { location, scale } => {
                let z: f64 = rng.sample(StandardNormal);
                (location + scale * z).exp()
            }
            DistParams::Lognormal3 { location, scale, threshold } => {
                let z: f64 = rng.sample(StandardNormal);
                threshold + (location + scale * z).exp()
            }
            DistParams::Loglogistic3 { location, scale, threshold } => {
                let u: f64 = rng.sample(Open01);
                threshold + (location + scale * (u / (1.0 - u)).ln()).exp()
            }
            DistParams::Weibull { shape, scale } => {
                let e: f64 = rng.sample(Exp1);
                scale * e.powf(1.0 / shape)
            }
            DistParams::Weibull3 { shape, scale, threshold } => {
                let e: f64 = rng.sample(Exp1);
                threshold + scale * e.powf(1.0 / shape)
            }
            DistParams::Normal { location, scale } => {
                let z: f64 = rng.sample(StandardNormal);
                location + scale * z
            }
            DistParams::Exponential2 { scale, threshold } => {
                let e: f64 = rng.sample(Exp1);
                threshold + scale * e
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistParams::Gamma { shape, scale } => shape * scale,
            DistParams::Lognormal { location, scale } => (location + 0.5 * scale * scale).exp(),
            DistParams::Lognormal3 { location, scale, threshold } => threshold + (location + 0.5 * scale * scale).exp(),
            DistParams::Loglogistic3 { location, scale, threshold } => {
                if scale >= 1.0 {
                    f64::INFINITY
                } else {
                    threshold + location.exp() * PI * scale / (PI * scale).sin()
                }
            }
            DistParams::Weibull { shape, scale } => scale * (ln_gamma(1.0 + 1.0 / shape)).exp(),
            DistParams::Weibull3 { shape, scale, threshold } => threshold + scale * (ln_gamma(1.0 + 1.0 / shape)).exp(),
            DistParams::Normal { location, .. } => location,
            DistParams::Exponential2 { scale, threshold } => threshold + scale,
        }
    }
}

fn lognormal_ln_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let y = x.ln();
    let z = (y - mu) / sigma;
    -0.5 * z * z - y - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

fn weibull_ln_pdf(x: f64, k: f64, lambda: f64) -> f64 {
    let u = x / lambda;
    k.ln() - lambda.ln() + (k - 1.0) * u.ln() - u.powf(k)
}

fn standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.sample(Open01);
        return standard_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Quantile of the unit-scale gamma by safeguarded Newton iteration on P.
fn gamma_quantile(shape: f64, p: f64) -> f64 {
    // Wilson-Hilferty starting point
    let z = norm_quantile(p);
    let t = 1.0 - 1.0 / (9.0 * shape) + z / (9.0 * shape).sqrt();
    let mut x = (shape * t * t * t).max(1e-8);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..200 {
        let f = gamma_p(shape, x) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp();
        let mut next = if dens > 0.0 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(lo) + 1.0 };
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}
