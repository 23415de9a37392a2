//! Log-density and sampling kernels for the distribution families used by the
//! disease, measurement and exposure models.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("{family}: parameter `{param}` must be finite and positive, got {value}")]
    NonPositive {
        family: &'static str,
        param: &'static str,
        value: f64,
    },
    #[error("{family}: parameter `{param}` must be finite, got {value}")]
    NonFinite {
        family: &'static str,
        param: &'static str,
        value: f64,
    },
    #[error("scaled_beta: lower bound {lo} must be below upper bound {up}")]
    EmptySupport { lo: f64, up: f64 },
}

/// A validated distribution. Construct through the checked constructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    /// Normal restricted to (0, ∞) and renormalised.
    TruncatedNormalPositive { mean: f64, sd: f64 },
    /// `exp(N(log_mean, log_sd²))`.
    Lognormal { log_mean: f64, log_sd: f64 },
    /// Shape/scale parameterisation, mean `shape * scale`.
    Gamma { shape: f64, scale: f64 },
    /// `lo + (up - lo) * Beta(a, b)`.
    ScaledBeta { lo: f64, up: f64, a: f64, b: f64 },
}

fn positive(family: &'static str, param: &'static str, value: f64) -> Result<(), DistError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DistError::NonPositive {
            family,
            param,
            value,
        })
    }
}

fn finite(family: &'static str, param: &'static str, value: f64) -> Result<(), DistError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(DistError::NonFinite {
            family,
            param,
            value,
        })
    }
}

impl DistSpec {
    pub fn normal(mean: f64, sd: f64) -> Result<Self, DistError> {
        finite("normal", "mean", mean)?;
        positive("normal", "sd", sd)?;
        Ok(DistSpec::Normal { mean, sd })
    }

    pub fn truncated_normal_positive(mean: f64, sd: f64) -> Result<Self, DistError> {
        finite("truncated_normal_positive", "mean", mean)?;
        positive("truncated_normal_positive", "sd", sd)?;
        Ok(DistSpec::TruncatedNormalPositive { mean, sd })
    }

    pub fn lognormal(log_mean: f64, log_sd: f64) -> Result<Self, DistError> {
        finite("lognormal", "log_mean", log_mean)?;
        positive("lognormal", "log_sd", log_sd)?;
        Ok(DistSpec::Lognormal { log_mean, log_sd })
    }

    /// Log-normal with log-mean `-σ²/2`, i.e. a multiplicative error with
    /// expectation one.
    pub fn unit_mean_lognormal(log_sd: f64) -> Result<Self, DistError> {
        positive("lognormal", "log_sd", log_sd)?;
        Ok(DistSpec::Lognormal {
            log_mean: -0.5 * log_sd * log_sd,
            log_sd,
        })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, DistError> {
        positive("gamma", "shape", shape)?;
        positive("gamma", "scale", scale)?;
        Ok(DistSpec::Gamma { shape, scale })
    }

    pub fn scaled_beta(lo: f64, up: f64, a: f64, b: f64) -> Result<Self, DistError> {
        finite("scaled_beta", "lo", lo)?;
        finite("scaled_beta", "up", up)?;
        if lo >= up {
            return Err(DistError::EmptySupport { lo, up });
        }
        positive("scaled_beta", "a", a)?;
        positive("scaled_beta", "b", b)?;
        Ok(DistSpec::ScaledBeta { lo, up, a, b })
    }

    /// Closed support interval `(lower, upper)`; open ends are infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistSpec::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DistSpec::TruncatedNormalPositive { .. }
            | DistSpec::Lognormal { .. }
            | DistSpec::Gamma { .. } => (0.0, f64::INFINITY),
            DistSpec::ScaledBeta { lo, up, .. } => (lo, up),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => normal_ln_pdf(x, mean, sd),
            DistSpec::TruncatedNormalPositive { mean, sd } => {
                truncated_normal_positive_ln_pdf(x, mean, sd)
            }
            DistSpec::Lognormal { log_mean, log_sd } => lognormal_ln_pdf(x, log_mean, log_sd),
            DistSpec::Gamma { shape, scale } => gamma_ln_pdf(x, shape, scale),
            DistSpec::ScaledBeta { lo, up, a, b } => scaled_beta_ln_pdf(x, lo, up, a, b),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            DistSpec::TruncatedNormalPositive { mean, sd } => {
                sample_truncated_normal_positive(mean, sd, rng)
            }
            DistSpec::Lognormal { log_mean, log_sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (log_mean + log_sd * z).exp()
            }
            DistSpec::Gamma { shape, scale } => Gamma::new(shape, scale)
                .expect("validated gamma parameters")
                .sample(rng),
            DistSpec::ScaledBeta { lo, up, a, b } => lo + (up - lo) * sample_beta(a, b, rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Normal { mean, .. } => mean,
            DistSpec::TruncatedNormalPositive { mean, sd } => {
                let alpha = -mean / sd;
                mean + sd * (normal_ln_pdf(alpha, 0.0, 1.0) - ln_norm_cdf(-alpha)).exp()
            }
            DistSpec::Lognormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
            DistSpec::Gamma { shape, scale } => shape * scale,
            DistSpec::ScaledBeta { lo, up, a, b } => lo + (up - lo) * a / (a + b),
        }
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > -30.0 {
        norm_cdf(z).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

pub fn truncated_normal_positive_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(x, mean, sd) - ln_norm_cdf(mean / sd)
}

pub fn lognormal_ln_pdf(x: f64, log_mean: f64, log_sd: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    normal_ln_pdf(lx, log_mean, log_sd) - lx
}

pub fn gamma_ln_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

pub fn scaled_beta_ln_pdf(x: f64, lo: f64, up: f64, a: f64, b: f64) -> f64 {
    if x.is_nan() || x <= lo || x >= up {
        return f64::NEG_INFINITY;
    }
    let width = up - lo;
    let u = (x - lo) / width;
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b)
        - width.ln()
}

/// Inverse-CDF draw on the positive half line.
///
/// Uses `x = μ − σ Φ⁻¹(v Φ(μ/σ))` with `v ~ U(0, 1]`, which stays accurate when
/// almost all of the untruncated mass lies below zero.
pub fn sample_truncated_normal_positive<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let upper_mass = norm_cdf(mean / sd);
    // v in (0, 1]
    let v = 1.0 - rng.random::<f64>();
    let x = mean - sd * norm_quantile(v * upper_mass);
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let x = Gamma::new(a, 1.0).expect("validated beta shape").sample(rng);
    let y = Gamma::new(b, 1.0).expect("validated beta shape").sample(rng);
    x / (x + y)
}

/// Moment-matched log-normal: the log-normal with mean `mean` and standard
/// deviation `sd`. Returns `None` when `mean` or `sd` is not positive.
pub fn moment_matched_lognormal(mean: f64, sd: f64) -> Option<(f64, f64)> {
    if !(mean > 0.0 && sd > 0.0) {
        return None;
    }
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    Some((mean.ln() - 0.5 * s2, s2.sqrt()))
}
