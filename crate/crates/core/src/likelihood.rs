//! Poisson and generalized Poisson count likelihoods, plus the truncated
//! normal densities used as priors throughout the models.
//!
//! The generalized Poisson has mass
//! `p(y | θ, λ) = θ (θ + λy)^(y-1) exp(-θ - λy) / y!`, with mean `θ/(1-λ)`
//! and variance `θ/(1-λ)^3`. For `λ < 0` the support ends where
//! `θ + λy ≤ 0`; mass beyond that point is zero and the remaining masses are
//! not renormalized, so the total can deviate slightly from one. Inside the
//! usual operating regime (`θ ≥ 5`, `λ ≥ -0.5`) the deficit stays below 1%.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
fn ln_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

/// Parameters of a generalized Poisson distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenPoissonParams {
    theta: f64,
    lambda: f64,
}

impl GenPoissonParams {
    /// Strict constructor: `θ > 0` and `max(-1, -θ/4) ≤ λ ≤ 1`.
    pub fn new(theta: f64, lambda: f64) -> Result<Self> {
        let p = Self::relaxed(theta, lambda)?;
        if lambda < -theta / 4.0 {
            return Err(Error::Domain(format!(
                "dispersion {lambda} below -theta/4 = {}",
                -theta / 4.0
            )));
        }
        Ok(p)
    }

    /// Only enforces `θ > 0` and `λ ∈ [-1, 1]`.
    ///
    /// Inside the models `θ = exp(f_t)` changes every day while `λ` is shared,
    /// so the `-θ/4` bound cannot be imposed through the parameterization.
    /// Points where `θ + λy ≤ 0` simply get zero mass.
    pub fn relaxed(theta: f64, lambda: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::Domain(format!(
                "theta must be positive and finite, got {theta}"
            )));
        }
        if !(-1.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!(
                "lambda must lie in [-1, 1], got {lambda}"
            )));
        }
        Ok(Self { theta, lambda })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Log of the Poisson mass `θ^y e^{-θ} / y!`.
pub fn poisson_logpmf(y: u64, theta: f64) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Domain(format!(
            "theta must be positive and finite, got {theta}"
        )));
    }
    Ok(y as f64 * theta.ln() - theta - ln_factorial(y))
}

/// Log of the generalized Poisson mass; `-∞` outside the truncated support.
pub fn genpoisson_logpmf(y: u64, p: &GenPoissonParams) -> f64 {
    let (theta, lambda) = (p.theta, p.lambda);
    if y == 0 {
        return -theta;
    }
    let yf = y as f64;
    let shifted = theta + lambda * yf;
    if shifted <= 0.0 {
        return f64::NEG_INFINITY;
    }
    theta.ln() + (yf - 1.0) * shifted.ln() - shifted - ln_factorial(y)
}

/// Partial derivatives of [`genpoisson_logpmf`] with respect to `(θ, λ)`.
pub fn genpoisson_grad_logpmf(y: u64, p: &GenPoissonParams) -> Result<(f64, f64)> {
    let yf = y as f64;
    let shifted = p.theta + p.lambda * yf;
    if shifted <= 0.0 {
        return Err(Error::Domain(format!(
            "y={y} lies outside the support for theta={}, lambda={}",
            p.theta, p.lambda
        )));
    }
    let d_theta = 1.0 / p.theta + (yf - 1.0) / shifted - 1.0;
    let d_lambda = yf * (yf - 1.0) / shifted - yf;
    Ok((d_theta, d_lambda))
}

/// `(mean, variance)` of the generalized Poisson.
pub fn genpoisson_mean_var(p: &GenPoissonParams) -> Result<(f64, f64)> {
    if p.lambda >= 1.0 {
        return Err(Error::Domain("moments diverge at lambda = 1".into()));
    }
    let q = 1.0 - p.lambda;
    Ok((p.theta / q, p.theta / (q * q * q)))
}

/// Outcome of an inversion draw that is allowed to saturate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InversionDraw {
    pub value: u64,
    /// Set when the accumulated CDF never reached `u`, either because the
    /// support ended (λ < 0) or because the cap was hit, and when the
    /// normal approximation was used.
    pub saturated: bool,
}

/// Largest count the inversion sampler will visit: `10 (mean + 20 sd)`.
pub fn inversion_cap(p: &GenPoissonParams) -> u64 {
    match genpoisson_mean_var(p) {
        Ok((m, v)) => {
            let cap = 10.0 * (m + 20.0 * v.sqrt());
            if cap.is_finite() && cap < u64::MAX as f64 / 2.0 {
                cap.ceil().max(1.0) as u64
            } else {
                u64::MAX / 2
            }
        }
        Err(_) => u64::MAX / 2,
    }
}

/// First support point worth visiting: mass below `mean - 40 sd` is far
/// below double precision, and skipping it keeps draws at large rates
/// `O(sd)` instead of `O(mean)`.
fn accumulation_start(p: &GenPoissonParams) -> u64 {
    match genpoisson_mean_var(p) {
        Ok((m, v)) if m - 40.0 * v.sqrt() > 1.0 => (m - 40.0 * v.sqrt()).floor() as u64,
        _ => 0,
    }
}

/// Variance beyond which a draw uses the normal quantile instead of walking
/// the CDF. Such rates only arise from explosive forecast paths; walking
/// would take `O(sd)` steps per draw.
pub const NORMAL_APPROX_VARIANCE: f64 = 1e6;

/// Inversion sampling that never fails: saturation returns the last visited
/// support point and sets a flag. Rates with variance above
/// [`NORMAL_APPROX_VARIANCE`] get the normal quantile, also flagged.
pub fn genpoisson_draw(p: &GenPoissonParams, u: f64) -> InversionDraw {
    if let Ok((m, v)) = genpoisson_mean_var(p) {
        if v > NORMAL_APPROX_VARIANCE {
            let z = Normal::standard().inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
            return InversionDraw {
                value: (m + v.sqrt() * z).round().clamp(0.0, u64::MAX as f64 / 2.0) as u64,
                saturated: true,
            };
        }
    }
    let cap = inversion_cap(p);
    let mut cdf = 0.0;
    let mut y = accumulation_start(p);
    let mut last = y;
    loop {
        let lp = genpoisson_logpmf(y, p);
        if lp == f64::NEG_INFINITY && p.lambda < 0.0 {
            // end of the truncated support
            return InversionDraw {
                value: last,
                saturated: true,
            };
        }
        cdf += lp.exp();
        last = y;
        if cdf >= u {
            return InversionDraw {
                value: y,
                saturated: false,
            };
        }
        if y >= cap {
            return InversionDraw {
                value: y,
                saturated: true,
            };
        }
        y += 1;
    }
}

/// Smallest `y` with `CDF(y) ≥ u`, accumulating the CDF term by term.
pub fn genpoisson_sample(p: &GenPoissonParams, u: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!(
            "uniform draw must lie in [0, 1), got {u}"
        )));
    }
    let draw = genpoisson_draw(p, u);
    if draw.saturated {
        let mass: f64 = (0..=draw.value)
            .map(|y| genpoisson_logpmf(y, p).exp())
            .sum();
        return Err(Error::Saturated {
            cap: draw.value,
            mass,
            target: u,
        });
    }
    Ok(draw.value)
}

/// Normal prior restricted to `[lower, upper]`; either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalPrior {
    pub mean: f64,
    pub stddev: f64,
    pub lower: f64,
    pub upper: f64,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl TruncNormalPrior {
    pub fn new(mean: f64, stddev: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(stddev.is_finite() && stddev > 0.0) {
            return Err(Error::Domain(format!(
                "stddev must be positive, got {stddev}"
            )));
        }
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::Domain(format!(
                "need lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            mean,
            stddev,
            lower,
            upper,
        })
    }

    pub fn normal(mean: f64, stddev: f64) -> Result<Self> {
        Self::new(mean, stddev, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// `|N(0, s²)|`.
    pub fn half_normal(stddev: f64) -> Result<Self> {
        Self::new(0.0, stddev, 0.0, f64::INFINITY)
    }

    /// Log of the normal mass inside `[lower, upper]`.
    pub fn log_mass(&self) -> f64 {
        let a = (self.lower - self.mean) / self.stddev;
        let b = (self.upper - self.mean) / self.stddev;
        // work in whichever tail keeps the difference well conditioned
        let mass = if a > 0.0 {
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        };
        mass.ln()
    }

    /// Mean of the truncated distribution.
    pub fn mean_value(&self) -> f64 {
        let a = (self.lower - self.mean) / self.stddev;
        let b = (self.upper - self.mean) / self.stddev;
        let phi = |z: f64| {
            if z.is_finite() {
                (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
            } else {
                0.0
            }
        };
        self.mean + self.stddev * (phi(a) - phi(b)) / self.log_mass().exp()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Derivative of the log density inside the support.
    pub fn dlogpdf(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.stddev * self.stddev)
    }
}

/// Log density of the truncated normal; `-∞` outside the bounds.
pub fn truncnormal_logpdf(x: f64, prior: &TruncNormalPrior) -> f64 {
    if !prior.contains(x) {
        return f64::NEG_INFINITY;
    }
    let z = (x - prior.mean) / prior.stddev;
    -0.5 * z * z - prior.stddev.ln() - LN_SQRT_2PI - prior.log_mass()
}

/// Log density of `N(mean, sd²)`.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}
