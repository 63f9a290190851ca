//! Asymmetric-Laplace quantile mathematics.
//!
//! The ALD used throughout has density
//! `f(y | mu, sigma, tau) = tau (1 - tau) / sigma * exp{-rho_tau((y - mu) / sigma)}`
//! where `rho_tau` is the check loss. Its location `mu` is the `tau`-quantile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::RngStream;

/// Below this value of `|1 - 2 tau|` the Hellinger distance uses its limit form.
pub const HELLINGER_MEDIAN_BRANCH: f64 = 1e-6;

/// A fixed quantile level and the constants of its normal-exponential mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileSpec {
    tau: f64,
    theta: f64,
    kappa: f64,
    xi: f64,
    zeta_num: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
        }
        let zeta_num = tau * (1.0 - tau);
        let xi = 1.0 - 2.0 * tau;
        Ok(Self {
            tau,
            theta: xi / zeta_num,
            kappa: (2.0 / zeta_num).sqrt(),
            xi,
            zeta_num,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Location coefficient of the latent exponential in the linear mixture form.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Scale coefficient of the Gaussian term in the linear mixture form.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `1 - 2 tau`, the drift of the latent scale in the network mixture form.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `tau (1 - tau)`; the exponential rate of the latent is this over sigma.
    pub fn zeta_num(&self) -> f64 {
        self.zeta_num
    }

    /// The quantile level `1 - tau`.
    pub fn mirrored(&self) -> Self {
        Self::new(1.0 - self.tau).expect("1 - tau lies in (0, 1)")
    }
}

impl TryFrom<f64> for QuantileSpec {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<QuantileSpec> for f64 {
    fn from(spec: QuantileSpec) -> f64 {
        spec.tau
    }
}

/// Check (pinball) loss `u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, spec: &QuantileSpec) -> f64 {
    if u < 0.0 {
        u * (spec.tau - 1.0)
    } else {
        u * spec.tau
    }
}

/// Derivative of the check loss; the subgradient at zero is taken as `tau`.
#[inline]
pub fn check_loss_derivative(u: f64, spec: &QuantileSpec) -> f64 {
    if u < 0.0 {
        spec.tau - 1.0
    } else {
        spec.tau
    }
}

/// Huber-smoothed check loss `(tau - 1/2) u + H_eps(u) / 2`, where `H_eps`
/// is `u^2 / (2 eps)` on `|u| <= eps` and `|u| - eps / 2` outside.
///
/// Continuously differentiable, convex, and within `eps / 4` of the exact
/// check loss everywhere.
#[inline]
pub fn smoothed_check_loss(u: f64, eps: f64, spec: &QuantileSpec) -> f64 {
    let a = u.abs();
    let huber = if a <= eps { u * u / (2.0 * eps) } else { a - 0.5 * eps };
    (spec.tau - 0.5) * u + 0.5 * huber
}

#[inline]
pub fn smoothed_check_loss_derivative(u: f64, eps: f64, spec: &QuantileSpec) -> f64 {
    let huber_d = if u.abs() <= eps { u / eps } else { u.signum() };
    (spec.tau - 0.5) + 0.5 * huber_d
}

/// Log density of ALD(mu, sigma, tau) at `y`.
pub fn ald_logpdf(y: f64, mu: f64, sigma: f64, spec: &QuantileSpec) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(spec.tau.ln() + (1.0 - spec.tau).ln() - sigma.ln() - check_loss((y - mu) / sigma, spec))
}

/// Monte Carlo estimate of a density value together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureEstimate {
    pub density: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

impl MixtureEstimate {
    pub fn log_density(&self) -> f64 {
        self.density.ln()
    }
}

/// Estimates the ALD density at `y` through its normal-exponential mixture:
/// the average of `N(y; mu + xi v, 2 sigma v)` over
/// `v ~ Exponential(mean sigma / (tau (1 - tau)))`.
pub fn ald_mixture_density_mc(
    y: f64,
    mu: f64,
    sigma: f64,
    spec: &QuantileSpec,
    n_draws: usize,
    seed: u64,
) -> Result<MixtureEstimate> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if n_draws == 0 {
        return Err(Error::Domain("n_draws must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, 0);
    let mean_v = sigma / spec.zeta_num;
    let inv_sqrt_4pi_sigma = 1.0 / (4.0 * std::f64::consts::PI * sigma).sqrt();
    // Welford accumulation keeps the variance stable for 1e6+ draws.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_draws {
        let v = mean_v * rng.std_exponential();
        let r = y - mu - spec.xi * v;
        let k = inv_sqrt_4pi_sigma / v.sqrt() * (-(r * r) / (4.0 * sigma * v)).exp();
        let delta = k - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (k - mean);
    }
    let std_error = if n_draws > 1 {
        (m2 / (n_draws - 1) as f64 / n_draws as f64).sqrt()
    } else {
        0.0
    };
    Ok(MixtureEstimate {
        density: mean,
        std_error,
        n_draws,
    })
}

/// Log of [`ald_mixture_density_mc`]'s estimate.
pub fn ald_mixture_logdensity_mc(
    y: f64,
    mu: f64,
    sigma: f64,
    spec: &QuantileSpec,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    Ok(ald_mixture_density_mc(y, mu, sigma, spec, n_draws, seed)?.log_density())
}

/// Closed-form Hellinger distance between ALD(mu1, 1, tau) and ALD(mu2, 1, tau).
pub fn hellinger_ald(mu1: f64, mu2: f64, spec: &QuantileSpec) -> f64 {
    let delta = (mu1 - mu2).abs();
    let tau = spec.tau;
    // One minus the Hellinger affinity, written with expm1 so that small gaps
    // do not cancel.
    let gap = if spec.xi.abs() < HELLINGER_MEDIAN_BRANCH {
        let x = delta / 4.0;
        -(-x).exp_m1() - x * (-x).exp()
    } else {
        (tau * (-delta * (1.0 - tau) / 2.0).exp_m1() - (1.0 - tau) * (-delta * tau / 2.0).exp_m1()) / spec.xi
    };
    (2.0 * gap).max(0.0).sqrt()
}
