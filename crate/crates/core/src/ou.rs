//! Ornstein-Uhlenbeck modelling of cumulative residuals.
//!
//! The residual process `dX = kappa (mu - X) dt + sigma dB` is fitted through
//! its exact AR(1) discretisation `X_{k+1} = phi0 + phi1 X_k + zeta`, with
//! `phi1 = exp(-kappa dt)` and `Var(zeta) = sigma_eq^2 (1 - phi1^2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::mean;
use crate::marketdata::TRADING_DAYS;

/// Minimum series length accepted by [`fit_ar1`].
pub const MIN_AR1_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Fit {
    pub phi0: f64,
    pub phi1: f64,
    /// Sample variance of the fitted innovations.
    pub resid_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    /// Mean-reversion speed, per year.
    pub kappa: f64,
    pub mu: f64,
    /// Volatility, per square-root year.
    pub sigma: f64,
    /// Equilibrium standard deviation `sigma / sqrt(2 kappa)`.
    pub sigma_eq: f64,
}

impl OuParams {
    pub fn new(kappa: f64, mu: f64, sigma: f64) -> Self {
        OuParams {
            kappa,
            mu,
            sigma,
            sigma_eq: sigma / (2.0 * kappa).sqrt(),
        }
    }

    /// AR(1) coefficients this process implies at step `dt`.
    pub fn exact_ar1(&self, dt: f64) -> Ar1Fit {
        let phi1 = (-self.kappa * dt).exp();
        Ar1Fit {
            phi0: self.mu * (1.0 - phi1),
            phi1,
            resid_var: self.sigma_eq * self.sigma_eq * (1.0 - phi1 * phi1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ar1Estimator {
    /// Lag-one sample autocorrelation (method of moments).
    #[default]
    YuleWalker,
    /// Least squares of `X_k` on `X_{k-1}`.
    Ols,
}

/// Fits an AR(1) model with the Yule-Walker moments.
pub fn fit_ar1(series: &[f64]) -> Result<Ar1Fit> {
    fit_ar1_with(series, Ar1Estimator::YuleWalker)
}

pub fn fit_ar1_with(series: &[f64], estimator: Ar1Estimator) -> Result<Ar1Fit> {
    if series.len() < MIN_AR1_LEN {
        return Err(Error::InsufficientWindow {
            needed: MIN_AR1_LEN,
            have: series.len(),
        });
    }
    let (phi0, phi1) = match estimator {
        Ar1Estimator::YuleWalker => {
            let m = mean(series);
            let gamma0: f64 = series.iter().map(|x| (x - m) * (x - m)).sum();
            if !(gamma0 > f64::EPSILON * f64::EPSILON * series.len() as f64 * m.abs().max(1.0)) {
                return Err(Error::DegenerateSeries);
            }
            let gamma1: f64 = series.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
            let phi1 = gamma1 / gamma0;
            (m * (1.0 - phi1), phi1)
        }
        Ar1Estimator::Ols => {
            let x = &series[..series.len() - 1];
            let y = &series[1..];
            let (mx, my) = (mean(x), mean(y));
            let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
            if !(sxx > f64::EPSILON * f64::EPSILON * x.len() as f64 * mx.abs().max(1.0)) {
                return Err(Error::DegenerateSeries);
            }
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let phi1 = sxy / sxx;
            (my - phi1 * mx, phi1)
        }
    };
    let zeta: Vec<f64> = series
        .windows(2)
        .map(|w| w[1] - phi0 - phi1 * w[0])
        .collect();
    let resid_var = crate::linalg::sample_variance(&zeta).max(0.0);
    Ok(Ar1Fit {
        phi0,
        phi1,
        resid_var,
    })
}

/// Maps AR(1) coefficients at step `dt` to OU parameters.
pub fn ar1_to_ou(fit: &Ar1Fit, dt: f64) -> Result<OuParams> {
    let phi1 = fit.phi1;
    if !(phi1 > 0.0 && phi1 < 1.0) {
        return Err(Error::NonMeanReverting(phi1));
    }
    let kappa = -phi1.ln() / dt;
    let mu = fit.phi0 / (1.0 - phi1);
    let sigma = (fit.resid_var * 2.0 * kappa / (1.0 - phi1 * phi1)).sqrt();
    Ok(OuParams::new(kappa, mu, sigma))
}

/// Normalised distance of `level` from the OU equilibrium.
pub fn s_score(level: f64, params: &OuParams) -> f64 {
    (level - params.mu) / params.sigma_eq
}

/// Average number of trading days needed to revert, `252 / kappa`.
pub fn mean_reversion_days(params: &OuParams) -> f64 {
    TRADING_DAYS / params.kappa
}

/// Exact-discretisation OU path of `n_steps + 1` points starting at `x0`.
pub fn simulate_ou(params: &OuParams, x0: f64, n_steps: usize, dt: f64, seed: u64) -> Vec<f64> {
    simulate_ou_with(params, x0, n_steps, dt, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_ou_with<R: Rng>(
    params: &OuParams,
    x0: f64,
    n_steps: usize,
    dt: f64,
    rng: &mut R,
) -> Vec<f64> {
    let decay = (-params.kappa * dt).exp();
    let shock = if params.sigma == 0.0 {
        0.0
    } else {
        params.sigma_eq * (1.0 - decay * decay).sqrt()
    };
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        x = params.mu + (x - params.mu) * decay + shock * z;
        out.push(x);
    }
    out
}

/// Sample autocorrelations and partial autocorrelations for lags `1..=max_lag`.
///
/// Index 0 of each vector is lag 0 (always 1.0).
pub fn acf_pacf(series: &[f64], max_lag: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = series.len();
    if max_lag == 0 || 2 * max_lag >= w {
        return Err(Error::InsufficientWindow {
            needed: 2 * max_lag + 1,
            have: w,
        });
    }
    let m = mean(series);
    let gamma = |lag: usize| -> f64 {
        series[lag..]
            .iter()
            .zip(series)
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
    };
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return Err(Error::DegenerateSeries);
    }
    let acf: Vec<f64> = (0..=max_lag).map(|k| gamma(k) / g0).collect();

    // Durbin-Levinson
    let mut pacf = vec![1.0; max_lag + 1];
    let mut phi = vec![0.0; max_lag + 1];
    let mut prev = vec![0.0; max_lag + 1];
    let mut v = 1.0;
    for k in 1..=max_lag {
        let num = acf[k] - (1..k).map(|j| prev[j] * acf[k - j]).sum::<f64>();
        let a = num / v;
        phi[k] = a;
        for j in 1..k {
            phi[j] = prev[j] - a * prev[k - j];
        }
        v *= 1.0 - a * a;
        pacf[k] = a;
        prev[..=k].copy_from_slice(&phi[..=k]);
    }
    Ok((acf, pacf))
}
