//! Per-day, per-stock s-scores and replication weights for every provider.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factors::{fit_eigenportfolios, Provider, RSelection};
use crate::linalg::{mean, sample_variance, Matrix};
use crate::lstm::{infer_beta_provider, train, TrainConfig};
use crate::marketdata::{ReturnsPanel, DT};
use crate::ou::{ar1_to_ou, fit_ar1_with, s_score, Ar1Estimator, OuParams};
use crate::regression::{cumsum, OlsDesign};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Pca {
        selection: RSelection,
        /// Days of history each eigenportfolio fit uses.
        train_days: usize,
        /// Trading days between refits.
        refit_days: usize,
    },
    /// Existing or artificial index funds, aligned with the stock panel.
    Funds { provider: Provider, funds: ReturnsPanel },
    Lstm {
        train: TrainConfig,
        /// Trading days between retrains.
        refit_days: usize,
    },
}

impl ProviderSpec {
    pub fn provider(&self) -> Provider {
        match self {
            ProviderSpec::Pca { .. } => Provider::Pca,
            ProviderSpec::Funds { provider, .. } => *provider,
            ProviderSpec::Lstm { .. } => Provider::Lstm,
        }
    }

    pub fn pca(selection: RSelection) -> Self {
        ProviderSpec::Pca {
            selection,
            train_days: 252,
            refit_days: 252,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    /// Residual window `W`.
    pub window: usize,
    /// Minimum mean-reversion speed for a stock to trade.
    pub kappa_min: f64,
    pub estimator: Ar1Estimator,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            window: 120,
            kappa_min: 4.0,
            estimator: Ar1Estimator::YuleWalker,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayScore {
    pub s: f64,
    pub ou: OuParams,
    /// `0 < phi1 < 1` and `kappa > kappa_min`.
    pub eligible: bool,
    /// Money weight of each replicating instrument per unit of the stock.
    pub hedge: Vec<f64>,
}

/// Everything the trading loop needs, computed once per provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub provider: Provider,
    pub panel: ReturnsPanel,
    /// Returns of the replicating instruments over the panel's columns.
    pub instruments: Matrix,
    pub instrument_names: Vec<String>,
    /// Panel columns that are traded.
    pub trade: Range<usize>,
    /// `scores[k][i]`: trading day `k` (0-based), stock `i`.
    pub scores: Vec<Vec<Option<DayScore>>>,
    /// Number of factors in use on each trading day.
    pub factor_count: Vec<usize>,
}

fn need(what: &str, needed: usize, have: usize) -> Result<()> {
    if have < needed {
        return Err(Error::Config(format!(
            "insufficient lookback for {what}: need {needed} days before the first traded day, have {have}"
        )));
    }
    Ok(())
}

/// Fits the OU model to the cumulative residuals of one window.
fn score_window(resid: &[f64], y: &[f64], hedge: Vec<f64>, cfg: &ScoreConfig) -> Option<DayScore> {
    // Near-perfect replication leaves only rounding noise in the residuals.
    if sample_variance(resid).sqrt() <= 1e-10 * sample_variance(y).sqrt() {
        return None;
    }
    let level = cumsum(resid);
    let fit = fit_ar1_with(&level, cfg.estimator).ok()?;
    let ou = ar1_to_ou(&fit, DT).ok()?;
    if !(ou.sigma_eq > 0.0) || !ou.sigma_eq.is_finite() || !ou.kappa.is_finite() {
        return None;
    }
    let s = s_score(*level.last().expect("window non-empty"), &ou);
    Some(DayScore {
        s,
        eligible: ou.kappa > cfg.kappa_min && s.is_finite(),
        ou,
        hedge,
    })
}

fn cols(m: &Matrix, range: Range<usize>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i)[range.clone()].to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// Regresses every stock on the shared factor window ending at column `t`.
fn score_day_linear(
    panel: &ReturnsPanel,
    factors: &Matrix,
    weights: Option<&Matrix>,
    t: usize,
    cfg: &ScoreConfig,
) -> Vec<Option<DayScore>> {
    let d = panel.n_assets();
    let win = t + 1 - cfg.window..t + 1;
    let design = match OlsDesign::new(&cols(factors, win.clone()), true) {
        Ok(x) => x,
        Err(e) => {
            log::debug!("{}: no regression ({e})", panel.dates[t]);
            return vec![None; d];
        }
    };
    (0..d)
        .map(|i| {
            let y = &panel.row(i)[win.clone()];
            let model = design.fit(y).ok()?;
            let hedge = match weights {
                Some(q) => {
                    let mut h = vec![0.0; q.cols()];
                    q.tr_mul_vec_add(&model.betas, &mut h);
                    h
                }
                None => model.betas.clone(),
            };
            score_window(&model.residuals, y, hedge, cfg)
        })
        .collect()
}

/// Computes scores for the `trade` columns of `panel`.
pub fn compute_scores(
    panel: &ReturnsPanel,
    spec: &ProviderSpec,
    trade: Range<usize>,
    cfg: &ScoreConfig,
) -> Result<ScoreTable> {
    if trade.is_empty() || trade.end > panel.n_days() {
        return Err(Error::Config(format!(
            "trade range {}..{} outside the {}-day panel",
            trade.start,
            trade.end,
            panel.n_days()
        )));
    }
    if cfg.window < crate::ou::MIN_AR1_LEN {
        return Err(Error::Config(format!(
            "residual window {} shorter than {}",
            cfg.window,
            crate::ou::MIN_AR1_LEN
        )));
    }
    need("the residual window", cfg.window - 1, trade.start)?;
    let n_trade = trade.len();
    match spec {
        ProviderSpec::Pca {
            selection,
            train_days,
            refit_days,
        } => {
            need("the eigenportfolio fit", *train_days, trade.start)?;
            let refit = (*refit_days).max(1);
            let mut scores = Vec::with_capacity(n_trade);
            let mut factor_count = Vec::with_capacity(n_trade);
            for block_start in (0..n_trade).step_by(refit) {
                let bs = trade.start + block_start;
                let be = (bs + refit).min(trade.end);
                let window = panel.slice_days(bs - train_days..bs);
                let (q, eig) = fit_eigenportfolios(&window, *selection)?;
                log::info!(
                    "{}: {} eigenportfolios explain {:.3} of variance",
                    panel.dates[bs],
                    q.rows(),
                    crate::factors::explained_fraction(&eig.eigenvalues, q.rows())
                );
                let f = q.matmul(&panel.returns);
                let block: Vec<Vec<Option<DayScore>>> = (bs..be)
                    .into_par_iter()
                    .map(|t| score_day_linear(panel, &f, Some(&q), t, cfg))
                    .collect();
                factor_count.extend(std::iter::repeat_n(q.rows(), be - bs));
                scores.extend(block);
            }
            Ok(ScoreTable {
                provider: Provider::Pca,
                instruments: panel.returns.clone(),
                instrument_names: panel.tickers.clone(),
                panel: panel.clone(),
                trade,
                scores,
                factor_count,
            })
        }
        ProviderSpec::Funds { provider, funds } => {
            if funds.dates != panel.dates {
                return Err(Error::Alignment(
                    "fund returns are not aligned with the stock panel".into(),
                ));
            }
            let scores: Vec<Vec<Option<DayScore>>> = trade
                .clone()
                .into_par_iter()
                .map(|t| score_day_linear(panel, &funds.returns, None, t, cfg))
                .collect();
            Ok(ScoreTable {
                provider: *provider,
                instruments: funds.returns.clone(),
                instrument_names: funds.tickers.clone(),
                panel: panel.clone(),
                trade,
                factor_count: vec![funds.n_assets(); n_trade],
                scores,
            })
        }
        ProviderSpec::Lstm {
            train: tcfg,
            refit_days,
        } => lstm_scores(panel, tcfg, (*refit_days).max(1), trade, cfg),
    }
}

fn lstm_scores(
    panel: &ReturnsPanel,
    tcfg: &TrainConfig,
    refit: usize,
    trade: Range<usize>,
    cfg: &ScoreConfig,
) -> Result<ScoreTable> {
    tcfg.validate()?;
    let d = panel.n_assets();
    let w = cfg.window;
    need("lstm training", tcfg.train_days, trade.start)?;
    need("lstm warm-up", tcfg.warmup + w - 1, trade.start)?;
    let n_trade = trade.len();
    let mut scores: Vec<Vec<Option<DayScore>>> = vec![vec![None; d]; n_trade];
    for (b, block_start) in (0..n_trade).step_by(refit).enumerate() {
        let bs = trade.start + block_start;
        let be = (bs + refit).min(trade.end);
        let history = panel.slice_days(bs - tcfg.train_days..bs);
        let per_stock: Vec<Result<Vec<Option<DayScore>>>> = (0..d)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(tcfg.seed, &[i as u64, b as u64]);
                let local = TrainConfig {
                    seed,
                    ..tcfg.clone()
                };
                let model = train(&history, &panel.tickers[i], &local)?.model;
                let first = bs + 1 - w;
                let betas = infer_beta_provider(&model, panel, i, first..be, tcfg.warmup)?;
                let x = crate::lstm::design_matrix(panel, i, first..be);
                let y = &panel.row(i)[first..be];
                let resid: Vec<f64> = (0..be - first)
                    .map(|u| y[u] - (0..x.rows()).map(|j| x[(j, u)] * betas[(j, u)]).sum::<f64>())
                    .collect();
                Ok((bs..be)
                    .map(|t| {
                        let u = t - first;
                        let mut hedge = vec![0.0; d];
                        for (j, slot) in (0..d).filter(|&j| j != i).enumerate() {
                            hedge[slot] = betas[(j, u)];
                        }
                        score_window(&resid[u + 1 - w..=u], &y[u + 1 - w..=u], hedge, cfg)
                    })
                    .collect())
            })
            .collect();
        for (i, col) in per_stock.into_iter().enumerate() {
            for (k, s) in col?.into_iter().enumerate() {
                scores[block_start + k][i] = s;
            }
        }
    }
    Ok(ScoreTable {
        provider: Provider::Lstm,
        instruments: panel.returns.clone(),
        instrument_names: panel.tickers.clone(),
        panel: panel.clone(),
        trade,
        scores,
        factor_count: vec![d - 1; n_trade],
    })
}

impl ScoreTable {
    /// Mean `kappa` over every day with fitted OU parameters, per stock.
    pub fn mean_kappa(&self) -> Vec<Option<f64>> {
        (0..self.panel.n_assets())
            .map(|i| {
                let ks: Vec<f64> = self
                    .scores
                    .iter()
                    .filter_map(|day| day[i].as_ref().map(|s| s.ou.kappa))
                    .collect();
                (!ks.is_empty()).then(|| mean(&ks))
            })
            .collect()
    }
}
