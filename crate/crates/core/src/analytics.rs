//! Annualised Sharpe ratios and the threshold grid search.

use std::collections::BTreeMap;

use chrono::Datelike;
use rayon::prelude::*;

use crate::backtest::{simulate, BacktestResult, Curve, ScoreTable, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::{mean, sample_variance};
use crate::marketdata::{Sector, Universe, TRADING_DAYS};
use crate::signals::Thresholds;

/// Annualised excess returns this close to zero count as an exact match of
/// the risk-free rate, on top of the `r_f^2 / 252` gap between simple and
/// continuous compounding.
pub const SHARPE_ZERO: f64 = 1e-6;
/// Daily standard deviations below this are treated as zero. Curves printed
/// with 10 significant digits stay below it when they are deterministic.
pub const SIGMA_ZERO: f64 = 1e-9;

/// `S = (252 mean(R) - r_f) / (sqrt(252) std(R))`, with the sample standard
/// deviation. `None` for an empty series.
pub fn annualized_sharpe(daily_returns: &[f64], r_f: f64) -> Option<f64> {
    if daily_returns.is_empty() {
        return None;
    }
    let num = TRADING_DAYS * mean(daily_returns) - r_f;
    let sigma = if daily_returns.len() > 1 {
        sample_variance(daily_returns).sqrt()
    } else {
        0.0
    };
    if sigma <= SIGMA_ZERO {
        if num.abs() <= SHARPE_ZERO + r_f * r_f / TRADING_DAYS {
            return Some(0.0);
        }
        return Some(num.signum() * f64::INFINITY);
    }
    Some(num / (TRADING_DAYS.sqrt() * sigma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpeRow {
    pub year: i32,
    /// Sector label or `PORTFOLIO`.
    pub group: String,
    pub sharpe: f64,
}

pub const PORTFOLIO: &str = "PORTFOLIO";

/// Daily returns of `curve` grouped by the calendar year of each trading day,
/// with a flag telling whether the group held a position that year.
fn yearly_returns(dates: &[chrono::NaiveDate], curve: &Curve) -> BTreeMap<i32, (Vec<f64>, bool)> {
    let mut out: BTreeMap<i32, (Vec<f64>, bool)> = BTreeMap::new();
    for (k, r) in curve.daily_returns().into_iter().enumerate() {
        let e = out.entry(dates[k + 1].year()).or_default();
        e.0.push(r);
        e.1 |= curve.active[k + 1];
    }
    out
}

/// Per-year Sharpe ratios of every sector and of the whole portfolio.
///
/// A sector that held no position during a year, or has no stocks at all,
/// is reported as `-inf`.
pub fn sector_report(result: &BacktestResult) -> Vec<SharpeRow> {
    let years: Vec<i32> = {
        let mut y: Vec<i32> = result.dates[1..].iter().map(|d| d.year()).collect();
        y.dedup();
        y
    };
    let per_sector: BTreeMap<Sector, BTreeMap<i32, (Vec<f64>, bool)>> = result
        .sectors
        .iter()
        .map(|(s, c)| (*s, yearly_returns(&result.dates, c)))
        .collect();
    let portfolio = yearly_returns(&result.dates, &result.portfolio);
    let mut rows = Vec::new();
    for year in years {
        for sector in Sector::ALL {
            let sharpe = match per_sector.get(&sector).and_then(|m| m.get(&year)) {
                Some((r, true)) => annualized_sharpe(r, result.r_f).unwrap_or(f64::NEG_INFINITY),
                _ => f64::NEG_INFINITY,
            };
            rows.push(SharpeRow {
                year,
                group: sector.label().to_string(),
                sharpe,
            });
        }
        let (r, _) = &portfolio[&year];
        rows.push(SharpeRow {
            year,
            group: PORTFOLIO.to_string(),
            sharpe: annualized_sharpe(r, result.r_f).unwrap_or(f64::NEG_INFINITY),
        });
    }
    rows
}

/// `lo, lo + step, ..., hi`, snapped to a 1e-10 lattice so that decimal
/// steps print cleanly.
pub fn axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Config(format!("bad grid axis {lo}..{hi} step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| ((lo + k as f64 * step) * 1e10).round() / 1e10)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub opens: Vec<f64>,
    pub closes: Vec<f64>,
    /// `cells[i][j]`: final profit `E_T - E0` for `opens[i]`, `closes[j]`.
    pub cells: Vec<Vec<f64>>,
    /// Row-major index of the first maximal cell.
    pub best: (usize, usize),
}

impl GridResult {
    pub fn best_thresholds(&self) -> (f64, f64) {
        (self.opens[self.best.0], self.closes[self.best.1])
    }

    pub fn best_profit(&self) -> f64 {
        self.cells[self.best.0][self.best.1]
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    !xs.is_empty() && xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1])
}

/// Runs one backtest per `(open, close)` pair with symmetric thresholds.
/// A bankrupt cell scores `-E0`.
pub fn grid_search(
    table: &ScoreTable,
    opens: &[f64],
    closes: &[f64],
    cfg: &SimConfig,
    universe: &Universe,
) -> Result<GridResult> {
    if !strictly_increasing(opens) || !strictly_increasing(closes) {
        return Err(Error::Config(
            "grid axes must be non-empty and strictly increasing".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..opens.len())
        .flat_map(|i| (0..closes.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let th = Thresholds::symmetric(opens[i], closes[j])?;
            match simulate(table, &th, cfg, universe) {
                Ok(res) => Ok(res.final_equity() - cfg.e0),
                Err(Error::Bankrupt(e)) => {
                    log::warn!("grid cell ({}, {}) went bankrupt at equity {e}", opens[i], closes[j]);
                    Ok(-cfg.e0)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    let cells = values.chunks(closes.len()).map(<[f64]>::to_vec).collect();
    Ok(GridResult {
        opens: opens.to_vec(),
        closes: closes.to_vec(),
        cells,
        best: pairs[best],
    })
}
