//! Daily event-driven simulation of independent per-stock pair traders.

mod engine;
mod scores;

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::marketdata::{Sector, DT};
use crate::signals::PositionState;

pub use engine::{run_backtest, simulate};
pub use scores::{compute_scores, DayScore, ProviderSpec, ScoreConfig, ScoreTable};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Fee per transaction leg, as a fraction of traded value.
    pub cost: f64,
    /// Annual risk-free rate, continuously compounded.
    pub r_f: f64,
    pub e0: f64,
    pub leverage: f64,
    /// Maximum number of simultaneous positions; `None` uses the number of
    /// traded stocks.
    pub n_max: Option<usize>,
    /// Trailing days of the trading period in which no position is opened.
    pub freeze_days: usize,
    /// Keep the `s e^{r Δt} (1 - Q^M)` term of the profit formula.
    pub financing_term: bool,
    /// Record every scored day in the signal log.
    pub log_signals: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cost: 0.001,
            r_f: 0.015,
            e0: 100.0,
            leverage: 2.0,
            n_max: None,
            freeze_days: 60,
            financing_term: true,
            log_signals: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sim: {m}")));
        if !(self.cost >= 0.0) {
            return bad("cost must be non-negative");
        }
        if !(self.e0 > 0.0) {
            return bad("initial equity must be positive");
        }
        if !(self.leverage > 0.0) {
            return bad("leverage must be positive");
        }
        if !self.r_f.is_finite() {
            return bad("risk-free rate must be finite");
        }
        if self.n_max == Some(0) {
            return bad("position count must be positive");
        }
        Ok(())
    }
}

/// `Λ = (leverage / N) E`
pub fn scale_factor(equity: f64, n: usize, leverage: f64) -> Result<f64> {
    if !(equity > 0.0) {
        return Err(Error::Bankrupt(equity));
    }
    Ok(leverage / n as f64 * equity)
}

/// Profit of a round trip, given the money-weighted hedge move
/// `hedge_pnl = Q^M R_M`.
#[allow(clippy::too_many_arguments)]
pub fn trade_profit_parts(
    direction: PositionState,
    lambda: f64,
    r_i: f64,
    qm: f64,
    hedge_pnl: f64,
    years: f64,
    cfg: &SimConfig,
) -> f64 {
    let s = direction.as_i8() as f64;
    let grow = (cfg.r_f * years).exp();
    let spread = s * (r_i - hedge_pnl);
    let financing = if cfg.financing_term {
        s * grow * (1.0 - qm)
    } else {
        0.0
    };
    let fees = cfg.cost * (grow * (1.0 + qm).abs() + ((1.0 + r_i) + qm + hedge_pnl).abs());
    lambda * (spread - financing - fees)
}

/// Profit of closing `pos` after cumulative returns `r_i` (main stock) and
/// `r_m` (replicating portfolio) over `years`.
pub fn trade_profit(pos: &OpenPosition, r_i: f64, r_m: f64, years: f64, cfg: &SimConfig) -> f64 {
    trade_profit_parts(pos.direction, pos.lambda, r_i, pos.qm, pos.qm * r_m, years, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenPosition {
    pub stock: usize,
    pub direction: PositionState,
    /// Trading-day index (1-based) of the opening close.
    pub open_day: usize,
    pub lambda: f64,
    pub qm: f64,
    /// Frozen money weights of the replicating instruments.
    pub hedge: Vec<f64>,
}

impl OpenPosition {
    /// Cash tied up while the position is open.
    pub fn outlay(&self) -> f64 {
        self.lambda * (1.0 + self.qm.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeRecord {
    pub ticker: String,
    pub sector: Sector,
    pub direction: PositionState,
    pub open_date: NaiveDate,
    pub close_date: NaiveDate,
    pub open_day: usize,
    pub close_day: usize,
    pub lambda: f64,
    pub qm: f64,
    pub r_i: f64,
    pub r_m: f64,
    pub profit: f64,
    /// Closed by the end-of-period liquidation rather than a signal.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEvent {
    pub ticker: String,
    pub date: NaiveDate,
    pub g: f64,
    pub action: crate::signals::Signal,
}

/// `E_t` and `C_t` of a portfolio or sub-portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub e0: f64,
    pub equity: Vec<f64>,
    pub cash: Vec<f64>,
    /// Whether any position of the group was open at some point of the day.
    pub active: Vec<bool>,
}

impl Curve {
    fn new(e0: f64, len: usize) -> Self {
        let mut c = Curve {
            e0,
            equity: Vec::with_capacity(len),
            cash: Vec::with_capacity(len),
            active: Vec::with_capacity(len),
        };
        c.equity.push(e0);
        c.cash.push(e0);
        c.active.push(false);
        c
    }

    /// Daily simple returns of the equity curve.
    pub fn daily_returns(&self) -> Vec<f64> {
        self.equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    /// Index 0 is the anchor (the last close before trading starts); index
    /// `k` is trading day `k`, at time `k dt`.
    pub dates: Vec<NaiveDate>,
    pub portfolio: Curve,
    pub sectors: BTreeMap<Sector, Curve>,
    pub trades: Vec<TradeRecord>,
    pub signals: Vec<SignalEvent>,
    pub r_f: f64,
}

impl BacktestResult {
    pub fn n_days(&self) -> usize {
        self.dates.len() - 1
    }

    /// Length of the trading period in years.
    pub fn horizon(&self) -> f64 {
        self.n_days() as f64 * DT
    }

    pub fn final_equity(&self) -> f64 {
        *self.portfolio.equity.last().expect("anchor present")
    }

    /// `E0 e^{r_f T} + Σ P e^{r_f (T - t_close)}`
    pub fn conservation_gap(&self) -> f64 {
        let t = self.horizon();
        let expected = self.portfolio.e0 * (self.r_f * t).exp()
            + self
                .trades
                .iter()
                .map(|tr| tr.profit * (self.r_f * (t - tr.close_day as f64 * DT)).exp())
                .sum::<f64>();
        self.final_equity() - expected
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cfg() -> SimConfig {
        SimConfig {
            cost: 0.0,
            r_f: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn scale_factor_examples() {
        assert!((scale_factor(100.0, 60, 2.0).unwrap() - 3.3333333333).abs() < 1e-9);
        assert_eq!(scale_factor(7.0, 1, 1.0).unwrap(), 7.0);
        assert!(matches!(scale_factor(0.0, 60, 2.0), Err(Error::Bankrupt(_))));
        assert!(scale_factor(1e-300, 60, 2.0).is_ok());
    }

    #[test]
    fn profit_examples() {
        let long = PositionState::Long;
        let cfg = zero_cfg();
        assert_eq!(trade_profit_parts(long, 1.0, 0.0, 1.0, 0.0, 0.1, &cfg), 0.0);
        assert!((trade_profit_parts(long, 3.0, 0.1, 1.0, 0.0, 0.1, &cfg) - 0.3).abs() < 1e-15);
        let costly = SimConfig {
            cost: 0.001,
            ..zero_cfg()
        };
        assert!((trade_profit_parts(long, 2.0, 0.0, 1.0, 0.0, 0.1, &costly) + 0.008).abs() < 1e-15);
    }

    #[test]
    fn short_mirrors_long_spread() {
        let cfg = zero_cfg();
        let l = trade_profit_parts(PositionState::Long, 1.0, 0.05, 1.0, 0.02, 0.2, &cfg);
        let s = trade_profit_parts(PositionState::Short, 1.0, 0.05, 1.0, 0.02, 0.2, &cfg);
        assert!((l + s).abs() < 1e-15);
    }

    #[test]
    fn financing_term_flag() {
        let on = zero_cfg();
        let off = SimConfig {
            financing_term: false,
            ..zero_cfg()
        };
        let a = trade_profit_parts(PositionState::Long, 1.0, 0.0, 0.5, 0.0, 0.0, &on);
        let b = trade_profit_parts(PositionState::Long, 1.0, 0.0, 0.5, 0.0, 0.0, &off);
        assert_eq!(a, -0.5);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn position_form_matches_parts() {
        let pos = OpenPosition {
            stock: 0,
            direction: PositionState::Short,
            open_day: 1,
            lambda: 3.0,
            qm: 0.8,
            hedge: vec![0.8],
        };
        let cfg = SimConfig::default();
        let a = trade_profit(&pos, 0.03, -0.01, 0.1, &cfg);
        let b = trade_profit_parts(pos.direction, 3.0, 0.03, 0.8, 0.8 * -0.01, 0.1, &cfg);
        assert_eq!(a, b);
    }
}
