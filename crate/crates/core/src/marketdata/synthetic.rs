//! Seeded synthetic markets: GBM factors plus OU idiosyncratic components.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{compute_returns, write_prices, Bar, PriceMap, ReturnsPanel, Sector, Universe, DT};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::ou::{simulate_ou_with, OuParams};

#[derive(Debug, Clone)]
pub struct SyntheticMarketConfig {
    /// Number of stocks.
    pub d: usize,
    /// Number of daily returns (prices have `n + 1` points).
    pub n: usize,
    /// Annualised factor volatilities, one per factor.
    pub factor_vols: Vec<f64>,
    /// Stock-by-factor loadings. `None` loads every stock with 1.0 on the
    /// first factor and draws the rest uniformly from `[-0.5, 0.5]`.
    pub loadings: Option<Matrix>,
    /// Per-stock idiosyncratic OU parameters `(kappa, mu, sigma)`.
    pub idio_ou: Vec<(f64, f64, f64)>,
    /// Annual drift of every factor's GBM.
    pub gbm_drift: f64,
    /// Annual intercept added to every stock.
    pub alpha: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl SyntheticMarketConfig {
    /// `d` stocks sharing the same idiosyncratic OU parameters.
    pub fn uniform(d: usize, n: usize, factor_vols: Vec<f64>, ou: (f64, f64, f64), seed: u64) -> Self {
        SyntheticMarketConfig {
            d,
            n,
            factor_vols,
            loadings: None,
            idio_ou: vec![ou; d],
            gbm_drift: 0.05,
            alpha: 0.0,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic market: {m}")));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.factor_vols.is_empty() || self.factor_vols.iter().any(|v| !(*v > 0.0)) {
            return bad("factor vols must be positive and non-empty");
        }
        if self.idio_ou.len() != self.d {
            return bad("need one OU triple per stock");
        }
        if self.idio_ou.iter().any(|&(k, _, s)| !(k > 0.0) || !(s >= 0.0)) {
            return bad("OU kappa must be positive and sigma non-negative");
        }
        if let Some(l) = &self.loadings {
            if l.rows() != self.d || l.cols() != self.factor_vols.len() {
                return bad("loadings must be d x r");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub prices: PriceMap,
    /// Price levels of the factor indices, tickers `F0`, `F1`, ...
    pub fund_prices: PriceMap,
    pub panel: ReturnsPanel,
    pub funds: ReturnsPanel,
    pub loadings: Matrix,
    /// Ground-truth OU level per stock on every price date.
    pub truth: BTreeMap<String, Vec<f64>>,
    pub price_dates: Vec<NaiveDate>,
    pub universe: Universe,
}

impl SyntheticMarket {
    /// Writes `prices/<T>.csv`, `funds/<F>.csv`, `truth/<T>.csv` and
    /// `universe.csv` below `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["prices", "funds", "truth"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (t, bars) in &self.prices {
            let mut one = PriceMap::new();
            one.insert(t.clone(), bars.clone());
            write_prices(&dir.join("prices").join(format!("{t}.csv")), &one)?;
        }
        for (t, bars) in &self.fund_prices {
            let mut one = PriceMap::new();
            one.insert(t.clone(), bars.clone());
            write_prices(&dir.join("funds").join(format!("{t}.csv")), &one)?;
        }
        for (t, path) in &self.truth {
            let file = dir.join("truth").join(format!("{t}.csv"));
            let mut w = csv::Writer::from_path(&file).map_err(|e| Error::csv(&file, e))?;
            w.write_record(["ticker", "date", "I_value"])
                .map_err(|e| Error::csv(&file, e))?;
            for (date, v) in self.price_dates.iter().zip(path) {
                w.write_record([t.as_str(), &date.to_string(), &format!("{v}")])
                    .map_err(|e| Error::csv(&file, e))?;
            }
            w.flush().map_err(|e| Error::io(&file, e))?;
        }
        self.universe.write(&dir.join("universe.csv"))
    }
}

/// Weekdays starting at `start` (rolled forward off weekends).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn ticker_name(prefix: char, i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(2);
    format!("{prefix}{i:0width$}")
}

pub fn generate_synthetic_market(cfg: &SyntheticMarketConfig) -> Result<SyntheticMarket> {
    cfg.validate()?;
    let r = cfg.factor_vols.len();
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let loadings = match &cfg.loadings {
        Some(l) => l.clone(),
        None => {
            let mut l = Matrix::zeros(cfg.d, r);
            for i in 0..cfg.d {
                l[(i, 0)] = 1.0;
                for j in 1..r {
                    l[(i, j)] = rng.random_range(-0.5..0.5);
                }
            }
            l
        }
    };

    let mut factors = Matrix::zeros(r, n);
    for (j, &vol) in cfg.factor_vols.iter().enumerate() {
        let drift = (cfg.gbm_drift - 0.5 * vol * vol) * DT;
        let scale = vol * DT.sqrt();
        for t in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            factors[(j, t)] = (drift + scale * z).exp() - 1.0;
        }
    }

    let price_dates = business_days(cfg.start, n + 1);
    let mut prices = PriceMap::new();
    let mut truth = BTreeMap::new();
    let mut universe = Vec::with_capacity(cfg.d);
    for i in 0..cfg.d {
        let (kappa, mu, sigma) = cfg.idio_ou[i];
        let params = OuParams::new(kappa, mu, sigma);
        let mut stream = ChaCha8Rng::seed_from_u64(cfg.seed);
        stream.set_stream(i as u64 + 1);
        let path = simulate_ou_with(&params, mu, n, DT, &mut stream);
        let ticker = ticker_name('S', i, cfg.d);
        let mut level = 100.0;
        let mut bars = Vec::with_capacity(n + 1);
        bars.push(Bar {
            date: price_dates[0],
            adj_close: level,
        });
        for t in 0..n {
            let systematic: f64 = (0..r).map(|j| loadings[(i, j)] * factors[(j, t)]).sum();
            let ret = cfg.alpha * DT + systematic + (path[t + 1] - path[t]);
            if !(ret > -1.0) {
                return Err(Error::Domain(format!(
                    "synthetic return {ret} for {ticker} is not above -1"
                )));
            }
            level *= 1.0 + ret;
            bars.push(Bar {
                date: price_dates[t + 1],
                adj_close: level,
            });
        }
        universe.push((ticker.clone(), Sector::ALL[i % Sector::ALL.len()]));
        prices.insert(ticker.clone(), bars);
        truth.insert(ticker, path);
    }

    let mut fund_prices = PriceMap::new();
    for j in 0..r {
        let mut level = 100.0;
        let mut bars = vec![Bar {
            date: price_dates[0],
            adj_close: level,
        }];
        for t in 0..n {
            level *= 1.0 + factors[(j, t)];
            bars.push(Bar {
                date: price_dates[t + 1],
                adj_close: level,
            });
        }
        fund_prices.insert(ticker_name('F', j, r), bars);
    }

    Ok(SyntheticMarket {
        panel: compute_returns(&prices)?,
        funds: compute_returns(&fund_prices)?,
        prices,
        fund_prices,
        loadings,
        truth,
        price_dates,
        universe: Universe::new(universe)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_variance;

    #[test]
    fn zero_idio_single_factor_copies_factor() {
        let mut cfg = SyntheticMarketConfig::uniform(3, 50, vec![0.2], (5.0, 0.0, 0.0), 1);
        cfg.loadings = Some(Matrix::from_rows(&[[1.0], [1.0], [1.0]]));
        let m = generate_synthetic_market(&cfg).unwrap();
        for i in 0..3 {
            for t in 0..50 {
                assert!((m.panel.row(i)[t] - m.funds.row(0)[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = SyntheticMarketConfig::uniform(4, 100, vec![0.2, 0.1], (20.0, 0.0, 0.3), 9);
        let a = generate_synthetic_market(&cfg).unwrap();
        let b = generate_synthetic_market(&cfg).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.truth, b.truth);
        let mut other = cfg.clone();
        other.seed = 10;
        assert_ne!(generate_synthetic_market(&other).unwrap().panel, a.panel);
    }

    #[test]
    fn long_run_idio_variance_matches_ou_asymptote() {
        let (kappa, sigma) = (20.0, 0.3);
        let cfg = SyntheticMarketConfig::uniform(2, 200_000, vec![0.2], (kappa, 0.0, sigma), 3);
        let m = generate_synthetic_market(&cfg).unwrap();
        let path = &m.truth["S00"];
        let var = sample_variance(&path[1000..]);
        let expect = sigma * sigma / (2.0 * kappa);
        assert!((var / expect - 1.0).abs() < 0.10, "var {var} vs {expect}");
    }

    #[test]
    fn business_days_skip_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), 3);
        // Fri 1st, Mon 4th, Tue 5th
        assert_eq!(days[1], NaiveDate::from_ymd_opt(2021, 1, 4).unwrap());
        assert_eq!(days[2], NaiveDate::from_ymd_opt(2021, 1, 5).unwrap());
    }
}
