use std::collections::BTreeMap;

use super::{
    compute_scores, scale_factor, trade_profit_parts, BacktestResult, Curve, OpenPosition,
    ProviderSpec, ScoreConfig, ScoreTable, SignalEvent, SimConfig, TradeRecord,
};
use crate::error::{Error, Result};
use crate::marketdata::{ReturnsPanel, Sector, Universe, DT};
use crate::signals::{apply, decide, PositionState, Signal, Thresholds};

struct Book {
    e: f64,
    c: f64,
    active: bool,
}

impl Book {
    fn new(e0: f64) -> Self {
        Book {
            e: e0,
            c: e0,
            active: false,
        }
    }

    fn accrue(&mut self, growth: f64) {
        self.e *= growth;
        self.c *= growth;
    }

    fn record(&self, curve: &mut Curve) {
        curve.equity.push(self.e);
        curve.cash.push(self.c);
        curve.active.push(self.active);
    }
}

/// Compounded return of `row` over columns `(from, to]`.
fn cum(row: &[f64], from: usize, to: usize) -> f64 {
    row[from + 1..=to].iter().fold(1.0, |a, r| a * (1.0 + r)) - 1.0
}

/// Runs the trading loop over precomputed scores.
pub fn simulate(
    table: &ScoreTable,
    thresholds: &Thresholds,
    cfg: &SimConfig,
    universe: &Universe,
) -> Result<BacktestResult> {
    cfg.validate()?;
    thresholds.validate()?;
    let panel = &table.panel;
    let d = panel.n_assets();
    let n = table.trade.len();
    let n_max = cfg.n_max.unwrap_or(d);
    let growth = (cfg.r_f * DT).exp();
    let sector_of: Vec<Sector> = panel.tickers.iter().map(|t| universe.sector(t)).collect();

    let anchor_col = table.trade.start.checked_sub(1).ok_or_else(|| {
        Error::Config("trading cannot start on the first panel day".into())
    })?;
    let mut dates = Vec::with_capacity(n + 1);
    dates.push(panel.dates[anchor_col]);
    dates.extend_from_slice(&panel.dates[table.trade.clone()]);

    let mut portfolio = Curve::new(cfg.e0, n + 1);
    let mut book = Book::new(cfg.e0);
    let mut sector_counts: BTreeMap<Sector, usize> = BTreeMap::new();
    for s in &sector_of {
        *sector_counts.entry(*s).or_default() += 1;
    }
    let mut sector_books: BTreeMap<Sector, (Book, Curve)> = sector_counts
        .iter()
        .map(|(s, &k)| {
            let e0 = cfg.e0 * k as f64 / d as f64;
            (*s, (Book::new(e0), Curve::new(e0, n + 1)))
        })
        .collect();

    let mut states = vec![PositionState::Flat; d];
    let mut open: Vec<Option<OpenPosition>> = vec![None; d];
    let mut trades = Vec::new();
    let mut signals = Vec::new();

    for k in 1..=n {
        let col = table.trade.start + k - 1;
        let lambda = scale_factor(book.e, n_max, cfg.leverage)?;
        book.accrue(growth);
        for (b, _) in sector_books.values_mut() {
            b.accrue(growth);
            b.active = false;
        }
        book.active = false;
        let frozen = k + cfg.freeze_days > n || k == n;

        for i in 0..d {
            let score = table.scores[k - 1][i].as_ref();
            let mut signal = match score {
                Some(sc) if sc.eligible => decide(sc.s, states[i], thresholds),
                _ => Signal::Hold,
            };
            if signal.is_open() && frozen {
                signal = Signal::Hold;
            }
            if cfg.log_signals {
                if let Some(sc) = score {
                    signals.push(SignalEvent {
                        ticker: panel.tickers[i].clone(),
                        date: panel.dates[col],
                        g: sc.s,
                        action: signal,
                    });
                }
            }
            let next = apply(signal, states[i])?;
            if signal.is_open() {
                let sc = score.expect("open requires a score");
                let pos = OpenPosition {
                    stock: i,
                    direction: next,
                    open_day: k,
                    lambda,
                    qm: sc.hedge.iter().sum(),
                    hedge: sc.hedge.clone(),
                };
                let out = pos.outlay();
                book.c -= out;
                let (sb, _) = sector_books.get_mut(&sector_of[i]).expect("sector");
                sb.c -= out;
                open[i] = Some(pos);
            } else if signal.is_close() {
                let pos = open[i].take().ok_or_else(|| {
                    Error::Contract(format!("close without open for {}", panel.tickers[i]))
                })?;
                close(table, cfg, pos, k, col, false, &mut book, &mut sector_books, &sector_of, &dates, &mut trades);
            }
            states[i] = next;
        }
        if k == n {
            for i in 0..d {
                if let Some(pos) = open[i].take() {
                    close(table, cfg, pos, k, col, true, &mut book, &mut sector_books, &sector_of, &dates, &mut trades);
                    states[i] = PositionState::Flat;
                }
            }
        }
        for (i, pos) in open.iter().enumerate() {
            if pos.is_some() {
                book.active = true;
                sector_books.get_mut(&sector_of[i]).expect("sector").0.active = true;
            }
        }
        book.record(&mut portfolio);
        for (b, curve) in sector_books.values_mut() {
            b.record(curve);
        }
    }

    Ok(BacktestResult {
        dates,
        portfolio,
        sectors: sector_books.into_iter().map(|(s, (_, c))| (s, c)).collect(),
        trades,
        signals,
        r_f: cfg.r_f,
    })
}

#[allow(clippy::too_many_arguments)]
fn close(
    table: &ScoreTable,
    cfg: &SimConfig,
    pos: OpenPosition,
    k: usize,
    col: usize,
    forced: bool,
    book: &mut Book,
    sector_books: &mut BTreeMap<Sector, (Book, Curve)>,
    sector_of: &[Sector],
    dates: &[chrono::NaiveDate],
    trades: &mut Vec<TradeRecord>,
) {
    let open_col = table.trade.start + pos.open_day - 1;
    let i = pos.stock;
    let r_i = cum(table.panel.row(i), open_col, col);
    let hedge_pnl: f64 = pos
        .hedge
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, w)| w * cum(table.instruments.row(j), open_col, col))
        .sum();
    let years = (k - pos.open_day) as f64 * DT;
    let profit = trade_profit_parts(pos.direction, pos.lambda, r_i, pos.qm, hedge_pnl, years, cfg);
    let back = pos.outlay() * (cfg.r_f * years).exp() + profit;
    book.e += profit;
    book.c += back;
    book.active = true;
    let (sb, _) = sector_books.get_mut(&sector_of[i]).expect("sector");
    sb.e += profit;
    sb.c += back;
    sb.active = true;
    trades.push(TradeRecord {
        ticker: table.panel.tickers[i].clone(),
        sector: sector_of[i],
        direction: pos.direction,
        open_date: dates[pos.open_day],
        close_date: dates[k],
        open_day: pos.open_day,
        close_day: k,
        lambda: pos.lambda,
        qm: pos.qm,
        r_i,
        r_m: if pos.qm != 0.0 { hedge_pnl / pos.qm } else { 0.0 },
        profit,
        forced,
    });
}

/// Scores `panel` with `spec` and trades the `trade` columns.
pub fn run_backtest(
    panel: &ReturnsPanel,
    spec: &ProviderSpec,
    trade: std::ops::Range<usize>,
    thresholds: &Thresholds,
    score_cfg: &ScoreConfig,
    cfg: &SimConfig,
    universe: &Universe,
) -> Result<BacktestResult> {
    let table = compute_scores(panel, spec, trade, score_cfg)?;
    simulate(&table, thresholds, cfg, universe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::DayScore;
    use crate::factors::Provider;
    use crate::linalg::Matrix;
    use crate::ou::OuParams;
    use chrono::NaiveDate;

    const N: usize = 10;

    fn panel() -> ReturnsPanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = crate::marketdata::business_days(start, N + 1);
        let a: Vec<f64> = (0..=N).map(|t| 0.01 * ((t * 7 % 5) as f64 - 2.0)).collect();
        let b: Vec<f64> = (0..=N).map(|t| 0.004 * ((t * 3 % 4) as f64 - 1.5)).collect();
        ReturnsPanel::new(
            vec!["AAA".into(), "BBB".into()],
            dates,
            Matrix::from_rows(&[a, b]),
        )
        .unwrap()
    }

    fn score(s: f64) -> Option<DayScore> {
        Some(DayScore {
            s,
            ou: OuParams::new(10.0, 0.0, 1.0),
            eligible: true,
            hedge: vec![0.0, 0.8],
        })
    }

    /// Trades columns `1..=N`; `s0[k]` drives stock 0 on trading day `k + 1`.
    fn table(s0: &[f64]) -> ScoreTable {
        let p = panel();
        let scores = (0..N)
            .map(|k| vec![s0.get(k).and_then(|&s| score(s)), None])
            .collect();
        ScoreTable {
            provider: Provider::Pca,
            instruments: p.returns.clone(),
            instrument_names: p.tickers.clone(),
            panel: p,
            trade: 1..N + 1,
            scores,
            factor_count: vec![1; N],
        }
    }

    fn cfg() -> SimConfig {
        SimConfig {
            freeze_days: 2,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_trades_grow_at_risk_free() {
        let res = simulate(&table(&[]), &Thresholds::default(), &cfg(), &Universe::default()).unwrap();
        assert!(res.trades.is_empty());
        for (k, (e, c)) in res.portfolio.equity.iter().zip(&res.portfolio.cash).enumerate() {
            let want = 100.0 * (0.015 * k as f64 / 252.0).exp();
            assert!((e - want).abs() < 1e-10);
            assert!((c - want).abs() < 1e-10);
        }
    }

    #[test]
    fn single_trade_matches_hand_computation() {
        let res = simulate(
            &table(&[0.0, -2.0, -1.0, -1.0, 0.0]),
            &Thresholds::default(),
            &cfg(),
            &Universe::default(),
        )
        .unwrap();
        assert_eq!(res.trades.len(), 1);
        let tr = &res.trades[0];
        assert_eq!((tr.open_day, tr.close_day, tr.forced), (2, 5, false));

        let p = panel();
        let (r, c, dt): (f64, f64, f64) = (0.015, 0.001, 1.0 / 252.0);
        let lambda = 2.0 / 2.0 * 100.0 * (r * dt).exp();
        let mut gi = 1.0;
        let mut gm = 1.0;
        for col in 3..=5 {
            gi *= 1.0 + p.row(0)[col];
            gm *= 1.0 + p.row(1)[col];
        }
        let (ri, rm, q) = (gi - 1.0, gm - 1.0, 0.8);
        let grow = (r * 3.0 * dt).exp();
        let want = lambda
            * ((ri - q * rm)
                - grow * (1.0 - q)
                - c * (grow * (1.0 + q) + ((1.0 + ri) + q * (1.0 + rm)).abs()));
        assert!((tr.profit - want).abs() < 1e-12, "{} vs {want}", tr.profit);

        let e = &res.portfolio.equity;
        for k in 0..=N {
            let mut want = 100.0 * (r * k as f64 * dt).exp();
            if k >= 5 {
                want += tr.profit * (r * (k - 5) as f64 * dt).exp();
            }
            assert!((e[k] - want).abs() < 1e-9, "day {k}");
        }
        // Cash carries the outlay while the position is open.
        assert!(res.portfolio.cash[3] < e[3] - 1.0);
        assert!((res.portfolio.cash[N] - e[N]).abs() < 1e-9);
        assert!(res.conservation_gap().abs() < 1e-8);
    }

    #[test]
    fn freeze_blocks_late_opens_and_liquidates() {
        let mut s = vec![0.0; N];
        s[2] = -2.0;
        s[3] = -2.0;
        s[N - 2] = -2.0;
        let th = Thresholds::default();
        let mut tbl = table(&s);
        // Stock 0 stays stretched, so only the final liquidation closes it.
        for k in 3..N {
            tbl.scores[k][0] = score(-2.0);
        }
        let res = simulate(&tbl, &th, &cfg(), &Universe::default()).unwrap();
        assert_eq!(res.trades.len(), 1);
        assert!(res.trades[0].forced);
        assert_eq!(res.trades[0].close_day, N);

        let mut late = vec![0.0; N];
        late[N - 2] = -2.0;
        let res = simulate(&table(&late), &th, &cfg(), &Universe::default()).unwrap();
        assert!(res.trades.is_empty());
    }

    #[test]
    fn ineligible_days_never_trade() {
        let mut tbl = table(&[-3.0; N]);
        for day in &mut tbl.scores {
            if let Some(s) = day[0].as_mut() {
                s.eligible = false;
            }
        }
        let res = simulate(&tbl, &Thresholds::default(), &cfg(), &Universe::default()).unwrap();
        assert!(res.trades.is_empty());
    }

    #[test]
    fn sector_curves_start_from_their_share() {
        let u = Universe::new([
            ("AAA".to_string(), Sector::Banks),
            ("BBB".to_string(), Sector::Fuels),
        ])
        .unwrap();
        let res = simulate(&table(&[0.0, -2.0, 0.0]), &Thresholds::default(), &cfg(), &u).unwrap();
        assert_eq!(res.sectors.len(), 2);
        assert_eq!(res.sectors[&Sector::Banks].equity[0], 50.0);
        let banks = &res.sectors[&Sector::Banks];
        let fuels = &res.sectors[&Sector::Fuels];
        let total = banks.equity[N] + fuels.equity[N];
        assert!((total - res.final_equity()).abs() < 1e-9);
        assert!(banks.active[2] && !fuels.active[2]);
    }

    #[test]
    fn signal_log_records_scored_days() {
        let c = SimConfig {
            log_signals: true,
            ..cfg()
        };
        let res = simulate(&table(&[0.0, -2.0, 0.0]), &Thresholds::default(), &c, &Universe::default()).unwrap();
        let actions: Vec<Signal> = res.signals.iter().map(|e| e.action).collect();
        assert_eq!(actions, vec![Signal::Hold, Signal::OpenLong, Signal::CloseLong]);
    }
}
