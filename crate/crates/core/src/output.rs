//! CSV emitters. Every float is printed with 10 significant digits.

use std::path::Path;

use crate::analytics::{GridResult, SharpeRow};
use crate::backtest::{BacktestResult, ScoreTable, SignalEvent};
use crate::error::{Error, Result};
use crate::signals::PositionState;

/// `printf("%.10g")`, with `inf`, `-inf` and `nan` spelled out.
pub fn fmt_sig10(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.9e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..10).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (9 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn direction(p: PositionState) -> &'static str {
    match p {
        PositionState::Long => "long",
        PositionState::Short => "short",
        PositionState::Flat => "flat",
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `date,E,C`, starting with the anchor row.
pub fn write_equity(path: &Path, res: &BacktestResult) -> Result<()> {
    let p = &res.portfolio;
    write_rows(
        path,
        &["date", "E", "C"],
        res.dates
            .iter()
            .enumerate()
            .map(|(k, d)| vec![d.to_string(), fmt_sig10(p.equity[k]), fmt_sig10(p.cash[k])]),
    )
}

pub fn write_trades(path: &Path, res: &BacktestResult) -> Result<()> {
    write_rows(
        path,
        &[
            "ticker", "sector", "direction", "open_date", "close_date", "lambda", "qm", "r_i",
            "r_m", "profit", "forced",
        ],
        res.trades.iter().map(|t| {
            vec![
                t.ticker.clone(),
                t.sector.label().to_string(),
                direction(t.direction).to_string(),
                t.open_date.to_string(),
                t.close_date.to_string(),
                fmt_sig10(t.lambda),
                fmt_sig10(t.qm),
                fmt_sig10(t.r_i),
                fmt_sig10(t.r_m),
                fmt_sig10(t.profit),
                u8::from(t.forced).to_string(),
            ]
        }),
    )
}

/// `date,sector,relE,relC`: each sector's curves divided by its starting capital.
pub fn write_sectors(path: &Path, res: &BacktestResult) -> Result<()> {
    let rows = res.dates.iter().enumerate().flat_map(|(k, d)| {
        res.sectors.iter().map(move |(s, c)| {
            vec![
                d.to_string(),
                s.label().to_string(),
                fmt_sig10(c.equity[k] / c.e0),
                fmt_sig10(c.cash[k] / c.e0),
            ]
        })
    });
    write_rows(path, &["date", "sector", "relE", "relC"], rows)
}

pub fn write_sharpe(path: &Path, rows: &[SharpeRow]) -> Result<()> {
    write_rows(
        path,
        &["year", "group", "S"],
        rows.iter()
            .map(|r| vec![r.year.to_string(), r.group.clone(), fmt_sig10(r.sharpe)]),
    )
}

/// `open,close,profit,best`, row-major over the grid.
pub fn write_grid(path: &Path, grid: &GridResult) -> Result<()> {
    let rows = grid.opens.iter().enumerate().flat_map(|(i, o)| {
        grid.closes.iter().enumerate().map(move |(j, c)| {
            vec![
                fmt_sig10(*o),
                fmt_sig10(*c),
                fmt_sig10(grid.cells[i][j]),
                u8::from(grid.best == (i, j)).to_string(),
            ]
        })
    });
    write_rows(path, &["open", "close", "profit", "best"], rows)
}

/// Fitted OU parameters for every scored stock-day.
pub fn write_ou(path: &Path, table: &ScoreTable) -> Result<()> {
    let panel = &table.panel;
    let rows = table.scores.iter().enumerate().flat_map(|(k, day)| {
        let date = panel.dates[table.trade.start + k];
        day.iter().enumerate().filter_map(move |(i, s)| {
            s.as_ref().map(|s| {
                vec![
                    panel.tickers[i].clone(),
                    date.to_string(),
                    fmt_sig10(s.ou.kappa),
                    fmt_sig10(s.ou.mu),
                    fmt_sig10(s.ou.sigma),
                    fmt_sig10(s.ou.sigma_eq),
                    fmt_sig10(s.s),
                ]
            })
        })
    });
    write_rows(
        path,
        &["ticker", "date", "kappa", "mu", "sigma", "sigma_eq", "s_score"],
        rows,
    )
}

pub fn write_signals(path: &Path, events: &[SignalEvent]) -> Result<()> {
    write_rows(
        path,
        &["ticker", "date", "g", "action"],
        events.iter().map(|e| {
            vec![
                e.ticker.clone(),
                e.date.to_string(),
                fmt_sig10(e.g),
                e.action.label().to_string(),
            ]
        }),
    )
}

pub fn write_loss_trace(path: &Path, losses: &[f64]) -> Result<()> {
    write_rows(
        path,
        &["epoch", "loss"],
        losses
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), fmt_sig10(*l)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig10_matches_printf() {
        let cases = [
            (100.0, "100"),
            (1.0 / 3.0, "0.3333333333"),
            (3.3333333333333335, "3.333333333"),
            (-0.004, "-0.004"),
            (1e-5, "1e-05"),
            (1.23456789012e-7, "1.23456789e-07"),
            (12345678901.0, "1.23456789e+10"),
            (9999999999.5, "1e+10"),
            (1234567890.0, "1234567890"),
            (0.0001, "0.0001"),
            (f64::NEG_INFINITY, "-inf"),
            (f64::INFINITY, "inf"),
            (0.0, "0"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_sig10(v), want, "{v}");
        }
    }

    #[test]
    fn sig10_roundtrips_to_ten_digits() {
        for v in [std::f64::consts::PI, -2.718281828459045e-3, 6.02214076e23] {
            let back: f64 = fmt_sig10(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 5e-10);
        }
    }
}
