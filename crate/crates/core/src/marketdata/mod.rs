//! Price ingestion, alignment and return panels.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use synthetic::{business_days, generate_synthetic_market, SyntheticMarket, SyntheticMarketConfig};

/// Trading days per year; one day is `1/252` years everywhere.
pub const TRADING_DAYS: f64 = 252.0;
pub const DT: f64 = 1.0 / TRADING_DAYS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub adj_close: f64,
}

pub type PriceMap = BTreeMap<String, Vec<Bar>>;

/// Aligned daily simple returns, one row per ticker.
///
/// Column `t` holds the return realised at the close of `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub returns: Matrix,
}

impl ReturnsPanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, returns: Matrix) -> Result<Self> {
        if returns.rows() != tickers.len() || returns.cols() != dates.len() {
            return Err(Error::Contract(format!(
                "panel shape {}x{} does not match {} tickers x {} dates",
                returns.rows(),
                returns.cols(),
                tickers.len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment("panel dates not strictly increasing".into()));
        }
        if let Some(r) = returns.as_slice().iter().find(|r| !(**r > -1.0)) {
            return Err(Error::Domain(format!("return {r} is not above -1")));
        }
        Ok(ReturnsPanel {
            tickers,
            dates,
            returns,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.returns.row(i)
    }

    pub fn index_of(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// First column whose date is on or after `date`.
    pub fn first_on_or_after(&self, date: NaiveDate) -> Option<usize> {
        let i = self.dates.partition_point(|d| *d < date);
        (i < self.dates.len()).then_some(i)
    }

    /// Last column whose date is on or before `date`.
    pub fn last_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|d| *d <= date).checked_sub(1)
    }

    /// Compounded simple return of row `i` over columns `(from, to]`.
    pub fn cumulative_return(&self, i: usize, from: usize, to: usize) -> f64 {
        self.row(i)[from + 1..=to]
            .iter()
            .fold(1.0, |acc, r| acc * (1.0 + r))
            - 1.0
    }

    /// Restricts the panel to a column range.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> ReturnsPanel {
        let rows: Vec<Vec<f64>> = (0..self.n_assets())
            .map(|i| self.row(i)[range.clone()].to_vec())
            .collect();
        ReturnsPanel {
            tickers: self.tickers.clone(),
            dates: self.dates[range].to_vec(),
            returns: Matrix::from_rows(&rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sector {
    Architecture,
    Banks,
    Chemistry,
    Clothes,
    Energy,
    Food,
    Fuels,
    Games,
    Informatics,
    Media,
    Mining,
    Moto,
    Pharma,
    RealEstate,
    Other,
}

impl Sector {
    pub const ALL: [Sector; 15] = [
        Sector::Architecture,
        Sector::Banks,
        Sector::Chemistry,
        Sector::Clothes,
        Sector::Energy,
        Sector::Food,
        Sector::Fuels,
        Sector::Games,
        Sector::Informatics,
        Sector::Media,
        Sector::Mining,
        Sector::Moto,
        Sector::Pharma,
        Sector::RealEstate,
        Sector::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Sector::Architecture => "ARCHITECTURE",
            Sector::Banks => "BANKS",
            Sector::Chemistry => "CHEMISTRY",
            Sector::Clothes => "CLOTHES",
            Sector::Energy => "ENERGY",
            Sector::Food => "FOOD",
            Sector::Fuels => "FUELS",
            Sector::Games => "GAMES",
            Sector::Informatics => "INFORMATICS",
            Sector::Media => "MEDIA",
            Sector::Mining => "MINING",
            Sector::Moto => "MOTO",
            Sector::Pharma => "PHARMA",
            Sector::RealEstate => "REAL_ESTATE",
            Sector::Other => "OTHER",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_uppercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let sector = match norm.as_str() {
            "ARCHITECTURE" | "ARCHT" => Sector::Architecture,
            "BANKS" => Sector::Banks,
            "CHEMISTRY" | "CHEM" => Sector::Chemistry,
            "CLOTHES" => Sector::Clothes,
            "ENERGY" => Sector::Energy,
            "FOOD" => Sector::Food,
            "FUELS" => Sector::Fuels,
            "GAMES" => Sector::Games,
            "INFORMATICS" | "INFRMTCS" => Sector::Informatics,
            "MEDIA" => Sector::Media,
            "MINING" => Sector::Mining,
            "MOTO" => Sector::Moto,
            "PHARMA" => Sector::Pharma,
            "REAL_ESTATE" | "REAL_EST" => Sector::RealEstate,
            "OTHER" | "OTHERS" => Sector::Other,
            _ => return Err(Error::Domain(format!("unknown sector label {s:?}"))),
        };
        Ok(sector)
    }
}

/// Traded tickers and their sector labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Universe {
    pub tickers: Vec<String>,
    pub sector_of: BTreeMap<String, Sector>,
}

impl Universe {
    pub fn new(entries: impl IntoIterator<Item = (String, Sector)>) -> Result<Self> {
        let mut u = Universe::default();
        for (ticker, sector) in entries {
            if u.sector_of.insert(ticker.clone(), sector).is_some() {
                return Err(Error::Domain(format!("ticker {ticker} listed twice")));
            }
            u.tickers.push(ticker);
        }
        Ok(u)
    }

    pub fn sector(&self, ticker: &str) -> Sector {
        self.sector_of.get(ticker).copied().unwrap_or(Sector::Other)
    }

    /// Reads `ticker,sector` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 2 {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("expected 2 fields, got {}", rec.len()),
                });
            }
            let sector = rec[1].parse().map_err(|e: Error| Error::Parse {
                path: path.into(),
                line,
                msg: e.to_string(),
            })?;
            entries.push((rec[0].to_string(), sector));
        }
        Universe::new(entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["ticker", "sector"])
            .map_err(|e| Error::csv(path, e))?;
        for t in &self.tickers {
            w.write_record([t.as_str(), self.sector(t).label()])
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        Ok(files)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}

/// Loads `ticker,date,adj_close` rows from a CSV file, or from every `.csv`
/// file in a directory.
///
/// An empty `tickers` slice loads everything. Each returned series is sorted
/// by date.
pub fn load_prices(path: &Path, tickers: &[String]) -> Result<PriceMap> {
    let wanted: HashSet<&str> = tickers.iter().map(String::as_str).collect();
    let mut out: PriceMap = BTreeMap::new();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();
    for file in csv_files(path)? {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(&file)
            .map_err(|e| Error::csv(&file, e))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| match e.position() {
                Some(p) => Error::Parse {
                    path: file.clone(),
                    line: p.line(),
                    msg: e.to_string(),
                },
                None => Error::csv(&file, e),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse_err = |msg: String| Error::Parse {
                path: file.clone(),
                line,
                msg,
            };
            if rec.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", rec.len())));
            }
            let ticker = &rec[0];
            if !wanted.is_empty() && !wanted.contains(ticker) {
                continue;
            }
            let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
                .map_err(|e| parse_err(format!("bad date {:?}: {e}", &rec[1])))?;
            let price: f64 = rec[2]
                .parse()
                .map_err(|e| parse_err(format!("bad price {:?}: {e}", &rec[2])))?;
            if !(price > 0.0) || !price.is_finite() {
                return Err(Error::NonPositivePrice {
                    path: file.clone(),
                    line,
                    ticker: ticker.to_string(),
                    price,
                });
            }
            if !seen.insert((ticker.to_string(), date)) {
                return Err(Error::DuplicateRow {
                    path: file.clone(),
                    ticker: ticker.to_string(),
                    date: date.to_string(),
                });
            }
            out.entry(ticker.to_string()).or_default().push(Bar {
                date,
                adj_close: price,
            });
        }
    }
    for t in tickers {
        if !out.contains_key(t) {
            return Err(Error::MissingTicker(t.clone()));
        }
    }
    for series in out.values_mut() {
        series.sort_by_key(|b| b.date);
    }
    Ok(out)
}

/// Writes price series as `ticker,date,adj_close` with round-trip precision.
pub fn write_prices(path: &Path, prices: &PriceMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["ticker", "date", "adj_close"])
        .map_err(|e| Error::csv(path, e))?;
    for (ticker, bars) in prices {
        for b in bars {
            w.write_record([
                ticker.as_str(),
                &b.date.format("%Y-%m-%d").to_string(),
                &format!("{}", b.adj_close),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Drops tickers missing on more than `max_missing` of the union of dates.
///
/// Returns the kept series and the excluded tickers.
pub fn filter_by_coverage(prices: &PriceMap, max_missing: f64) -> (PriceMap, Vec<String>) {
    let union: BTreeSet<NaiveDate> = prices.values().flatten().map(|b| b.date).collect();
    let total = union.len().max(1) as f64;
    let mut kept = PriceMap::new();
    let mut excluded = Vec::new();
    for (t, bars) in prices {
        let missing = 1.0 - bars.len() as f64 / total;
        if missing > max_missing {
            excluded.push(t.clone());
        } else {
            kept.insert(t.clone(), bars.clone());
        }
    }
    (kept, excluded)
}

/// Restricts each series to the dates shared by every series.
pub fn align(prices: &PriceMap) -> Result<PriceMap> {
    let mut common: Option<BTreeSet<NaiveDate>> = None;
    for bars in prices.values() {
        let dates: BTreeSet<NaiveDate> = bars.iter().map(|b| b.date).collect();
        common = Some(match common {
            None => dates,
            Some(c) => c.intersection(&dates).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(Error::Alignment("empty date intersection".into()));
    }
    Ok(prices
        .iter()
        .map(|(t, bars)| {
            let kept = bars
                .iter()
                .filter(|b| common.contains(&b.date))
                .copied()
                .collect();
            (t.clone(), kept)
        })
        .collect())
}

/// Simple daily returns on the intersection of dates.
///
/// The panel has one column fewer than the number of common dates.
pub fn compute_returns(prices: &PriceMap) -> Result<ReturnsPanel> {
    if prices.is_empty() {
        return Err(Error::Alignment("no price series".into()));
    }
    let aligned = align(prices)?;
    let first = aligned.values().next().expect("non-empty");
    if first.len() < 2 {
        return Err(Error::Alignment(format!(
            "only {} common date(s); need at least 2",
            first.len()
        )));
    }
    let dates: Vec<NaiveDate> = first[1..].iter().map(|b| b.date).collect();
    let rows: Vec<Vec<f64>> = aligned
        .values()
        .map(|bars| {
            bars.windows(2)
                .map(|w| (w[1].adj_close - w[0].adj_close) / w[0].adj_close)
                .collect()
        })
        .collect();
    ReturnsPanel::new(
        aligned.keys().cloned().collect(),
        dates,
        Matrix::from_rows(&rows),
    )
}

/// Value of one currency unit invested at the start: `[1, (1+r0), ...]`.
pub fn relative_price(returns: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(returns.len() + 1);
    out.push(1.0);
    let mut level = 1.0;
    for &r in returns {
        if !(r > -1.0) {
            return Err(Error::Domain(format!("return {r} is not above -1")));
        }
        level *= 1.0 + r;
        out.push(level);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    /// `std / mean`; `None` when the mean is zero.
    pub rel_std: Option<f64>,
}

pub fn summary_stats(series: &[f64]) -> Result<SummaryStats> {
    if series.len() < 2 {
        return Err(Error::InsufficientWindow {
            needed: 2,
            have: series.len(),
        });
    }
    let mean = crate::linalg::mean(series);
    let std = crate::linalg::sample_variance(series).sqrt();
    let rel_std = (mean != 0.0).then(|| std / mean);
    Ok(SummaryStats { mean, std, rel_std })
}

/// Extends a fund's history backwards using the returns of the index it
/// tracks. Fund bars win wherever both exist.
pub fn backfill_from_index(fund: &[Bar], index: &[Bar]) -> Result<Vec<Bar>> {
    let Some(first) = fund.first() else {
        return Err(Error::Alignment("empty fund series".into()));
    };
    let anchor = index
        .iter()
        .position(|b| b.date == first.date)
        .ok_or_else(|| Error::Alignment(format!("index has no bar on {}", first.date)))?;
    let mut out: Vec<Bar> = Vec::with_capacity(anchor + fund.len());
    let mut level = first.adj_close;
    for k in (0..anchor).rev() {
        level *= index[k].adj_close / index[k + 1].adj_close;
        out.push(Bar {
            date: index[k].date,
            adj_close: level,
        });
    }
    out.reverse();
    out.extend_from_slice(fund);
    Ok(out)
}
