use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use statarb_core::analytics::{axis, grid_search, sector_report, PORTFOLIO};
use statarb_core::backtest::{compute_scores, simulate, Curve, ProviderSpec, ScoreTable};
use statarb_core::lstm::{save_checkpoint, train};
use statarb_core::marketdata::{
    align, backfill_from_index, compute_returns, filter_by_coverage, generate_synthetic_market,
    load_prices, PriceMap,
};
use statarb_core::output::{
    fmt_sig10, write_equity, write_grid, write_loss_trace, write_ou, write_sectors, write_sharpe,
    write_signals, write_trades,
};
use statarb_core::{BacktestResult, Error, ReturnsPanel, Sector, Universe};

use crate::config::RunConfig;
use crate::{CliError, CommandKind, Options};

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// One-line human summary.
    pub summary: String,
}

struct Context {
    cfg: RunConfig,
    raw: Vec<u8>,
    out: PathBuf,
    kind: CommandKind,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(kind: CommandKind, opts: &Options) -> Result<Outcome, CliError> {
    let (mut cfg, raw) = RunConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        if let Some(s) = cfg.synthetic.as_mut() {
            s.seed = None;
        }
    }
    cfg.validate()?;
    let out = opts
        .out
        .clone()
        .or_else(|| std::env::var_os("STATARB_OUT").map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    let ctx = Context { cfg, raw, out, kind };

    let threads = opts.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut outcome = pool.install(|| match kind {
        CommandKind::Backtest => cmd_backtest(&ctx),
        CommandKind::Gridsearch => cmd_gridsearch(&ctx),
        CommandKind::Synth => cmd_synth(&ctx),
        CommandKind::TrainLstm => cmd_train_lstm(&ctx),
        CommandKind::Report => cmd_report(&ctx),
    })?;
    outcome.files.push(write_manifest(&ctx)?);
    Ok(outcome)
}

fn label(kind: CommandKind) -> &'static str {
    match kind {
        CommandKind::Backtest => "backtest",
        CommandKind::Gridsearch => "gridsearch",
        CommandKind::Synth => "synth",
        CommandKind::TrainLstm => "train-lstm",
        CommandKind::Report => "report",
    }
}

fn write_manifest(ctx: &Context) -> Result<PathBuf, CliError> {
    let hash: String = Sha256::digest(&ctx.raw)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let text = format!(
        "command = \"{}\"\nversion = \"{}\"\nseed = {}\nconfig_sha256 = \"{hash}\"\n",
        label(ctx.kind),
        env!("CARGO_PKG_VERSION"),
        ctx.cfg.seed,
    );
    let path = ctx.path("manifest.toml");
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Stock returns, optional fund returns and sector labels of a run.
pub struct Dataset {
    pub panel: ReturnsPanel,
    pub funds: Option<ReturnsPanel>,
    pub universe: Universe,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let mut ds = match &cfg.data {
        Some(d) => {
            if !d.universe.is_file() {
                return Err(CliError::Config(format!(
                    "universe file {} not found",
                    d.universe.display()
                )));
            }
            let universe = Universe::load(&d.universe)?;
            let prices = load_prices(&d.prices, &universe.tickers)?;
            let (kept, excluded) = filter_by_coverage(&prices, d.max_missing);
            if !excluded.is_empty() {
                log::warn!("excluded for missing data: {}", excluded.join(", "));
            }
            let funds = match &d.funds {
                Some(p) => {
                    let mut funds = load_prices(p, &[])?;
                    if let Some(ip) = &d.fund_indices {
                        let indices = load_prices(ip, &[])?;
                        for (t, bars) in funds.iter_mut() {
                            if let Some(idx) = indices.get(t) {
                                *bars = backfill_from_index(bars, idx)?;
                            }
                        }
                    }
                    Some(funds)
                }
                None => None,
            };
            let (panel, funds) = joint_returns(kept, funds)?;
            Dataset {
                panel,
                funds,
                universe,
            }
        }
        None => {
            let m = generate_synthetic_market(&cfg.synthetic_config()?)?;
            Dataset {
                panel: m.panel,
                funds: Some(m.funds),
                universe: m.universe,
            }
        }
    };
    if let Some(start) = cfg.dates.train_start {
        let first = ds.panel.first_on_or_after(start).ok_or_else(|| {
            CliError::Config(format!("dates.train_start {start} is after the last data date"))
        })?;
        let all = first..ds.panel.n_days();
        ds.panel = ds.panel.slice_days(all.clone());
        ds.funds = ds.funds.map(|f| f.slice_days(all));
    }
    Ok(ds)
}

/// Aligns stocks and funds on their common dates before taking returns.
fn joint_returns(
    stocks: PriceMap,
    funds: Option<PriceMap>,
) -> Result<(ReturnsPanel, Option<ReturnsPanel>), CliError> {
    let Some(funds) = funds else {
        return Ok((compute_returns(&stocks)?, None));
    };
    let mut merged = stocks.clone();
    for (t, bars) in &funds {
        if merged.insert(t.clone(), bars.clone()).is_some() {
            return Err(CliError::Config(format!("ticker {t} is both a stock and a fund")));
        }
    }
    let aligned = align(&merged)?;
    let pick = |keys: &PriceMap| -> PriceMap {
        keys.keys().map(|k| (k.clone(), aligned[k].clone())).collect()
    };
    Ok((compute_returns(&pick(&stocks))?, Some(compute_returns(&pick(&funds))?)))
}

/// Panel columns traded under `cfg`.
pub fn trade_range(cfg: &RunConfig, panel: &ReturnsPanel) -> Result<Range<usize>, CliError> {
    let start = match cfg.dates.trade_start {
        Some(d) => panel
            .first_on_or_after(d)
            .ok_or_else(|| CliError::Config(format!("dates.trade_start {d} is after the data")))?,
        None => cfg.lookback()?.max(1),
    };
    let end = match cfg.dates.trade_end {
        Some(d) => {
            panel
                .last_on_or_before(d)
                .ok_or_else(|| CliError::Config(format!("dates.trade_end {d} is before the data")))?
                + 1
        }
        None => panel.n_days(),
    };
    if start >= end {
        return Err(CliError::Config(format!(
            "empty trading period: {} trading columns available after a lookback of {start}",
            end.saturating_sub(start)
        )));
    }
    Ok(start..end)
}

pub fn provider_spec(cfg: &RunConfig, ds: &Dataset) -> Result<ProviderSpec, CliError> {
    if let Some(spec) = cfg.pca_or_lstm_spec()? {
        return Ok(spec);
    }
    let funds = ds
        .funds
        .clone()
        .ok_or_else(|| CliError::Config("index-fund provider needs fund data".into()))?;
    Ok(ProviderSpec::Funds {
        provider: cfg.provider()?,
        funds,
    })
}

fn scores(ctx: &Context) -> Result<(Dataset, ScoreTable), CliError> {
    let ds = load_dataset(&ctx.cfg)?;
    let trade = trade_range(&ctx.cfg, &ds.panel)?;
    let spec = provider_spec(&ctx.cfg, &ds)?;
    log::info!(
        "scoring {} stocks over {} days with provider {}",
        ds.panel.n_assets(),
        trade.len(),
        spec.provider()
    );
    let table = compute_scores(&ds.panel, &spec, trade, &ctx.cfg.score_config()?)?;
    Ok((ds, table))
}

fn cmd_backtest(ctx: &Context) -> Result<Outcome, CliError> {
    let (ds, table) = scores(ctx)?;
    let sim = ctx.cfg.sim_config();
    let res = simulate(&table, &ctx.cfg.thresholds()?, &sim, &ds.universe)?;
    let gap = res.conservation_gap();
    if !(gap.abs() <= 1e-8 * sim.e0.max(1.0)) {
        return Err(Error::Contract(format!(
            "ledger conservation violated: E_T differs from the compounded trade sum by {gap:e}"
        ))
        .into());
    }
    let sharpe = sector_report(&res);
    let mut files = vec![
        ctx.path("equity.csv"),
        ctx.path("trades.csv"),
        ctx.path("sectors.csv"),
        ctx.path("sharpe.csv"),
        ctx.path("ou.csv"),
    ];
    write_equity(&files[0], &res)?;
    write_trades(&files[1], &res)?;
    write_sectors(&files[2], &res)?;
    write_sharpe(&files[3], &sharpe)?;
    write_ou(&files[4], &table)?;
    if sim.log_signals {
        let p = ctx.path("signals.csv");
        write_signals(&p, &res.signals)?;
        files.push(p);
    }
    let mut summary = format!(
        "E_T={} trades={}",
        fmt_sig10(res.final_equity()),
        res.trades.len()
    );
    for row in sharpe.iter().filter(|r| r.group == PORTFOLIO) {
        let _ = write!(summary, " sharpe[{}]={}", row.year, fmt_sig10(row.sharpe));
    }
    Ok(Outcome {
        out_dir: ctx.out.clone(),
        files,
        summary,
    })
}

fn cmd_gridsearch(ctx: &Context) -> Result<Outcome, CliError> {
    let g = ctx
        .cfg
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("gridsearch needs a [grid] section".into()))?;
    let opens = axis(g.open_min, g.open_max, g.open_step)?;
    let closes = axis(g.close_min, g.close_max, g.close_step)?;
    let (ds, table) = scores(ctx)?;
    let grid = grid_search(&table, &opens, &closes, &ctx.cfg.sim_config(), &ds.universe)?;
    let path = ctx.path("grid.csv");
    write_grid(&path, &grid)?;
    let (o, c) = grid.best_thresholds();
    Ok(Outcome {
        out_dir: ctx.out.clone(),
        files: vec![path],
        summary: format!(
            "best open={} close={} profit={} cells={}",
            fmt_sig10(o),
            fmt_sig10(c),
            fmt_sig10(grid.best_profit()),
            opens.len() * closes.len()
        ),
    })
}

fn cmd_synth(ctx: &Context) -> Result<Outcome, CliError> {
    let scfg = ctx.cfg.synthetic_config()?;
    let m = generate_synthetic_market(&scfg)?;
    m.write(&ctx.out)?;
    let mut files: Vec<PathBuf> = m
        .prices
        .keys()
        .map(|t| ctx.out.join("prices").join(format!("{t}.csv")))
        .collect();
    files.extend(m.truth.keys().map(|t| ctx.out.join("truth").join(format!("{t}.csv"))));
    files.extend(m.fund_prices.keys().map(|t| ctx.out.join("funds").join(format!("{t}.csv"))));
    files.push(ctx.out.join("universe.csv"));
    Ok(Outcome {
        out_dir: ctx.out.clone(),
        files,
        summary: format!(
            "wrote {} stocks and {} funds over {} days (seed {})",
            scfg.d,
            scfg.factor_vols.len(),
            scfg.n,
            scfg.seed
        ),
    })
}

fn cmd_train_lstm(ctx: &Context) -> Result<Outcome, CliError> {
    let ds = load_dataset(&ctx.cfg)?;
    let tcfg = ctx.cfg.train_config();
    let end = match ctx.cfg.dates.trade_start {
        Some(_) => trade_range(&ctx.cfg, &ds.panel)?.start,
        None => ds.panel.n_days(),
    };
    if end < tcfg.train_days {
        return Err(CliError::Config(format!(
            "lstm.train_days = {} but only {end} days precede the trading period",
            tcfg.train_days
        )));
    }
    let history = ds.panel.slice_days(end - tcfg.train_days..end);
    let targets = if ctx.cfg.lstm.targets.is_empty() {
        history.tickers.clone()
    } else {
        ctx.cfg.lstm.targets.clone()
    };
    let dir = ctx.out.join("lstm");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut files = Vec::new();
    let mut final_losses = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let local = statarb_core::lstm::TrainConfig {
            seed: statarb_core::rng::derive_seed(tcfg.seed, &[i as u64]),
            ..tcfg.clone()
        };
        let fit = train(&history, t, &local)?;
        let ckpt = dir.join(format!("{t}.ckpt"));
        let loss = dir.join(format!("{t}_loss.csv"));
        save_checkpoint(&fit.model, &ckpt)?;
        write_loss_trace(&loss, &fit.loss_trace)?;
        final_losses.push(*fit.loss_trace.last().unwrap_or(&f64::NAN));
        files.push(ckpt);
        files.push(loss);
    }
    let mean = final_losses.iter().sum::<f64>() / final_losses.len().max(1) as f64;
    Ok(Outcome {
        out_dir: ctx.out.clone(),
        files,
        summary: format!(
            "trained {} models on {} days; mean final loss {}",
            targets.len(),
            history.n_days(),
            fmt_sig10(mean)
        ),
    })
}

fn read_table(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        msg: e.to_string(),
    })?;
    rdr.records()
        .map(|r| {
            r.map_err(|e| {
                Error::Parse {
                    path: path.into(),
                    line: e.position().map_or(0, |p| p.line()),
                    msg: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T, CliError> {
    let line = rec.position().map_or(0, |p| p.line());
    let s = rec.get(i).unwrap_or("");
    s.parse().map_err(|_| {
        Error::Parse {
            path: path.into(),
            line,
            msg: format!("bad field {i}: {s:?}"),
        }
        .into()
    })
}

/// Rebuilds a result from `equity.csv`, `sectors.csv` and `trades.csv`.
fn load_result(dir: &Path, r_f: f64) -> Result<BacktestResult, CliError> {
    let eq_path = dir.join("equity.csv");
    let mut dates = Vec::new();
    let mut equity = Vec::new();
    let mut cash = Vec::new();
    for rec in read_table(&eq_path)? {
        dates.push(field::<NaiveDate>(&eq_path, &rec, 0)?);
        equity.push(field::<f64>(&eq_path, &rec, 1)?);
        cash.push(field::<f64>(&eq_path, &rec, 2)?);
    }
    if dates.len() < 2 {
        return Err(Error::Alignment(format!("{} has fewer than two rows", eq_path.display())).into());
    }
    let index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(k, d)| (*d, k)).collect();
    let n = dates.len();

    let mut active: BTreeMap<Sector, Vec<bool>> = BTreeMap::new();
    let tr_path = dir.join("trades.csv");
    for rec in read_table(&tr_path)? {
        let sector: Sector = field(&tr_path, &rec, 1)?;
        let open: NaiveDate = field(&tr_path, &rec, 3)?;
        let close: NaiveDate = field(&tr_path, &rec, 4)?;
        let (Some(&a), Some(&b)) = (index.get(&open), index.get(&close)) else {
            return Err(Error::Alignment(format!("trade {open}..{close} outside equity.csv dates")).into());
        };
        let flags = active.entry(sector).or_insert_with(|| vec![false; n]);
        flags[a..=b].iter_mut().for_each(|f| *f = true);
    }

    let se_path = dir.join("sectors.csv");
    let mut sectors: BTreeMap<Sector, Curve> = BTreeMap::new();
    for rec in read_table(&se_path)? {
        let sector: Sector = field(&se_path, &rec, 1)?;
        let c = sectors.entry(sector).or_insert_with(|| Curve {
            e0: 1.0,
            equity: Vec::with_capacity(n),
            cash: Vec::with_capacity(n),
            active: Vec::new(),
        });
        c.equity.push(field(&se_path, &rec, 2)?);
        c.cash.push(field(&se_path, &rec, 3)?);
    }
    for (s, c) in sectors.iter_mut() {
        if c.equity.len() != n {
            return Err(Error::Alignment(format!("sector {s} has {} rows, expected {n}", c.equity.len())).into());
        }
        c.active = active.get(s).cloned().unwrap_or_else(|| vec![false; n]);
    }
    let mut any = vec![false; n];
    for flags in active.values() {
        for (a, f) in any.iter_mut().zip(flags) {
            *a |= f;
        }
    }
    Ok(BacktestResult {
        dates,
        portfolio: Curve {
            e0: equity[0],
            equity,
            cash,
            active: any,
        },
        sectors,
        trades: Vec::new(),
        signals: Vec::new(),
        r_f,
    })
}

fn cmd_report(ctx: &Context) -> Result<Outcome, CliError> {
    let res = load_result(&ctx.out, ctx.cfg.sim.r_f)?;
    let rows = sector_report(&res);
    let path = ctx.path("sharpe.csv");
    write_sharpe(&path, &rows)?;
    let mut summary = String::new();
    let _ = write!(summary, "{:<14}", "group");
    let years: Vec<i32> = {
        let mut y: Vec<i32> = rows.iter().map(|r| r.year).collect();
        y.dedup();
        y
    };
    for y in &years {
        let _ = write!(summary, "{y:>12}");
    }
    let groups: Vec<String> = Sector::ALL
        .iter()
        .map(|s| s.label().to_string())
        .chain([PORTFOLIO.to_string()])
        .collect();
    for g in &groups {
        let _ = write!(summary, "\n{g:<14}");
        for y in &years {
            let s = rows
                .iter()
                .find(|r| r.year == *y && &r.group == g)
                .map_or(f64::NAN, |r| r.sharpe);
            let _ = write!(summary, "{:>12}", format!("{s:.3}"));
        }
    }
    Ok(Outcome {
        out_dir: ctx.out.clone(),
        files: vec![path],
        summary,
    })
}
