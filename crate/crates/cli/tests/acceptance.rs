//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

use statarb_cli::{run, CommandKind, Options, RunConfig};
use statarb_core::analytics::{annualized_sharpe, grid_search, sector_report, PORTFOLIO};
use statarb_core::backtest::{compute_scores, run_backtest, ProviderSpec, ScoreConfig, SimConfig};
use statarb_core::factors::{correlation_matrix, explained_fraction, standardize, symmetric_eigen};
use statarb_core::lstm::{infer_beta_provider, loss, loss_and_grad, train, StackedLstm, TrainConfig};
use statarb_core::marketdata::{generate_synthetic_market, SyntheticMarketConfig};
use statarb_core::ou::{ar1_to_ou, fit_ar1, simulate_ou, Ar1Fit};
use statarb_core::signals::decide;
use statarb_core::{Matrix, PositionState, RSelection, ReturnsPanel, Sector, Signal, Thresholds, DT};

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn main() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("eigen-correctness", eigen_correctness),
        ("ou-roundtrip", ou_roundtrip),
        ("ar1-ou-inversion", ar1_ou_inversion),
        ("lstm-gradient-check", lstm_gradient_check),
        ("lstm-planted-relation", lstm_planted_relation),
        ("signal-machine", signal_machine),
        ("ledger-conservation", ledger_conservation),
        ("economic-sanity", economic_sanity),
        ("sharpe-formula", sharpe_formula),
        ("determinism", determinism),
        ("gpw-data", gpw_data),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!(
            "criterion {:>2} {:<24} {tag}  [{:.2}s] {}",
            i + 1,
            name,
            t0.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn eigen_correctness() -> Verdict {
    let t0 = Instant::now();
    let sigma = Matrix::from_rows(&[[1.0, 0.8], [0.8, 1.0]]);
    let eig = symmetric_eigen(&sigma).unwrap();
    let v = eig.vector(0);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let exact = (eig.eigenvalues[0] - 1.8).abs() <= 1e-10
        && (eig.eigenvalues[1] - 0.2).abs() <= 1e-10
        && (v[0] - h).abs() <= 1e-10
        && (v[1] - h).abs() <= 1e-10;

    // Correlated draws with the same covariance, scaled to look like returns.
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let n = 1000;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        a.push(0.01 * z1);
        b.push(0.01 * (0.8 * z1 + 0.6 * z2));
    }
    let panel = ReturnsPanel::new(
        vec!["A".into(), "B".into()],
        statarb_core::marketdata::business_days(date(2015, 1, 1), n),
        Matrix::from_rows(&[a, b]),
    )
    .unwrap();
    let (y, _) = standardize(&panel).unwrap();
    let sample = symmetric_eigen(&correlation_matrix(&y).unwrap()).unwrap();
    let (l1, l2) = (sample.eigenvalues[0], sample.eigenvalues[1]);
    let regime = (l1 - 1.8348).abs() <= 0.1 && (l2 - 0.1997).abs() <= 0.1;
    let el = t0.elapsed();
    verdict(
        exact && regime && within(el, 1.0),
        format!(
            "exact=({:.12}, {:.12}) f1=({:.12}, {:.12}) sample=({l1:.4}, {l2:.4})",
            eig.eigenvalues[0], eig.eigenvalues[1], v[0], v[1]
        ),
    )
}

fn ou_roundtrip() -> Verdict {
    let t0 = Instant::now();
    let (kappa, mu, sigma) = (6.0443, 0.2278, 0.3459);
    let truth = statarb_core::OuParams::new(kappa, mu, sigma);
    let path = simulate_ou(&truth, mu, 100_000, DT, 42);
    let est = ar1_to_ou(&fit_ar1(&path).unwrap(), DT).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let ok = rel(est.kappa, kappa) <= 0.10 && rel(est.mu, mu) <= 0.05 && rel(est.sigma, sigma) <= 0.05;
    verdict(
        ok && within(t0.elapsed(), 5.0),
        format!("kappa={:.4} mu={:.4} sigma={:.4}", est.kappa, est.mu, est.sigma),
    )
}

fn ar1_ou_inversion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let kappa = rng.random_range(0.5..60.0);
        let mu = rng.random_range(-0.5..0.5);
        let sigma = rng.random_range(0.01..1.0);
        let phi1 = (-kappa * DT).exp();
        let fit = Ar1Fit {
            phi0: mu * (1.0 - phi1),
            phi1,
            resid_var: sigma * sigma * (1.0 - phi1 * phi1) / (2.0 * kappa),
        };
        let p = ar1_to_ou(&fit, DT).unwrap();
        let errs = [
            (p.kappa - kappa).abs() / kappa,
            (p.mu - mu).abs() / mu.abs().max(1.0),
            (p.sigma - sigma).abs() / sigma,
        ];
        worst = errs.iter().fold(worst, |w, e| w.max(*e));
    }
    verdict(worst <= 1e-10, format!("worst relative error {worst:.2e} over 100 triples"))
}

fn lstm_gradient_check() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (input, hidden, w) = (3, 4, 5);
    let model = StackedLstm::init(input, hidden, &mut rng);
    let x = Matrix::from_vec(input, w, (0..input * w).map(|_| rng.random_range(-1.0..1.0)).collect());
    let r: Vec<f64> = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let penalty = 1e-3;
    let (_, grad) = loss_and_grad(&model, &x, &r, penalty).unwrap();

    // Fourth-order central stencil; the step stays small so no perturbed
    // beta crosses the kink of the L1 term.
    let h = 1e-4;
    let (mut checked, mut skipped) = (0, 0);
    let mut worst: f64 = 0.0;
    let n_tensors = model.tensors().len();
    for t in 0..n_tensors {
        for k in 0..model.tensors()[t].len() {
            let at = |step: f64| {
                let mut m = model.clone();
                m.tensors_mut()[t][k] += step;
                loss(&m, &x, &r, penalty).unwrap()
            };
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let a = grad.tensors()[t][k];
            // Entries that are zero up to finite-difference noise.
            if a.abs().max(fd.abs()) <= 1e-8 && (a - fd).abs() <= 1e-10 {
                skipped += 1;
                continue;
            }
            checked += 1;
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
        }
    }
    verdict(
        worst < 1e-4 && within(t0.elapsed(), 10.0),
        format!("{checked} entries compared, {skipped} zero, worst relative error {worst:.2e}"),
    )
}

fn lstm_planted_relation() -> Verdict {
    let t0 = Instant::now();
    let (n_train, n_test, warmup) = (600, 200, 60);
    let n = n_train + n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut normal = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        s * z
    };
    let neighbor: Vec<f64> = (0..n).map(|_| normal(0.01)).collect();
    let distractor: Vec<f64> = (0..n).map(|_| normal(0.01)).collect();
    let target: Vec<f64> = neighbor.iter().map(|x| 0.5 * x + normal(1e-4)).collect();
    let panel = ReturnsPanel::new(
        vec!["T".into(), "N".into(), "D".into()],
        statarb_core::marketdata::business_days(date(2015, 1, 1), n),
        Matrix::from_rows(&[target.clone(), neighbor.clone(), distractor.clone()]),
    )
    .unwrap();
    let cfg = TrainConfig {
        window: 60,
        batch: 16,
        l1_penalty: 0.0,
        epochs: 1500,
        hidden: 8,
        seed: 5,
        train_days: n_train,
        warmup,
        ..TrainConfig::default()
    };
    let out = train(&panel.slice_days(0..n_train), "T", &cfg).unwrap();
    let betas = infer_beta_provider(&out.model, &panel, 0, n_train..n, warmup).unwrap();
    let mut mae = 0.0;
    for (k, t) in (n_train..n).enumerate() {
        let pred = betas[(0, k)] * neighbor[t] + betas[(1, k)] * distractor[t];
        mae += (pred - target[t]).abs();
    }
    mae /= n_test as f64;
    let mean_beta = (0..n_test).map(|k| betas[(0, k)]).sum::<f64>() / n_test as f64;
    verdict(
        mae < 5e-4 && within(t0.elapsed(), 120.0),
        format!("held-out MAE {mae:.3e}, mean neighbour beta {mean_beta:.4}"),
    )
}

fn rule_table(th: &Thresholds) -> Vec<(PositionState, Box<dyn Fn(f64) -> bool + '_>, Signal)> {
    vec![
        (PositionState::Flat, Box::new(move |g| g < -th.g_ol), Signal::OpenLong),
        (PositionState::Flat, Box::new(move |g| g > th.g_os), Signal::OpenShort),
        (PositionState::Long, Box::new(move |g| g > -th.g_cl), Signal::CloseLong),
        (PositionState::Short, Box::new(move |g| g < th.g_cs), Signal::CloseShort),
    ]
}

fn signal_machine() -> Verdict {
    let sets = [
        Thresholds::CLASSIC,
        Thresholds::PCA,
        Thresholds::LSTM,
        Thresholds::EXISTING_ETF,
        Thresholds::SECTOR_ETF,
    ];
    let states = [PositionState::Short, PositionState::Flat, PositionState::Long];
    let (mut cases, mut mismatches) = (0, 0);
    for th in &sets {
        let rules = rule_table(th);
        for k in -30..=30 {
            let g = k as f64 / 10.0;
            for &s in &states {
                let want = rules
                    .iter()
                    .find(|(st, pred, _)| *st == s && pred(g))
                    .map(|r| r.2)
                    .unwrap_or(Signal::Hold);
                cases += 1;
                if decide(g, s, th) != want {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(mismatches == 0, format!("{cases} cases, {mismatches} mismatches"))
}

fn synthetic(d: usize, n: usize, kappa: f64, seed: u64) -> statarb_core::marketdata::SyntheticMarket {
    let cfg = SyntheticMarketConfig::uniform(d, n, vec![0.2, 0.12, 0.08], (kappa, 0.0, 0.3), seed);
    generate_synthetic_market(&cfg).unwrap()
}

fn ledger_conservation() -> Verdict {
    let (train_n, trade_n) = (252, 378);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut trades = 0;
    for seed in 0..5 {
        let m = synthetic(20, train_n + trade_n, 20.0, 700 + seed);
        let res = run_backtest(
            &m.panel,
            &ProviderSpec::pca(RSelection::Fixed(3)),
            train_n..train_n + trade_n,
            &Thresholds::CLASSIC,
            &ScoreConfig::default(),
            &SimConfig::default(),
            &m.universe,
        )
        .unwrap();
        let n = res.n_days();
        worst = worst.max(res.conservation_gap().abs());
        trades += res.trades.len();
        // Cash equals equity only once every outlay has come back.
        ok &= (res.portfolio.cash[n] - res.portfolio.equity[n]).abs() < 1e-8;
        ok &= res.trades.iter().filter(|t| t.forced).all(|t| t.close_day == n);
        ok &= res.trades.iter().all(|t| t.open_day + 60 <= n && t.close_day <= n);
    }
    verdict(
        ok && worst <= 1e-8,
        format!("5 seeds, {trades} trades, worst gap {worst:.2e}, flat at end and frozen for 60 days: {ok}"),
    )
}

fn economic_sanity() -> Verdict {
    let t0 = Instant::now();
    let (train_n, trade_n) = (252, 504);
    let sim = SimConfig::default();
    let spec = ProviderSpec::pca(RSelection::Fixed(3));
    let backtest = |kappa: f64, seed: u64| {
        let m = synthetic(30, train_n + trade_n, kappa, seed);
        run_backtest(
            &m.panel,
            &spec,
            train_n..train_n + trade_n,
            &statarb_core::Provider::Pca.default_thresholds(),
            &ScoreConfig::default(),
            &sim,
            &m.universe,
        )
        .unwrap()
    };
    let mut beats = 0;
    let mut finals = Vec::new();
    let mut slow_trades = 0;
    let (mut eligible, mut scored) = (0, 0);
    for seed in 0..10 {
        let fast = backtest(20.0, 800 + seed);
        let bench = sim.e0 * (sim.r_f * fast.horizon()).exp();
        if fast.final_equity() > bench {
            beats += 1;
        }
        finals.push(format!("{:.1}", fast.final_equity()));
        slow_trades += backtest(0.5, 800 + seed).trades.len();
        let m = synthetic(30, train_n + trade_n, 0.5, 800 + seed);
        let table = compute_scores(&m.panel, &spec, train_n..train_n + trade_n, &ScoreConfig::default()).unwrap();
        for day in &table.scores {
            scored += day.len();
            eligible += day.iter().filter(|s| s.is_some()).count();
        }
    }
    verdict(
        beats >= 8 && slow_trades == 0 && within(t0.elapsed(), 120.0),
        format!(
            "fast reversion beats cash in {beats}/10 (E_T: {}), slow reversion trades {slow_trades} with {:.1}% of stock-days eligible",
            finals.join(" "),
            100.0 * eligible as f64 / scored as f64
        ),
    )
}

fn sharpe_formula() -> Verdict {
    let (m, a, r_f) = (0.0008, 0.012, 0.015);
    let year: Vec<f64> = (0..252).map(|t| if t % 2 == 0 { m + a } else { m - a }).collect();
    let sd = a * (252.0_f64 / 251.0).sqrt();
    let want = (252.0 * m - r_f) / (252.0_f64.sqrt() * sd);
    let got = annualized_sharpe(&year, r_f).unwrap();
    let formula_ok = (got - want).abs() <= 1e-12;

    // A year with no activity at r_f = 0.5%.
    let idle = annualized_sharpe(&[0.0; 252], 0.005).unwrap();

    let m = synthetic(12, 252 + 300, 20.0, 9);
    let sim = SimConfig {
        r_f: 0.005,
        ..SimConfig::default()
    };
    let res = run_backtest(
        &m.panel,
        &ProviderSpec::pca(RSelection::Fixed(3)),
        252..552,
        &Thresholds::CLASSIC,
        &ScoreConfig::default(),
        &sim,
        &m.universe,
    )
    .unwrap();
    let rows = sector_report(&res);
    let empty = Sector::ALL
        .iter()
        .filter(|s| !m.universe.sector_of.values().any(|v| v == *s))
        .map(|s| s.label())
        .collect::<Vec<_>>();
    let empty_rows_neg_inf = rows
        .iter()
        .filter(|r| empty.contains(&r.group.as_str()))
        .all(|r| r.sharpe == f64::NEG_INFINITY);
    let has_portfolio = rows.iter().any(|r| r.group == PORTFOLIO && r.sharpe.is_finite());
    verdict(
        formula_ok && idle == f64::NEG_INFINITY && !empty.is_empty() && empty_rows_neg_inf && has_portfolio,
        format!(
            "S={got:.15} want {want:.15}, idle year S={idle}, {} no-trade sectors report -inf: {empty_rows_neg_inf}",
            empty.len()
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 17

[synthetic]
d = 10
n = 520
kappa = 20.0
sigma = 0.3

[factors]
r = 3

[sim]
log_signals = true

[grid]
open_min = 1.0
open_max = 1.6
open_step = 0.3
close_min = -0.5
close_max = 0.5
close_step = 0.5

[lstm]
window = 20
batch = 4
epochs = 5
hidden = 4
train_days = 252
targets = ["S00", "S03"]
"#;

fn determinism() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let kinds = [
        CommandKind::Synth,
        CommandKind::Backtest,
        CommandKind::Report,
        CommandKind::Gridsearch,
        CommandKind::TrainLstm,
    ];
    for (dir, threads) in [("a", 4), ("b", 1)] {
        for kind in kinds {
            let o = Options {
                config: cfg.clone(),
                out: Some(tmp.path().join(dir)),
                threads: Some(threads),
                seed: None,
            };
            run(kind, &o).unwrap();
        }
    }
    let a = files_under(&tmp.path().join("a"));
    let b = files_under(&tmp.path().join("b"));
    let differing: Vec<String> = a
        .iter()
        .filter(|rel| fs::read(tmp.path().join("a").join(rel)).ok() != fs::read(tmp.path().join("b").join(rel)).ok())
        .map(|p| p.display().to_string())
        .collect();
    verdict(
        a == b && differing.is_empty() && a.len() > 20,
        format!("{} files across 5 commands, differing: {:?}", a.len(), differing),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Runs only when `STATARB_GPW_CONFIG` names a run configuration whose
/// `[data]` section covers GPW 2015-2019 and whose `[grid]` section holds the
/// threshold sweep.
fn gpw_data() -> Verdict {
    let Some(path) = std::env::var_os("STATARB_GPW_CONFIG") else {
        return Verdict {
            status: Status::Skip,
            detail: "STATARB_GPW_CONFIG not set".into(),
        };
    };
    let (cfg, _) = RunConfig::load(Path::new(&path)).unwrap();
    let data = statarb_cli::commands::load_dataset(&cfg).unwrap();
    let panel = &data.panel;

    let (from, to) = (
        panel.first_on_or_after(date(2017, 1, 1)).unwrap(),
        panel.last_on_or_before(date(2017, 12, 31)).unwrap(),
    );
    let (y, _) = standardize(&panel.slice_days(from..to + 1)).unwrap();
    let eig = symmetric_eigen(&correlation_matrix(&y).unwrap()).unwrap();
    let explained = explained_fraction(&eig.eigenvalues, 15);

    let grid = cfg.grid.as_ref().expect("[grid] section required");
    let opens = statarb_core::analytics::axis(grid.open_min, grid.open_max, grid.open_step).unwrap();
    let closes = statarb_core::analytics::axis(grid.close_min, grid.close_max, grid.close_step).unwrap();
    let trade = statarb_cli::commands::trade_range(&cfg, panel).unwrap();
    let spec = ProviderSpec::pca(RSelection::Fixed(15));
    let table = compute_scores(panel, &spec, trade, &cfg.score_config().unwrap()).unwrap();
    let g = grid_search(&table, &opens, &closes, &cfg.sim_config(), &data.universe).unwrap();
    let (o, c) = g.best_thresholds();
    let eps = 1e-9;
    let at_optimum = (o - 1.10).abs() <= grid.open_step + eps && (c + 0.50).abs() <= grid.close_step + eps;
    verdict(
        (explained - 0.527).abs() <= 0.02 && at_optimum,
        format!("explained {explained:.4}, grid optimum ({o:.2}, {c:.2})"),
    )
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}
