use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{adam_step, loss_and_grad, AdamConfig, AdamState, StackedLstm};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::marketdata::ReturnsPanel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Length of each sampled training window, in days.
    pub window: usize,
    /// Windows per batch.
    pub batch: usize,
    pub l1_penalty: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Rescale the batch gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
    /// Trailing days of history each annual model is trained on.
    pub train_days: usize,
    /// Days run through the network before the first traded day.
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 120,
            batch: 16,
            l1_penalty: 1e-5,
            adam: AdamConfig::default(),
            epochs: 200,
            hidden: 64,
            seed: 0,
            clip_norm: None,
            train_days: 756,
            warmup: 120,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lstm: {m}")));
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.l1_penalty >= 0.0) {
            return bad("l1 penalty must be non-negative");
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if !(self.adam.lr > 0.0) || !(self.adam.eps > 0.0) {
            return bad("adam lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: StackedLstm,
    /// Mean batch loss of every epoch, before that epoch's update.
    pub loss_trace: Vec<f64>,
    /// Tickers feeding the network, in input order.
    pub inputs: Vec<String>,
}

/// Returns of every ticker except `target` over `cols`, as an `(d-1) x len`
/// matrix.
pub fn design_matrix(panel: &ReturnsPanel, target: usize, cols: Range<usize>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..panel.n_assets())
        .filter(|&i| i != target)
        .map(|i| panel.row(i)[cols.clone()].to_vec())
        .collect();
    Matrix::from_rows(&rows)
}

fn slice_cols(x: &Matrix, cols: Range<usize>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i)[cols.clone()].to_vec()).collect();
    Matrix::from_rows(&rows)
}

fn target_index(panel: &ReturnsPanel, target: &str) -> Result<usize> {
    panel
        .index_of(target)
        .ok_or_else(|| Error::MissingTicker(target.to_string()))
}

/// Trains a model for `target` on the whole of `panel`.
pub fn train(panel: &ReturnsPanel, target: &str, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ti = target_index(panel, target)?;
    if panel.n_assets() < 2 {
        return Err(Error::Config("lstm needs at least two stocks".into()));
    }
    let n = panel.n_days();
    if n < cfg.window + cfg.batch {
        return Err(Error::InsufficientWindow {
            needed: cfg.window + cfg.batch,
            have: n,
        });
    }
    let x = design_matrix(panel, ti, 0..n);
    let r = panel.row(ti);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = StackedLstm::init(x.rows(), cfg.hidden, &mut rng);
    let mut adam = AdamState::new(&model);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let starts: Vec<usize> = (0..cfg.batch)
            .map(|_| rng.random_range(0..=n - cfg.window))
            .collect();
        let parts: Vec<Result<(f64, StackedLstm)>> = starts
            .par_iter()
            .map(|&s| {
                let cols = s..s + cfg.window;
                loss_and_grad(&model, &slice_cols(&x, cols.clone()), &r[cols], cfg.l1_penalty)
            })
            .collect();
        let mut grad = model.zeros_like();
        let mut total = 0.0;
        for part in parts {
            let (l, g) = part.map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("{target} epoch {epoch}: {m}")),
                other => other,
            })?;
            total += l;
            grad.add_scaled(&g, 1.0);
        }
        let inv_b = 1.0 / cfg.batch as f64;
        grad.scale(inv_b);
        if let Some(max) = cfg.clip_norm {
            let norm = grad.norm();
            if norm > max {
                grad.scale(max / norm);
            }
        }
        trace.push(total * inv_b);
        adam_step(&mut model, &grad, &mut adam, &cfg.adam);
        if !model.is_finite() {
            return Err(Error::Divergence(format!(
                "{target} epoch {epoch}: non-finite parameters"
            )));
        }
    }
    if trace.len() >= 2 && trace[1..].iter().all(|l| *l >= trace[0]) {
        log::warn!("{target}: training loss never fell below its first epoch value");
    }
    let inputs = panel
        .tickers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ti)
        .map(|(_, t)| t.clone())
        .collect();
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
        inputs,
    })
}

/// Betas for the `trade` columns of `panel`, after running the network from
/// zero state through the preceding `warmup` days.
///
/// Returns an `(d-1) x trade.len()` matrix.
pub fn infer_beta_provider(
    model: &StackedLstm,
    panel: &ReturnsPanel,
    target: usize,
    trade: Range<usize>,
    warmup: usize,
) -> Result<Matrix> {
    if trade.start < warmup {
        return Err(Error::Config(format!(
            "lstm warm-up needs {warmup} days before the first traded day, only {} available",
            trade.start
        )));
    }
    if trade.end > panel.n_days() || trade.is_empty() {
        return Err(Error::Contract("trade range outside panel".into()));
    }
    let x = design_matrix(panel, target, trade.start - warmup..trade.end);
    let mut state = model.zero_state();
    let mut out = Matrix::zeros(x.rows(), trade.len());
    for t in 0..x.cols() {
        let beta = model.step(&mut state, &x.column(t))?;
        if t >= warmup {
            for (i, b) in beta.into_iter().enumerate() {
                out[(i, t - warmup)] = b;
            }
        }
    }
    Ok(out)
}
