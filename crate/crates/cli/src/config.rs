//! Declarative run configuration, read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use statarb_core::backtest::{ProviderSpec, ScoreConfig, SimConfig};
use statarb_core::lstm::{AdamConfig, TrainConfig};
use statarb_core::marketdata::SyntheticMarketConfig;
use statarb_core::ou::Ar1Estimator;
use statarb_core::{Provider, RSelection, Thresholds};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` and `STATARB_OUT` take precedence.
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub factors: FactorsSection,
    #[serde(default)]
    pub lstm: LstmSection,
    pub thresholds: Option<ThresholdsSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub dates: DatesSection,
    pub grid: Option<GridSection>,
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `ticker,date,adj_close` file or directory of such files.
    pub prices: PathBuf,
    /// `ticker,sector` file.
    pub universe: PathBuf,
    /// Fund prices for the index-fund providers.
    pub funds: Option<PathBuf>,
    /// Index levels used to extend fund histories backwards, keyed by the
    /// fund's ticker.
    pub fund_indices: Option<PathBuf>,
    #[serde(default = "default_max_missing")]
    pub max_missing: f64,
}

fn default_max_missing() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorsSection {
    pub provider: String,
    /// Fixed number of eigenportfolios.
    pub r: Option<usize>,
    /// Explained-variance target; excludes `r`.
    pub variance_target: Option<f64>,
    pub train_days: usize,
    pub refit_days: usize,
    /// Residual window `W`.
    pub window: usize,
    pub kappa_min: f64,
    pub estimator: String,
}

impl Default for FactorsSection {
    fn default() -> Self {
        FactorsSection {
            provider: "pca".into(),
            r: None,
            variance_target: None,
            train_days: 252,
            refit_days: 252,
            window: 120,
            kappa_min: 4.0,
            estimator: "yule_walker".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmSection {
    pub window: usize,
    pub batch: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub l1_penalty: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub train_days: usize,
    pub warmup: usize,
    pub refit_days: usize,
    /// Tickers trained by `train-lstm`; empty means all.
    pub targets: Vec<String>,
}

impl Default for LstmSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        LstmSection {
            window: t.window,
            batch: t.batch,
            epochs: t.epochs,
            hidden: t.hidden,
            l1_penalty: t.l1_penalty,
            lr: t.adam.lr,
            clip_norm: t.clip_norm,
            train_days: t.train_days,
            warmup: t.warmup,
            refit_days: 252,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    pub g_ol: f64,
    pub g_os: f64,
    pub g_cl: f64,
    pub g_cs: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub cost: f64,
    pub r_f: f64,
    pub e0: f64,
    pub leverage: f64,
    pub n_max: Option<usize>,
    pub freeze_days: usize,
    pub financing_term: bool,
    pub log_signals: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        SimSection {
            cost: s.cost,
            r_f: s.r_f,
            e0: s.e0,
            leverage: s.leverage,
            n_max: s.n_max,
            freeze_days: s.freeze_days,
            financing_term: s.financing_term,
            log_signals: s.log_signals,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatesSection {
    /// Earliest date any model may look at.
    pub train_start: Option<NaiveDate>,
    /// First traded day; defaults to the earliest day with enough history.
    pub trade_start: Option<NaiveDate>,
    /// Last traded day; defaults to the end of the data.
    pub trade_end: Option<NaiveDate>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub open_min: f64,
    pub open_max: f64,
    pub open_step: f64,
    pub close_min: f64,
    pub close_max: f64,
    pub close_step: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub d: usize,
    pub n: usize,
    pub factor_vols: Vec<f64>,
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gbm_drift: f64,
    pub alpha: f64,
    pub start: NaiveDate,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            d: 20,
            n: 756,
            factor_vols: vec![0.2, 0.1],
            kappa: 20.0,
            mu: 0.0,
            sigma: 0.3,
            gbm_drift: 0.05,
            alpha: 0.0,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            seed: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let raw = std::fs::read(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw)
            .map_err(|_| config_err(format!("{} is not UTF-8", path.display())))?;
        let mut cfg = Self::parse(text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok((cfg, raw))
    }

    /// Makes relative data paths relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.data.as_mut() {
            fix(&mut d.prices);
            fix(&mut d.universe);
            if let Some(f) = d.funds.as_mut() {
                fix(f);
            }
            if let Some(f) = d.fund_indices.as_mut() {
                fix(f);
            }
        }
        if let Some(o) = self.out.as_mut() {
            fix(o);
        }
    }

    /// Checks cross-field rules and that referenced files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(d) = &self.data {
            let mut paths = vec![("prices", &d.prices), ("universe", &d.universe)];
            if let Some(f) = &d.funds {
                paths.push(("funds", f));
            }
            if let Some(f) = &d.fund_indices {
                paths.push(("fund_indices", f));
            }
            for (what, p) in paths {
                if !p.exists() {
                    return Err(config_err(format!("data.{what}: {} does not exist", p.display())));
                }
            }
            if !(0.0..=1.0).contains(&d.max_missing) {
                return Err(config_err("data.max_missing must lie in [0, 1]"));
            }
        } else if self.synthetic.is_none() {
            return Err(config_err("need a [data] or a [synthetic] section"));
        }
        let provider = self.provider()?;
        if matches!(provider, Provider::ExistingEtf | Provider::SectorEtf)
            && self.data.as_ref().is_some_and(|d| d.funds.is_none())
        {
            return Err(config_err(format!("provider {provider} needs data.funds")));
        }
        if self.factors.r.is_some() && self.factors.variance_target.is_some() {
            return Err(config_err("set either factors.r or factors.variance_target, not both"));
        }
        let dates = &self.dates;
        if let (Some(a), Some(b)) = (dates.trade_start, dates.trade_end) {
            if b < a {
                return Err(config_err("dates.trade_end precedes dates.trade_start"));
            }
        }
        if let (Some(a), Some(b)) = (dates.train_start, dates.trade_start) {
            if b <= a {
                return Err(config_err("dates.trade_start must come after dates.train_start"));
            }
        }
        self.estimator()?;
        self.sim_config().validate()?;
        self.train_config().validate()?;
        if let Some(t) = self.thresholds {
            Thresholds::new(t.g_ol, t.g_os, t.g_cl, t.g_cs)?;
        }
        Ok(())
    }

    pub fn provider(&self) -> Result<Provider, CliError> {
        Ok(self.factors.provider.parse()?)
    }

    pub fn estimator(&self) -> Result<Ar1Estimator, CliError> {
        match self.factors.estimator.as_str() {
            "yule_walker" => Ok(Ar1Estimator::YuleWalker),
            "ols" => Ok(Ar1Estimator::Ols),
            other => Err(config_err(format!("unknown factors.estimator {other:?}"))),
        }
    }

    pub fn selection(&self) -> RSelection {
        match (self.factors.r, self.factors.variance_target) {
            (_, Some(a)) => RSelection::VarianceTarget(a),
            (Some(r), None) => RSelection::Fixed(r),
            (None, None) => RSelection::default(),
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds, CliError> {
        match self.thresholds {
            Some(t) => Ok(Thresholds::new(t.g_ol, t.g_os, t.g_cl, t.g_cs)?),
            None => Ok(self.provider()?.default_thresholds()),
        }
    }

    pub fn score_config(&self) -> Result<ScoreConfig, CliError> {
        Ok(ScoreConfig {
            window: self.factors.window,
            kappa_min: self.factors.kappa_min,
            estimator: self.estimator()?,
        })
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            cost: s.cost,
            r_f: s.r_f,
            e0: s.e0,
            leverage: s.leverage,
            n_max: s.n_max,
            freeze_days: s.freeze_days,
            financing_term: s.financing_term,
            log_signals: s.log_signals,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let l = &self.lstm;
        TrainConfig {
            window: l.window,
            batch: l.batch,
            l1_penalty: l.l1_penalty,
            adam: AdamConfig {
                lr: l.lr,
                ..AdamConfig::default()
            },
            epochs: l.epochs,
            hidden: l.hidden,
            seed: statarb_core::rng::derive_seed(self.seed, &[LSTM_STREAM]),
            clip_norm: l.clip_norm,
            train_days: l.train_days,
            warmup: l.warmup,
        }
    }

    /// Provider settings that do not depend on the loaded data.
    pub fn lookback(&self) -> Result<usize, CliError> {
        let w = self.factors.window.saturating_sub(1);
        Ok(match self.provider()? {
            Provider::Pca => w.max(self.factors.train_days),
            Provider::ExistingEtf | Provider::SectorEtf => w,
            Provider::Lstm => (self.lstm.warmup + w).max(self.lstm.train_days),
        })
    }

    pub fn pca_or_lstm_spec(&self) -> Result<Option<ProviderSpec>, CliError> {
        Ok(match self.provider()? {
            Provider::Pca => Some(ProviderSpec::Pca {
                selection: self.selection(),
                train_days: self.factors.train_days,
                refit_days: self.factors.refit_days,
            }),
            Provider::Lstm => Some(ProviderSpec::Lstm {
                train: self.train_config(),
                refit_days: self.lstm.refit_days,
            }),
            _ => None,
        })
    }

    pub fn synthetic_config(&self) -> Result<SyntheticMarketConfig, CliError> {
        let s = self
            .synthetic
            .as_ref()
            .ok_or_else(|| config_err("missing [synthetic] section"))?;
        let seed = s
            .seed
            .unwrap_or_else(|| statarb_core::rng::derive_seed(self.seed, &[SYNTH_STREAM]));
        let mut cfg = SyntheticMarketConfig::uniform(s.d, s.n, s.factor_vols.clone(), (s.kappa, s.mu, s.sigma), seed);
        cfg.gbm_drift = s.gbm_drift;
        cfg.alpha = s.alpha;
        cfg.start = s.start;
        Ok(cfg)
    }
}

const LSTM_STREAM: u64 = 1;
const SYNTH_STREAM: u64 = 2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic_config() {
        let cfg = RunConfig::parse("seed = 3\n[synthetic]\nd = 5\nn = 400\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.provider().unwrap(), Provider::Pca);
        assert_eq!(cfg.thresholds().unwrap(), Thresholds::PCA);
        assert_eq!(cfg.selection(), RSelection::Fixed(15));
        assert_eq!(cfg.synthetic_config().unwrap().d, 5);
    }

    #[test]
    fn rejects_bad_combinations() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        let both = RunConfig::parse("[synthetic]\n[factors]\nr = 3\nvariance_target = 0.5\n").unwrap();
        assert!(both.validate().is_err());
        let neither = RunConfig::parse("seed = 1").unwrap();
        assert!(neither.validate().is_err());
        let missing = RunConfig::parse("[data]\nprices = \"/nope/p.csv\"\nuniform = 1\n");
        assert!(missing.is_err());
        let missing = RunConfig::parse("[data]\nprices = \"/nope/p.csv\"\nuniverse = \"/nope/u.csv\"\n").unwrap();
        let err = missing.validate().unwrap_err();
        assert!(err.to_string().contains("/nope/p.csv"));
    }

    #[test]
    fn thresholds_override_provider_defaults() {
        let cfg = RunConfig::parse(
            "[synthetic]\n[factors]\nprovider = \"lstm\"\n[thresholds]\ng_ol = 1.5\ng_os = 1.5\ng_cl = 0.1\ng_cs = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.thresholds().unwrap(), Thresholds::symmetric(1.5, 0.1).unwrap());
    }
}
