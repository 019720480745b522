//! Statistical-arbitrage research engine.
//!
//! Stocks are replicated with systematic factors (PCA eigenportfolios, index
//! funds, or a stacked LSTM), the cumulative residual is modelled as an
//! Ornstein-Uhlenbeck process, and its normalised deviations are traded in a
//! daily event-driven backtest.

pub mod analytics;
pub mod backtest;
pub mod error;
pub mod factors;
pub mod linalg;
pub mod lstm;
pub mod marketdata;
pub mod output;
pub mod ou;
pub mod regression;
pub mod rng;
pub mod signals;

pub use analytics::{GridResult, SharpeRow};
pub use backtest::{BacktestResult, ProviderSpec, ScoreConfig, SimConfig};
pub use error::{Error, ErrorKind, Result};
pub use factors::{FactorSet, Provider, RSelection};
pub use linalg::Matrix;
pub use marketdata::{Bar, ReturnsPanel, Sector, Universe, DT, TRADING_DAYS};
pub use ou::OuParams;
pub use regression::FactorModel;
pub use signals::{PositionState, Signal, Thresholds};
