use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: line {line}: non-positive price {price} for {ticker}")]
    NonPositivePrice {
        path: PathBuf,
        line: u64,
        ticker: String,
        price: f64,
    },
    #[error("{path}: duplicate row for ({ticker}, {date})")]
    DuplicateRow {
        path: PathBuf,
        ticker: String,
        date: String,
    },
    #[error("ticker {0} not present in the input")]
    MissingTicker(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate stock {0}: zero variance over the window")]
    DegenerateStock(String),
    #[error("insufficient window: need {needed}, have {have}")]
    InsufficientWindow { needed: usize, have: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("negative eigenvalue {0} beyond clamp tolerance")]
    NegativeEigenvalue(f64),
    #[error("singular design: condition number {0:.3e}")]
    SingularDesign(f64),
    #[error("degenerate series: zero variance")]
    DegenerateSeries,
    #[error("not mean reverting: phi1 = {0}")]
    NonMeanReverting(f64),
    #[error("illegal transition: {signal:?} from state {state}")]
    IllegalTransition { signal: crate::signals::Signal, state: i8 },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("bankruptcy: equity {0} is not positive")]
    Bankrupt(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Divergence(_) | Error::Bankrupt(_) => ErrorKind::Runtime,
            Error::Contract(_) | Error::IllegalTransition { .. } => ErrorKind::Runtime,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}
