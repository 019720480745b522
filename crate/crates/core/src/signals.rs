//! Three-state open/close machine driven by s-scores.

use crate::error::{Error, Result};

/// Opening and closing cut-offs.
///
/// Longs open below `-g_ol` and close above `-g_cl`. Shorts open above
/// `g_os` and close below `g_cs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub g_ol: f64,
    pub g_os: f64,
    pub g_cl: f64,
    pub g_cs: f64,
}

impl Thresholds {
    pub fn new(g_ol: f64, g_os: f64, g_cl: f64, g_cs: f64) -> Result<Self> {
        let th = Thresholds {
            g_ol,
            g_os,
            g_cl,
            g_cs,
        };
        th.validate()?;
        Ok(th)
    }

    /// Symmetric thresholds as used by the grid search.
    pub fn symmetric(open: f64, close: f64) -> Result<Self> {
        Thresholds::new(open, open, close, close)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.g_ol, self.g_os, self.g_cl, self.g_cs];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if !(self.g_ol > 0.0 && self.g_os > 0.0) {
            return Err(Error::Config("opening thresholds must be positive".into()));
        }
        Ok(())
    }

    pub const CLASSIC: Thresholds = Thresholds {
        g_ol: 1.25,
        g_os: 1.25,
        g_cl: 0.5,
        g_cs: 0.75,
    };
    pub const PCA: Thresholds = Thresholds {
        g_ol: 1.10,
        g_os: 1.10,
        g_cl: -0.50,
        g_cs: -0.50,
    };
    pub const LSTM: Thresholds = Thresholds {
        g_ol: 1.10,
        g_os: 1.10,
        g_cl: -0.15,
        g_cs: -0.15,
    };
    pub const EXISTING_ETF: Thresholds = Thresholds {
        g_ol: 2.10,
        g_os: 2.10,
        g_cl: 0.75,
        g_cs: 0.75,
    };
    pub const SECTOR_ETF: Thresholds = Thresholds {
        g_ol: 1.95,
        g_os: 1.95,
        g_cl: 0.40,
        g_cs: 0.40,
    };
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::CLASSIC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PositionState {
    Short,
    #[default]
    Flat,
    Long,
}

impl PositionState {
    pub fn as_i8(self) -> i8 {
        match self {
            PositionState::Short => -1,
            PositionState::Flat => 0,
            PositionState::Long => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(PositionState::Short),
            0 => Some(PositionState::Flat),
            1 => Some(PositionState::Long),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    OpenLong,
    OpenShort,
    CloseLong,
    CloseShort,
    Hold,
}

impl Signal {
    pub fn label(self) -> &'static str {
        match self {
            Signal::OpenLong => "open_long",
            Signal::OpenShort => "open_short",
            Signal::CloseLong => "close_long",
            Signal::CloseShort => "close_short",
            Signal::Hold => "hold",
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, Signal::OpenLong | Signal::OpenShort)
    }

    pub fn is_close(self) -> bool {
        matches!(self, Signal::CloseLong | Signal::CloseShort)
    }
}

pub fn decide(g: f64, state: PositionState, th: &Thresholds) -> Signal {
    if !g.is_finite() {
        log::warn!("non-finite s-score {g}; holding");
        return Signal::Hold;
    }
    match state {
        PositionState::Flat if g < -th.g_ol => Signal::OpenLong,
        PositionState::Flat if g > th.g_os => Signal::OpenShort,
        PositionState::Long if g > -th.g_cl => Signal::CloseLong,
        PositionState::Short if g < th.g_cs => Signal::CloseShort,
        _ => Signal::Hold,
    }
}

pub fn apply(signal: Signal, state: PositionState) -> Result<PositionState> {
    use PositionState::*;
    match (signal, state) {
        (Signal::Hold, s) => Ok(s),
        (Signal::OpenLong, Flat) => Ok(Long),
        (Signal::OpenShort, Flat) => Ok(Short),
        (Signal::CloseLong, Long) | (Signal::CloseShort, Short) => Ok(Flat),
        (signal, state) => Err(Error::IllegalTransition {
            signal,
            state: state.as_i8(),
        }),
    }
}
