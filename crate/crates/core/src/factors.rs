//! Factor providers: PCA eigenportfolios and tradable index funds.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix};
use crate::marketdata::ReturnsPanel;

/// Eigenvalues above this negative bound are treated as rounding noise.
pub const EIGEN_CLAMP: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provider {
    Pca,
    ExistingEtf,
    SectorEtf,
    Lstm,
}

impl Provider {
    pub fn label(self) -> &'static str {
        match self {
            Provider::Pca => "pca",
            Provider::ExistingEtf => "existing_etf",
            Provider::SectorEtf => "sector_etf",
            Provider::Lstm => "lstm",
        }
    }

    pub fn default_thresholds(self) -> crate::signals::Thresholds {
        use crate::signals::Thresholds;
        match self {
            Provider::Pca => Thresholds::PCA,
            Provider::ExistingEtf => Thresholds::EXISTING_ETF,
            Provider::SectorEtf => Thresholds::SECTOR_ETF,
            Provider::Lstm => Thresholds::LSTM,
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Provider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pca" => Ok(Provider::Pca),
            "existing_etf" => Ok(Provider::ExistingEtf),
            "sector_etf" => Ok(Provider::SectorEtf),
            "lstm" => Ok(Provider::Lstm),
            other => Err(Error::Config(format!("unknown factor provider {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Row-wise z-scores with the sample (`n - 1`) standard deviation.
pub fn standardize(panel: &ReturnsPanel) -> Result<(Matrix, Standardization)> {
    let (d, n) = (panel.n_assets(), panel.n_days());
    if n < 2 {
        return Err(Error::InsufficientWindow { needed: 2, have: n });
    }
    let mut y = Matrix::zeros(d, n);
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for i in 0..d {
        let row = panel.row(i);
        let m = crate::linalg::mean(row);
        let s = crate::linalg::sample_variance(row).sqrt();
        if !(s > 1e-300) || !s.is_finite() {
            return Err(Error::DegenerateStock(panel.tickers[i].clone()));
        }
        for (o, r) in y.row_mut(i).iter_mut().zip(row) {
            *o = (r - m) / s;
        }
        means.push(m);
        stds.push(s);
    }
    Ok((y, Standardization { means, stds }))
}

/// `Y Yᵀ / (n - 1)` for standardized rows.
pub fn correlation_matrix(y: &Matrix) -> Result<Matrix> {
    let (d, n) = (y.rows(), y.cols());
    if n <= d {
        return Err(Error::InsufficientWindow {
            needed: d + 1,
            have: n,
        });
    }
    let mut c = Matrix::zeros(d, d);
    let scale = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = crate::linalg::dot(y.row(i), y.row(j)) * scale;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }
}

/// Spectral decomposition of a symmetric matrix with a deterministic sign
/// convention: each eigenvector's coordinates sum to a non-negative value,
/// ties broken by making the first nonzero coordinate positive.
pub fn symmetric_eigen(m: &Matrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::Contract(format!(
            "eigen input is {}x{}, not square",
            m.rows(),
            m.cols()
        )));
    }
    let asym = m.max_asymmetry();
    if asym > 1e-10 {
        return Err(Error::Contract(format!(
            "eigen input not symmetric (max |m_ij - m_ji| = {asym:e})"
        )));
    }
    let d = m.rows();
    let (vals, vecs) = jacobi_eigen(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));

    let tie = 1e-12 * m.max_abs().max(1.0);
    let mut eigenvectors = Matrix::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (k, &src) in order.iter().enumerate() {
        let mut v = vecs.column(src);
        let sum: f64 = v.iter().sum();
        let flip = if sum.abs() > tie {
            sum < 0.0
        } else {
            v.iter().find(|x| x.abs() > tie).is_some_and(|x| *x < 0.0)
        };
        if flip {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.into_iter().enumerate() {
            eigenvectors[(i, k)] = x;
        }
        eigenvalues.push(vals[src]);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Share of the total spectrum carried by the `k` leading eigenvalues.
pub fn explained_fraction(eigenvalues: &[f64], k: usize) -> f64 {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let k = k.min(eigenvalues.len());
    (eigenvalues[..k].iter().sum::<f64>() / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RSelection {
    Fixed(usize),
    VarianceTarget(f64),
}

impl Default for RSelection {
    fn default() -> Self {
        RSelection::Fixed(15)
    }
}

pub fn select_r(eigenvalues: &[f64], mode: RSelection) -> Result<usize> {
    let d = eigenvalues.len();
    match mode {
        RSelection::Fixed(r) => {
            if r == 0 || r > d {
                return Err(Error::Config(format!("fixed r = {r} outside 1..={d}")));
            }
            Ok(r)
        }
        RSelection::VarianceTarget(alpha) => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Config(format!("variance target {alpha} outside (0, 1]")));
            }
            // Small slack so a target of exactly 1.0 survives summation rounding.
            Ok((1..=d)
                .find(|&k| explained_fraction(eigenvalues, k) >= alpha - 1e-12)
                .unwrap_or(d))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub provider: Provider,
    /// `r x n` factor returns.
    pub factor_returns: Matrix,
    /// `r x d` money weights of the traded instruments making up each factor.
    pub component_weights: Option<Matrix>,
}

impl FactorSet {
    pub fn r(&self) -> usize {
        self.factor_returns.rows()
    }
}

/// Fits eigenportfolios on `window` and returns the weights `Q` (`r x d`),
/// `Q[i][k] = f_i^(k) / sigma_k`, together with the spectrum.
pub fn fit_eigenportfolios(
    window: &ReturnsPanel,
    mode: RSelection,
) -> Result<(Matrix, EigenDecomposition)> {
    let (y, stdz) = standardize(window)?;
    let corr = correlation_matrix(&y)?;
    let mut eig = symmetric_eigen(&corr)?;
    for l in eig.eigenvalues.iter_mut() {
        if *l < 0.0 {
            if *l > EIGEN_CLAMP {
                *l = 0.0;
            } else {
                return Err(Error::NegativeEigenvalue(*l));
            }
        }
    }
    let r = select_r(&eig.eigenvalues, mode)?;
    Ok((eigenportfolio_weights(&stdz, &eig, r), eig))
}

pub fn eigenportfolio_weights(stdz: &Standardization, eig: &EigenDecomposition, r: usize) -> Matrix {
    let d = stdz.stds.len();
    let mut q = Matrix::zeros(r, d);
    for i in 0..r {
        for k in 0..d {
            q[(i, k)] = eig.eigenvectors[(k, i)] / stdz.stds[k];
        }
    }
    q
}

/// Eigenportfolio returns `F = Q R` over the columns of `panel`.
pub fn eigenportfolio_factors(
    stdz: &Standardization,
    eig: &EigenDecomposition,
    r: usize,
    panel: &ReturnsPanel,
) -> Result<FactorSet> {
    let d = panel.n_assets();
    if r == 0 || r > d || stdz.stds.len() != d || eig.eigenvalues.len() != d {
        return Err(Error::Contract(format!(
            "eigenportfolio shapes: r={r}, d={d}, stds={}, eig={}",
            stdz.stds.len(),
            eig.eigenvalues.len()
        )));
    }
    let q = eigenportfolio_weights(stdz, eig, r);
    Ok(FactorSet {
        provider: Provider::Pca,
        factor_returns: q.matmul(&panel.returns),
        component_weights: Some(q),
    })
}

/// Wraps fund or index returns as a factor set whose components are the funds
/// themselves.
pub fn index_factor_set(funds: &ReturnsPanel, panel: &ReturnsPanel, provider: Provider) -> Result<FactorSet> {
    if funds.n_assets() == 0 {
        return Err(Error::Config("index factor set needs at least one fund".into()));
    }
    if funds.dates != panel.dates {
        return Err(Error::Alignment(format!(
            "fund dates ({} days) do not match panel dates ({} days)",
            funds.n_days(),
            panel.n_days()
        )));
    }
    Ok(FactorSet {
        provider,
        factor_returns: funds.returns.clone(),
        component_weights: Some(Matrix::identity(funds.n_assets())),
    })
}
