//! Least-squares factor regressions and cumulative residuals.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, mean, Matrix};

/// Largest accepted condition number of the (unit-diagonal scaled) normal
/// matrix.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// Per-day intercept.
    pub alpha: f64,
    pub betas: Vec<f64>,
    /// `y - alpha - betasᵀ X` over the fitting window.
    pub residuals: Vec<f64>,
    /// Columns of the source panel the model was fitted on.
    pub window: Range<usize>,
}

impl FactorModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.alpha + dot(&self.betas, x)
    }
}

/// A factorised design matrix reusable across many regressands.
///
/// Every stock regressed on the same factor window shares the normal
/// matrix, so it is factorised once.
#[derive(Debug, Clone)]
pub struct OlsDesign {
    x: Matrix,
    with_intercept: bool,
    x_means: Vec<f64>,
    scale: Vec<f64>,
    chol: Matrix,
}

impl OlsDesign {
    /// `x` is `r x W` (one factor per row).
    pub fn new(x: &Matrix, with_intercept: bool) -> Result<Self> {
        let (r, w) = (x.rows(), x.cols());
        let needed = r + 1 + with_intercept as usize;
        if w < needed {
            return Err(Error::InsufficientWindow { needed, have: w });
        }
        let x_means: Vec<f64> = if with_intercept {
            (0..r).map(|i| mean(x.row(i))).collect()
        } else {
            vec![0.0; r]
        };
        let mut gram = Matrix::zeros(r, r);
        let centred: Vec<Vec<f64>> = (0..r)
            .map(|i| x.row(i).iter().map(|v| v - x_means[i]).collect())
            .collect();
        for i in 0..r {
            for j in i..r {
                let v = dot(&centred[i], &centred[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let mut scale = vec![0.0; r];
        for i in 0..r {
            let dii = gram[(i, i)];
            if !(dii > 0.0) || !dii.is_finite() {
                return Err(Error::SingularDesign(f64::INFINITY));
            }
            scale[i] = 1.0 / dii.sqrt();
        }
        for i in 0..r {
            for j in 0..r {
                gram[(i, j)] *= scale[i] * scale[j];
            }
        }
        let chol = cholesky(&gram)?;
        let (lo, hi) = (0..r).fold((f64::INFINITY, 0.0_f64), |(lo, hi), i| {
            (lo.min(chol[(i, i)]), hi.max(chol[(i, i)]))
        });
        let cond = (hi / lo).powi(2);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularDesign(cond));
        }
        Ok(OlsDesign {
            x: x.clone(),
            with_intercept,
            x_means,
            scale,
            chol,
        })
    }

    pub fn r(&self) -> usize {
        self.x.rows()
    }

    pub fn window_len(&self) -> usize {
        self.x.cols()
    }

    pub fn fit(&self, y: &[f64]) -> Result<FactorModel> {
        let (r, w) = (self.r(), self.window_len());
        if y.len() != w {
            return Err(Error::Contract(format!(
                "regressand length {} does not match window {w}",
                y.len()
            )));
        }
        let y_mean = if self.with_intercept { mean(y) } else { 0.0 };
        let rhs: Vec<f64> = (0..r)
            .map(|i| {
                let xi = self.x.row(i);
                let s: f64 = xi
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - self.x_means[i]) * (b - y_mean))
                    .sum();
                s * self.scale[i]
            })
            .collect();
        let mut betas = cholesky_solve(&self.chol, &rhs);
        for (b, s) in betas.iter_mut().zip(&self.scale) {
            *b *= s;
        }
        let alpha = y_mean - dot(&betas, &self.x_means);
        let mut residuals = Vec::with_capacity(w);
        for (t, &yt) in y.iter().enumerate() {
            let fitted: f64 = alpha + (0..r).map(|i| betas[i] * self.x[(i, t)]).sum::<f64>();
            residuals.push(yt - fitted);
        }
        Ok(FactorModel {
            alpha: if self.with_intercept { alpha } else { 0.0 },
            betas,
            residuals,
            window: 0..w,
        })
    }
}

/// Regresses `y` on the rows of `x` (`r x W`).
pub fn fit_ols(y: &[f64], x: &Matrix, with_intercept: bool) -> Result<FactorModel> {
    OlsDesign::new(x, with_intercept)?.fit(y)
}

/// Running sums `I_k` of the residuals.
pub fn cumulative_residuals(model: &FactorModel) -> Vec<f64> {
    cumsum(&model.residuals)
}

pub fn cumsum(xs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    xs.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}
