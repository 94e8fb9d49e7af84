use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ScoreBasis, SummaryStatistic};
use crate::error::{invalid, Error, Result};
use crate::matrix::SampleMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Ridge-penalized score matching in integration-by-parts form.
    ScoreMatching,
    /// Gaussian conditional with a linear mean in `t`.
    GaussianConditional,
}

/// Per-coordinate conditional scores `s^(i)(x | t) = theta_i^T phi(x, t)`.
///
/// Immutable after fitting and cheap to share behind an `Arc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalScoreModel {
    pub dim: usize,
    pub statistic: SummaryStatistic,
    pub basis: ScoreBasis,
    pub ridge: f64,
    pub n_fit: usize,
    pub method: FitMethod,
    pub coefficients: Vec<Vec<f64>>,
}

impl ConditionalScoreModel {
    pub fn from_coefficients(
        statistic: SummaryStatistic,
        basis: ScoreBasis,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = coefficients.len();
        statistic.validate(dim)?;
        let p = basis.feature_count(statistic.output_dim(dim));
        for c in &coefficients {
            if c.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "score coefficients".into(),
                });
            }
        }
        Ok(Self {
            dim,
            statistic,
            basis,
            ridge: 0.0,
            n_fit: 0,
            method: FitMethod::ScoreMatching,
            coefficients,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.basis.feature_count(self.statistic.output_dim(self.dim))
    }

    /// `s^(i)` at `z`, using `buf` as scratch for the summary statistic.
    #[inline]
    pub fn eval_with(&self, z: &[f64], i: usize, buf: &mut Vec<f64>) -> f64 {
        self.statistic.apply(z, i, buf);
        self.basis.dot(&self.coefficients[i], z[i], buf)
    }

    #[inline]
    pub fn eval_dx_with(&self, z: &[f64], i: usize, buf: &mut Vec<f64>) -> f64 {
        self.statistic.apply(z, i, buf);
        self.basis.dot_dx(&self.coefficients[i], z[i], buf)
    }
}

fn check_samples(samples: &SampleMatrix, t: SummaryStatistic, min_rows: usize) -> Result<()> {
    t.validate(samples.ncols())?;
    if samples.nrows() < min_rows {
        return Err(Error::TooFewSamples {
            required: min_rows,
            found: samples.nrows(),
        });
    }
    samples.ensure_finite("score-fit samples")
}

/// Accumulates `G = (1/N) sum phi phi^T` and `g = (1/N) sum d phi/dx` for one coordinate,
/// summing rows in their stored order.
fn moments(samples: &SampleMatrix, i: usize, t: SummaryStatistic, basis: ScoreBasis) -> (DMatrix<f64>, DVector<f64>) {
    let p = basis.feature_count(t.output_dim(samples.ncols()));
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut grad = DVector::<f64>::zeros(p);
    let (mut tbuf, mut phi, mut dphi) = (Vec::new(), Vec::new(), Vec::new());
    for z in samples.rows() {
        t.apply(z, i, &mut tbuf);
        basis.features(z[i], &tbuf, &mut phi);
        basis.features_dx(z[i], &tbuf, &mut dphi);
        for a in 0..p {
            let pa = phi[a];
            if pa == 0.0 {
                continue;
            }
            // upper triangle only; mirrored below
            for b in a..p {
                gram[(a, b)] += pa * phi[b];
            }
        }
        for a in 0..p {
            grad[a] += dphi[a];
        }
    }
    let inv_n = 1.0 / samples.nrows() as f64;
    for a in 0..p {
        for b in a..p {
            let v = gram[(a, b)] * inv_n;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    grad *= inv_n;
    (gram, grad)
}

/// Closed-form minimizer of
/// `(1/N) sum_l [ (theta^T phi)^2 / 2 + theta^T d phi/dx ] + ridge |theta|^2`
/// for every coordinate: `theta = -(G + 2 ridge I)^-1 g`.
pub fn fit_score_matching(
    samples: &SampleMatrix,
    t: SummaryStatistic,
    basis: ScoreBasis,
    ridge: f64,
) -> Result<ConditionalScoreModel> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(invalid("ridge", format!("must be finite and >= 0, got {ridge}")));
    }
    // a positive ridge makes the system invertible even for a single sample
    let min_rows = if ridge > 0.0 { 1 } else { 2 };
    check_samples(samples, t, min_rows)?;
    let m = samples.ncols();
    let coefficients = (0..m)
        .into_par_iter()
        .map(|i| {
            let (mut gram, grad) = moments(samples, i, t, basis);
            for a in 0..gram.nrows() {
                gram[(a, a)] += 2.0 * ridge;
            }
            let chol = gram.cholesky().ok_or_else(|| Error::Singular {
                context: format!("score-matching system for coordinate {i}"),
            })?;
            let theta = -chol.solve(&grad);
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular {
                    context: format!("score-matching system for coordinate {i}"),
                });
            }
            Ok(theta.iter().copied().collect::<Vec<f64>>())
        })
        .collect::<Vec<Result<Vec<f64>>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalScoreModel {
        dim: m,
        statistic: t,
        basis,
        ridge,
        n_fit: samples.nrows(),
        method: FitMethod::ScoreMatching,
        coefficients,
    })
}

const MIN_RESIDUAL_VARIANCE: f64 = 1e-12;

/// Least-squares Gaussian conditional `x^(i) | t ~ N(a + b^T t, sigma^2)` per coordinate,
/// expressed as a degree-1 score model `-(x - a - b^T t) / sigma^2`.
pub fn fit_conditional_gaussian(samples: &SampleMatrix, t: SummaryStatistic) -> Result<ConditionalScoreModel> {
    let m = samples.ncols();
    t.validate(m)?;
    let k = t.output_dim(m);
    check_samples(samples, t, k + 2)?;
    let n = samples.nrows();
    let coefficients = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = k + 1;
            let mut xtx = DMatrix::<f64>::zeros(p, p);
            let mut xty = DVector::<f64>::zeros(p);
            let mut row = vec![0.0; p];
            let mut tbuf = Vec::new();
            for z in samples.rows() {
                t.apply(z, i, &mut tbuf);
                row[0] = 1.0;
                row[1..].copy_from_slice(&tbuf);
                for a in 0..p {
                    for b in a..p {
                        xtx[(a, b)] += row[a] * row[b];
                    }
                    xty[a] += row[a] * z[i];
                }
            }
            for a in 0..p {
                for b in 0..a {
                    xtx[(a, b)] = xtx[(b, a)];
                }
            }
            let rank_deficient = || Error::Singular {
                context: format!("rank-deficient design for coordinate {i}"),
            };
            let chol = xtx.clone().cholesky().ok_or_else(rank_deficient)?;
            let l = chol.l();
            let diag: Vec<f64> = (0..p).map(|a| l[(a, a)] * l[(a, a)]).collect();
            let max_d = diag.iter().copied().fold(0.0, f64::max);
            if diag.iter().any(|&d| d <= 1e-12 * max_d) {
                return Err(rank_deficient());
            }
            let beta = chol.solve(&xty);
            let mut rss = 0.0;
            for z in samples.rows() {
                t.apply(z, i, &mut tbuf);
                let pred = beta[0] + beta.iter().skip(1).zip(&tbuf).map(|(b, v)| b * v).sum::<f64>();
                rss += (z[i] - pred).powi(2);
            }
            let var = rss / (n - k - 1) as f64;
            if !(var.is_finite() && var >= MIN_RESIDUAL_VARIANCE) {
                return Err(Error::DegenerateConditional {
                    coordinate: i,
                    variance: var,
                });
            }
            // features of the degree-1 basis: [1, x, t_1..t_k]
            let mut theta = Vec::with_capacity(p + 1);
            theta.push(beta[0] / var);
            theta.push(-1.0 / var);
            theta.extend(beta.iter().skip(1).map(|b| b / var));
            Ok(theta)
        })
        .collect::<Vec<Result<Vec<f64>>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalScoreModel {
        dim: m,
        statistic: t,
        basis: ScoreBasis { degree: 1 },
        ridge: 0.0,
        n_fit: n,
        method: FitMethod::GaussianConditional,
        coefficients,
    })
}
