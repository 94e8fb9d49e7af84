//! Conditional score estimation.
//!
//! A conditional score `s^(i)(x | t)` is the derivative in `x` of
//! `log q(x^(i) = x | t(x^(-i)))`. Models here are linear in their parameters,
//! `theta^T phi(x, t)`, and are fitted in closed form.

mod field;
mod model;

pub use field::{score_component, sm_objective_value, ConditionalScore, JointScore, ScoreField};
pub use model::{fit_conditional_gaussian, fit_score_matching, ConditionalScoreModel, FitMethod};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Summary statistic `t(x^(-i))` conditioned on by each coordinate's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStatistic {
    /// The full remainder `x^(-i)`.
    #[default]
    Identity,
    /// The scalar mean of the remaining coordinates.
    Mean,
}

impl SummaryStatistic {
    /// Output dimension for samples of dimension `m`.
    pub fn output_dim(&self, m: usize) -> usize {
        match self {
            SummaryStatistic::Identity => m.saturating_sub(1),
            SummaryStatistic::Mean => 1,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        if *self == SummaryStatistic::Mean && m < 2 {
            return Err(invalid("statistic", "the mean statistic needs at least 2 coordinates"));
        }
        Ok(())
    }

    /// Writes `t(z^(-i))` into `out` (cleared first).
    #[inline]
    pub fn apply(&self, z: &[f64], i: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            SummaryStatistic::Identity => {
                out.extend(z.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
            }
            SummaryStatistic::Mean => {
                let total: f64 = z.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).sum();
                out.push(total / (z.len() - 1) as f64);
            }
        }
    }
}

/// Polynomial feature map `{1, x, .., x^degree} ∪ {t_j} ∪ {x t_j}`; the
/// interaction block is present only for `degree >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBasis {
    pub degree: u32,
}

impl Default for ScoreBasis {
    fn default() -> Self {
        Self { degree: 2 }
    }
}

impl ScoreBasis {
    pub fn new(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(invalid("degree", "basis degree must be at least 1"));
        }
        Ok(Self { degree })
    }

    fn interactions(&self) -> bool {
        self.degree >= 2
    }

    pub fn feature_count(&self, t_dim: usize) -> usize {
        let poly = self.degree as usize + 1;
        if self.interactions() {
            poly + 2 * t_dim
        } else {
            poly + t_dim
        }
    }

    pub fn features(&self, x: f64, t: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let mut p = 1.0;
        for _ in 0..=self.degree {
            out.push(p);
            p *= x;
        }
        out.extend_from_slice(t);
        if self.interactions() {
            out.extend(t.iter().map(|tj| x * tj));
        }
    }

    /// `d phi / dx`, aligned with [`ScoreBasis::features`].
    pub fn features_dx(&self, x: f64, t: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(0.0);
        let mut p = 1.0;
        for k in 1..=self.degree {
            out.push(k as f64 * p);
            p *= x;
        }
        out.extend(std::iter::repeat_n(0.0, t.len()));
        if self.interactions() {
            out.extend_from_slice(t);
        }
    }

    /// `theta^T phi(x, t)` without materializing the features.
    #[inline]
    pub fn dot(&self, theta: &[f64], x: f64, t: &[f64]) -> f64 {
        let poly = self.degree as usize + 1;
        let mut acc = 0.0;
        for c in theta[..poly].iter().rev() {
            acc = acc * x + c;
        }
        let k = t.len();
        let lin: f64 = theta[poly..poly + k].iter().zip(t).map(|(a, b)| a * b).sum();
        acc += lin;
        if self.interactions() {
            let inter: f64 = theta[poly + k..poly + 2 * k].iter().zip(t).map(|(a, b)| a * b).sum();
            acc += x * inter;
        }
        acc
    }

    /// `theta^T d phi / dx (x, t)`.
    #[inline]
    pub fn dot_dx(&self, theta: &[f64], x: f64, t: &[f64]) -> f64 {
        let poly = self.degree as usize + 1;
        let mut acc = 0.0;
        for k in (1..poly).rev() {
            acc = acc * x + k as f64 * theta[k];
        }
        if self.interactions() {
            let k = t.len();
            acc += theta[poly + k..poly + 2 * k].iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }
}
