use std::fmt::Debug;
use std::sync::Arc;

use super::{ConditionalScoreModel, SummaryStatistic};
use crate::error::{check_dim, Error, Result};
use crate::matrix::SampleMatrix;

/// A closed-form joint score `grad log q`.
pub trait JointScore: Send + Sync + Debug {
    fn dim(&self) -> usize;

    /// Writes `grad log q(z)` into `out`.
    fn score(&self, z: &[f64], out: &mut [f64]);

    /// `d^2/dz_i^2 log q(z)`.
    fn score_derivative(&self, z: &[f64], i: usize) -> f64;
}

/// A closed-form conditional score `s^(i)(x | t)` for a given summary statistic.
pub trait ConditionalScore: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn statistic(&self) -> SummaryStatistic;

    fn conditional_score(&self, i: usize, x: f64, t: &[f64]) -> f64;

    fn conditional_score_dx(&self, i: usize, x: f64, t: &[f64]) -> f64;
}

/// Uniform access to exact joint scores, exact conditional scores, and fitted models.
#[derive(Debug, Clone)]
pub enum ScoreField {
    ExactJoint(Arc<dyn JointScore>),
    ExactConditional(Arc<dyn ConditionalScore>),
    Fitted(Arc<ConditionalScoreModel>),
}

impl From<ConditionalScoreModel> for ScoreField {
    fn from(m: ConditionalScoreModel) -> Self {
        ScoreField::Fitted(Arc::new(m))
    }
}

impl ScoreField {
    pub fn dim(&self) -> usize {
        match self {
            ScoreField::ExactJoint(f) => f.dim(),
            ScoreField::ExactConditional(f) => f.dim(),
            ScoreField::Fitted(m) => m.dim,
        }
    }

    /// All `m` score components at `z`, written into `out`.
    ///
    /// No validation; callers check dimensions once per sample set.
    pub fn scores_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            ScoreField::ExactJoint(f) => f.score(z, out),
            ScoreField::ExactConditional(f) => {
                let stat = f.statistic();
                let mut t = Vec::with_capacity(z.len());
                for (i, o) in out.iter_mut().enumerate() {
                    stat.apply(z, i, &mut t);
                    *o = f.conditional_score(i, z[i], &t);
                }
            }
            ScoreField::Fitted(model) => {
                let mut t = Vec::with_capacity(z.len());
                for (i, o) in out.iter_mut().enumerate() {
                    *o = model.eval_with(z, i, &mut t);
                }
            }
        }
    }

    /// `d/dx s^(i)` at `z`, the derivative along the coordinate's own axis.
    pub fn score_dx(&self, z: &[f64], i: usize) -> f64 {
        match self {
            ScoreField::ExactJoint(f) => f.score_derivative(z, i),
            ScoreField::ExactConditional(f) => {
                let mut t = Vec::new();
                f.statistic().apply(z, i, &mut t);
                f.conditional_score_dx(i, z[i], &t)
            }
            ScoreField::Fitted(model) => model.eval_dx_with(z, i, &mut Vec::new()),
        }
    }

    /// Score components for every row; `n x m`, row-major.
    pub fn scores_for(&self, samples: &SampleMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim(), samples.ncols())?;
        samples.ensure_finite("score input")?;
        let m = samples.ncols();
        let mut out = vec![0.0; samples.nrows() * m];
        for (z, o) in samples.rows().zip(out.chunks_exact_mut(m)) {
            self.scores_into(z, o);
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("score at sample {} coordinate {}", pos / m, pos % m),
            });
        }
        Ok(out)
    }
}

/// Component `i` of the field at `z`.
pub fn score_component(field: &ScoreField, z: &[f64], i: usize) -> Result<f64> {
    check_dim(field.dim(), z.len())?;
    if i >= z.len() {
        return Err(Error::IndexOutOfRange { index: i, dim: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "score input".into(),
        });
    }
    let v = match field {
        ScoreField::ExactJoint(f) => {
            let mut out = vec![0.0; z.len()];
            f.score(z, &mut out);
            out[i]
        }
        ScoreField::ExactConditional(f) => {
            let mut t = Vec::new();
            f.statistic().apply(z, i, &mut t);
            f.conditional_score(i, z[i], &t)
        }
        ScoreField::Fitted(model) => model.eval_with(z, i, &mut Vec::new()),
    };
    Ok(v)
}

/// Score-matching objective in integration-by-parts form,
/// `(1/(N m)) sum_l sum_i [ s^(i)(z_l)^2 / 2 + d/dx s^(i)(z_l) ]`.
pub fn sm_objective_value(field: &ScoreField, samples: &SampleMatrix) -> Result<f64> {
    let scores = field.scores_for(samples)?;
    let m = samples.ncols();
    let mut total = 0.0;
    for (l, z) in samples.rows().enumerate() {
        for i in 0..m {
            let s = scores[l * m + i];
            total += 0.5 * s * s + field.score_dx(z, i);
        }
    }
    let v = total / (samples.nrows() * m) as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "score-matching objective".into(),
        });
    }
    Ok(v)
}
