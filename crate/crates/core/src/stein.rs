//! Stein kernels and the KSD / NP-KSD statistics built from them.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{sq_dist, GaussianKernel};
use crate::matrix::SampleMatrix;
use crate::rng::Rng;
use crate::score::ScoreField;

/// Coordinate indices drawn with replacement, with per-coordinate counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexDraw {
    indices: Vec<usize>,
    counts: Vec<usize>,
}

impl IndexDraw {
    pub fn from_indices(dim: usize, indices: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if indices.is_empty() {
            return Err(invalid("resample_size", "must be at least 1"));
        }
        let mut counts = vec![0; dim];
        for &i in &indices {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            counts[i] += 1;
        }
        Ok(Self { indices, counts })
    }

    /// Every coordinate exactly once.
    pub fn each_once(dim: usize) -> Result<Self> {
        Self::from_indices(dim, (0..dim).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// The draw restricted to its first `b` indices.
    pub fn prefix(&self, b: usize) -> Result<Self> {
        Self::from_indices(self.dim(), self.indices[..b.min(self.size())].to_vec())
    }
}

/// `resample_size` i.i.d. uniform draws over `0..dim`.
pub fn draw_indices(dim: usize, resample_size: usize, rng: &mut Rng) -> Result<IndexDraw> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    let indices = (0..resample_size).map(|_| rng.random_range(0..dim)).collect();
    IndexDraw::from_indices(dim, indices)
}

/// Nonnegative coordinate weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateWeights(Vec<f64>);

impl CoordinateWeights {
    pub fn uniform(dim: usize) -> Self {
        Self(vec![1.0 / dim as f64; dim])
    }

    pub fn from_draw(draw: &IndexDraw) -> Self {
        let b = draw.size() as f64;
        Self(draw.counts().iter().map(|&k| k as f64 / b).collect())
    }

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("weights", "must be nonempty, finite and nonnegative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("sum to {total}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// How the weighted operator's inner product is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticForm {
    /// Full `i, j` double sum: a scalar-valued test function.
    #[default]
    Scalar,
    /// Only `i = j` terms: a vector-valued test function.
    Diagonal,
}

/// Stein kernel between two points with precomputed scores.
#[inline]
fn pair_value(
    x: &[f64],
    sx: &[f64],
    y: &[f64],
    sy: &[f64],
    w: &[f64],
    kernel: &GaussianKernel,
    form: QuadraticForm,
) -> f64 {
    let inv = kernel.inv_sigma2();
    let k = kernel.from_sq_dist(sq_dist(x, y));
    match form {
        QuadraticForm::Scalar => {
            let mut w2 = 0.0;
            let mut wd = 0.0;
            let mut score_x = 0.0;
            let mut score_y = 0.0;
            for i in 0..w.len() {
                w2 += w[i] * w[i];
                wd += w[i] * (x[i] - y[i]);
                score_x += w[i] * sx[i];
                score_y += w[i] * sy[i];
            }
            k * (w2 * inv - wd * wd * inv * inv + (score_x - score_y) * wd * inv + score_x * score_y)
        }
        QuadraticForm::Diagonal => {
            let mut acc = 0.0;
            for i in 0..w.len() {
                let d = x[i] - y[i];
                acc += w[i] * w[i] * (inv - d * d * inv * inv + (sx[i] - sy[i]) * d * inv + sx[i] * sy[i]);
            }
            k * acc
        }
    }
}

fn scores_checked(field: &ScoreField, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(field.dim(), z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "Stein kernel input".into(),
        });
    }
    let mut s = vec![0.0; z.len()];
    field.scores_into(z, &mut s);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "score values".into(),
        });
    }
    Ok(s)
}

/// Stein kernel `<A k(x, .), A k(y, .)>` for the weighted operator
/// `A g = sum_i w_i (d_i g + g s^(i))`.
pub fn stein_kernel(
    x: &[f64],
    y: &[f64],
    field: &ScoreField,
    weights: &CoordinateWeights,
    kernel: &GaussianKernel,
    form: QuadraticForm,
) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_dim(weights.dim(), x.len())?;
    let sx = scores_checked(field, x)?;
    let sy = scores_checked(field, y)?;
    Ok(pair_value(x, &sx, y, &sy, weights.as_slice(), kernel, form))
}

/// Stein kernel of the unweighted joint score operator, `sum_i (d_i + s_i)`.
pub fn joint_stein_kernel(
    x: &[f64],
    y: &[f64],
    field: &ScoreField,
    kernel: &GaussianKernel,
    form: QuadraticForm,
) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    let sx = scores_checked(field, x)?;
    let sy = scores_checked(field, y)?;
    Ok(pair_value(x, &sx, y, &sy, &vec![1.0; x.len()], kernel, form))
}

/// `(A k(., y))(x) = sum_i w_i (d/dx_i k(x, y) + s^(i)(x) k(x, y))`.
pub fn stein_operator_on_kernel(
    x: &[f64],
    y: &[f64],
    field: &ScoreField,
    weights: &[f64],
    kernel: &GaussianKernel,
) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_dim(weights.len(), x.len())?;
    let sx = scores_checked(field, x)?;
    let k = kernel.from_sq_dist(sq_dist(x, y));
    let inv = kernel.inv_sigma2();
    Ok((0..x.len()).map(|i| weights[i] * (-(x[i] - y[i]) * inv * k + sx[i] * k)).sum())
}

/// `n x n` matrix of Stein kernel values over a sample set.
#[derive(Debug, Clone)]
pub struct SteinGram {
    n: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    form: QuadraticForm,
    bandwidth: f64,
}

impl SteinGram {
    /// Builds the Gram with arbitrary nonnegative coordinate weights.
    pub fn build(
        samples: &SampleMatrix,
        field: &ScoreField,
        weights: &[f64],
        kernel: &GaussianKernel,
        form: QuadraticForm,
    ) -> Result<Self> {
        check_dim(weights.len(), samples.ncols())?;
        let scores = field.scores_for(samples)?;
        Ok(Self::from_scores(samples, &scores, weights, kernel, form))
    }

    /// Builds the Gram from scores already evaluated row by row.
    pub(crate) fn from_scores(
        samples: &SampleMatrix,
        scores: &[f64],
        weights: &[f64],
        kernel: &GaussianKernel,
        form: QuadraticForm,
    ) -> Self {
        let n = samples.nrows();
        let m = samples.ncols();
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(a, row)| {
            let (x, sx) = (samples.row(a), &scores[a * m..(a + 1) * m]);
            for (b, v) in row.iter_mut().enumerate().skip(a) {
                *v = pair_value(x, sx, samples.row(b), &scores[b * m..(b + 1) * m], weights, kernel, form);
            }
        });
        for a in 0..n {
            for b in 0..a {
                values[a * n + b] = values[b * n + a];
            }
        }
        Self {
            n,
            values,
            weights: weights.to_vec(),
            form,
            bandwidth: kernel.sigma(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn form(&self) -> QuadraticForm {
        self.form
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `(1/n^2) sum_{a,b} U[a][b]`.
    pub fn v_statistic(&self) -> f64 {
        self.values.iter().sum::<f64>() / (self.n * self.n) as f64
    }

    /// `(1/(n(n-1))) sum_{a != b} U[a][b]`.
    pub fn u_statistic(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                found: self.n,
            });
        }
        let n = self.n;
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    total += self.values[a * n + b];
                }
            }
        }
        Ok(total / (n * (n - 1)) as f64)
    }

    /// `(1/n^2) w^T U w` for per-sample multipliers `w`.
    pub fn weighted_v_statistic(&self, w: &[f64]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for a in 0..n {
            let row = &self.values[a * n..(a + 1) * n];
            total += w[a] * row.iter().zip(w).map(|(u, wb)| u * wb).sum::<f64>();
        }
        total / (n * n) as f64
    }
}

fn nonempty(samples: &SampleMatrix) -> Result<()> {
    if samples.nrows() == 0 {
        return Err(Error::TooFewSamples { required: 1, found: 0 });
    }
    Ok(())
}

/// V-statistic of the classic kernel Stein discrepancy (joint score, trace form).
pub fn ksd_v(samples: &SampleMatrix, field: &ScoreField, kernel: &GaussianKernel) -> Result<f64> {
    nonempty(samples)?;
    let ones = vec![1.0; samples.ncols()];
    Ok(SteinGram::build(samples, field, &ones, kernel, QuadraticForm::Diagonal)?.v_statistic())
}

/// U-statistic of the classic kernel Stein discrepancy.
pub fn ksd_u(samples: &SampleMatrix, field: &ScoreField, kernel: &GaussianKernel) -> Result<f64> {
    if samples.nrows() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            found: samples.nrows(),
        });
    }
    let ones = vec![1.0; samples.ncols()];
    SteinGram::build(samples, field, &ones, kernel, QuadraticForm::Diagonal)?.u_statistic()
}

/// NP-KSD: V-statistic of the re-sampled operator with weights `k_i / B`.
pub fn npksd_stat(
    samples: &SampleMatrix,
    field: &ScoreField,
    draw: &IndexDraw,
    kernel: &GaussianKernel,
    form: QuadraticForm,
) -> Result<f64> {
    nonempty(samples)?;
    check_dim(samples.ncols(), draw.dim())?;
    let w = CoordinateWeights::from_draw(draw);
    Ok(SteinGram::build(samples, field, w.as_slice(), kernel, form)?.v_statistic())
}

/// Reference discrepancy: uniform coordinate weights with the given (exact conditional) field.
pub fn ksd_t_reference(
    samples: &SampleMatrix,
    field: &ScoreField,
    kernel: &GaussianKernel,
    form: QuadraticForm,
) -> Result<f64> {
    nonempty(samples)?;
    let w = CoordinateWeights::uniform(samples.ncols());
    Ok(SteinGram::build(samples, field, w.as_slice(), kernel, form)?.v_statistic())
}
