//! Gaussian RKHS kernel, its analytic partial derivatives, and bandwidth selection.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::matrix::SampleMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

/// Kernel bandwidth: an explicit `sigma`, or resolved from data by the median heuristic.
///
/// Serialized as a number or the string `"median_heuristic"`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    MedianHeuristic,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Fixed(f64),
    Named(String),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Fixed(s) if s.is_finite() && s > 0.0 => Ok(Bandwidth::Fixed(s)),
            BandwidthRepr::Fixed(s) => Err(format!("bandwidth must be finite and > 0, got {s}")),
            BandwidthRepr::Named(s) if s == "median_heuristic" => Ok(Bandwidth::MedianHeuristic),
            BandwidthRepr::Named(s) => Err(format!(
                "unknown bandwidth `{s}`; expected a positive number or \"median_heuristic\""
            )),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Fixed(s) => BandwidthRepr::Fixed(s),
            Bandwidth::MedianHeuristic => BandwidthRepr::Named("median_heuristic".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(default)]
    pub family: KernelFamily,
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

impl KernelConfig {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn median_heuristic() -> Self {
        Self::default()
    }

    /// Fixes the bandwidth, using `reference` for the median heuristic.
    pub fn resolve(&self, reference: &SampleMatrix) -> Result<GaussianKernel> {
        let sigma = match self.bandwidth {
            Bandwidth::Fixed(s) => s,
            Bandwidth::MedianHeuristic => median_heuristic(reference)?,
        };
        GaussianKernel::new(sigma)
    }

    /// The resolved kernel when the bandwidth is explicit.
    pub fn fixed(&self) -> Result<GaussianKernel> {
        match self.bandwidth {
            Bandwidth::Fixed(s) => GaussianKernel::new(s),
            Bandwidth::MedianHeuristic => Err(invalid(
                "bandwidth",
                "median heuristic must be resolved against data first",
            )),
        }
    }
}

/// `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))` with a resolved bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    sigma: f64,
}

/// Kernel value with the first partials `d/dx_i`, `d/dy_j` and the mixed partial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPartials {
    pub dxi: f64,
    pub dyj: f64,
    pub dxi_dyj: f64,
    pub k: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn inv_sigma2(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    /// Kernel value from a squared distance.
    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        (-0.5 * d2 * self.inv_sigma2()).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.from_sq_dist(sq_dist(x, y)))
    }

    pub fn partials(&self, x: &[f64], y: &[f64], i: usize, j: usize) -> Result<KernelPartials> {
        check_dim(x.len(), y.len())?;
        let m = x.len();
        for idx in [i, j] {
            if idx >= m {
                return Err(Error::IndexOutOfRange { index: idx, dim: m });
            }
        }
        let k = self.from_sq_dist(sq_dist(x, y));
        let s2 = self.inv_sigma2();
        let di = x[i] - y[i];
        let dj = x[j] - y[j];
        let delta = if i == j { 1.0 } else { 0.0 };
        Ok(KernelPartials {
            dxi: -di * s2 * k,
            dyj: dj * s2 * k,
            dxi_dyj: (delta * s2 - di * dj * s2 * s2) * k,
            k,
        })
    }

    /// Symmetric Gram matrix, row-major.
    pub fn gram(&self, samples: &SampleMatrix) -> Vec<f64> {
        use rayon::prelude::*;
        let n = samples.nrows();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| {
                let xa = samples.row(a);
                (0..n)
                    .map(|b| self.from_sq_dist(sq_dist(xa, samples.row(b))))
                    .collect()
            })
            .collect();
        rows.concat()
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn eval_kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    cfg.fixed()?.eval(x, y)
}

pub fn kernel_partials(
    x: &[f64],
    y: &[f64],
    i: usize,
    j: usize,
    cfg: &KernelConfig,
) -> Result<KernelPartials> {
    cfg.fixed()?.partials(x, y, i, j)
}

/// `sigma = sqrt(median{|x_a - x_b|^2 : a < b} / 2)`, or 1.0 when that median is zero.
///
/// For an even number of pairs the median is the mean of the two middle values.
pub fn median_heuristic(samples: &SampleMatrix) -> Result<f64> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, found: n });
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        let xa = samples.row(a);
        for b in a + 1..n {
            d2.push(sq_dist(xa, samples.row(b)));
        }
    }
    let len = d2.len();
    let mid = len / 2;
    let (_, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if len % 2 == 1 {
        upper
    } else {
        let lower = d2[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if !median.is_finite() {
        return Err(Error::NonFinite {
            context: "median heuristic".into(),
        });
    }
    if median <= 0.0 {
        return Ok(1.0);
    }
    Ok((median / 2.0).sqrt())
}
