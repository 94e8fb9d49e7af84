//! Synthetic targets with closed-form scores, and the samplers used as generators.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};
use crate::matrix::SampleMatrix;
use crate::rng::Rng;
use crate::score::{ConditionalScore, JointScore, ScoreField, SummaryStatistic};

/// Smallest Cholesky pivot accepted as positive definite.
const PD_PIVOT: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
    precision: Vec<f64>,
    log_norm: f64,
}

/// Finite mixture of multivariate Gaussians; a single component is a plain Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

fn cholesky(cov: &[f64], m: usize, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let mat = DMatrix::from_row_slice(m, m, cov);
    if (0..m).any(|i| (0..i).any(|j| (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * (1.0 + mat[(i, j)].abs()))) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    let chol = Cholesky::new(mat).ok_or_else(|| Error::NotPositiveDefinite(format!("{what} failed to factor")))?;
    let l = chol.l_dirty();
    if let Some(i) = (0..m).find(|&i| l[(i, i)] < PD_PIVOT) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} has pivot {:e} at row {i}",
            l[(i, i)]
        )));
    }
    Ok(chol)
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = mat.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(mat[(i, j)]);
        }
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalises log-weights in place into probabilities.
fn softmax(v: &mut [f64]) {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
}

/// Solves `L z = v` in place for row-major lower-triangular `L`.
fn forward_solve(l: &[f64], v: &mut [f64]) {
    let m = v.len();
    for i in 0..m {
        let row = &l[i * m..i * m + i];
        let s: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
        v[i] = (v[i] - s) / l[i * m + i];
    }
}

impl GaussianMixture {
    /// Components as `(weight, mean, row-major covariance)`; weights are normalised.
    pub fn new(parts: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let dim = parts
            .first()
            .map(|p| p.1.len())
            .ok_or_else(|| invalid("components", "need at least one component"))?;
        if dim == 0 {
            return Err(invalid("mean", "dimension must be at least 1"));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if parts.iter().any(|p| !(p.0 > 0.0) || !p.0.is_finite()) {
            return Err(invalid("weights", "mixture weights must be positive"));
        }
        let mut components = Vec::with_capacity(parts.len());
        for (k, (w, mean, cov)) in parts.into_iter().enumerate() {
            check_dim(dim, mean.len())?;
            check_dim(dim * dim, cov.len())?;
            if mean.iter().chain(&cov).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("component {k} parameters"),
                });
            }
            let chol = cholesky(&cov, dim, &format!("covariance of component {k}"))?;
            let l = chol.l();
            let log_det: f64 = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
            let precision = row_major(&chol.inverse());
            components.push(Component {
                log_weight: (w / total).ln(),
                mean,
                cov,
                chol: row_major(&l),
                precision,
                log_norm: -0.5 * (log_det + dim as f64 * (2.0 * PI).ln()),
            });
        }
        Ok(Self { dim, components })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        Self::new(vec![(1.0, mean, cov)])
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], identity(dim, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    pub fn covariance(&self, k: usize) -> &[f64] {
        &self.components[k].cov
    }

    /// Per-component log joint weight `log pi_k + log N(x; mu_k, Sigma_k)`.
    fn component_log_weights(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let mut z = vec![0.0; self.dim];
        for c in &self.components {
            for ((zi, xi), mi) in z.iter_mut().zip(x).zip(&c.mean) {
                *zi = xi - mi;
            }
            forward_solve(&c.chol, &mut z);
            let q: f64 = z.iter().map(|v| v * v).sum();
            out.push(c.log_weight + c.log_norm - 0.5 * q);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut lw = Vec::with_capacity(self.components.len());
        self.component_log_weights(x, &mut lw);
        log_sum_exp(&lw)
    }

    /// Component score `-P_k (x - mu_k)` added with weight `r` into `out`.
    fn add_component_score(&self, k: usize, x: &[f64], r: f64, out: &mut [f64]) {
        let c = &self.components[k];
        let m = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &c.precision[i * m..(i + 1) * m];
            let s: f64 = row.iter().zip(x.iter().zip(&c.mean)).map(|(p, (a, b))| p * (a - b)).sum();
            *o -= r * s;
        }
    }

    fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.components.len());
        self.component_log_weights(x, &mut r);
        softmax(&mut r);
        r
    }

    pub fn sample_row(&self, rng: &mut Rng, out: &mut [f64]) {
        let k = if self.components.len() == 1 {
            0
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (k, c) in self.components.iter().enumerate() {
                acc += c.log_weight.exp();
                if u < acc {
                    pick = k;
                    break;
                }
            }
            pick
        };
        let c = &self.components[k];
        let m = self.dim;
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &c.chol[i * m..i * m + i + 1];
            *o = c.mean[i] + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn sample(&self, count: usize, rng: &mut Rng) -> SampleMatrix {
        let mut out = SampleMatrix::zeros(count, self.dim);
        for l in 0..count {
            self.sample_row(rng, out.row_mut(l));
        }
        out
    }

    /// Exact conditional scores of each coordinate given the summary statistic of the rest.
    pub fn conditional(&self, statistic: SummaryStatistic) -> Result<MixtureConditional> {
        statistic.validate(self.dim)?;
        let m = self.dim;
        let mut laws = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let mut per_coord = Vec::with_capacity(m);
            for i in 0..m {
                per_coord.push(CoordinateLaw::new(c, m, i, statistic)?);
            }
            laws.push((c.log_weight, per_coord));
        }
        Ok(MixtureConditional { dim: m, statistic, laws })
    }
}

impl JointScore for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.components.len() == 1 {
            self.add_component_score(0, z, 1.0, out);
            return;
        }
        let r = self.responsibilities(z);
        for (k, rk) in r.iter().enumerate() {
            self.add_component_score(k, z, *rk, out);
        }
    }

    fn score_derivative(&self, z: &[f64], i: usize) -> f64 {
        let m = self.dim;
        let r = if self.components.len() == 1 {
            vec![1.0]
        } else {
            self.responsibilities(z)
        };
        let mut mean_s = 0.0;
        let mut second = 0.0;
        for (c, rk) in self.components.iter().zip(&r) {
            let row = &c.precision[i * m..(i + 1) * m];
            let s: f64 = -row.iter().zip(z.iter().zip(&c.mean)).map(|(p, (a, b))| p * (a - b)).sum::<f64>();
            mean_s += rk * s;
            second += rk * (-c.precision[i * m + i] + s * s);
        }
        second - mean_s * mean_s
    }
}

/// One component's law of coordinate `i` given the statistic `t` of the rest:
/// `t ~ N(t_mean, t_cov)` and `x | t ~ N(intercept + slope . t, var)`.
#[derive(Debug, Clone)]
struct CoordinateLaw {
    intercept: f64,
    slope: Vec<f64>,
    var: f64,
    t_mean: Vec<f64>,
    t_chol: Vec<f64>,
    t_log_norm: f64,
}

impl CoordinateLaw {
    fn new(c: &Component, m: usize, i: usize, statistic: SummaryStatistic) -> Result<Self> {
        let rest: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let cov = |a: usize, b: usize| c.cov[a * m + b];
        // Linear map from the other coordinates to t, as rows.
        let map: Vec<Vec<f64>> = match statistic {
            SummaryStatistic::Identity => (0..rest.len())
                .map(|r| (0..rest.len()).map(|s| if r == s { 1.0 } else { 0.0 }).collect())
                .collect(),
            SummaryStatistic::Mean => vec![vec![1.0 / rest.len() as f64; rest.len()]],
        };
        let d = map.len();
        let t_mean: Vec<f64> = map
            .iter()
            .map(|row| row.iter().zip(&rest).map(|(a, &j)| a * c.mean[j]).sum())
            .collect();
        let mut t_cov = vec![0.0; d * d];
        let mut cross = vec![0.0; d];
        for p in 0..d {
            for (a, &ja) in rest.iter().enumerate() {
                cross[p] += map[p][a] * cov(ja, i);
                for q in 0..d {
                    for (b, &jb) in rest.iter().enumerate() {
                        t_cov[p * d + q] += map[p][a] * map[q][b] * cov(ja, jb);
                    }
                }
            }
        }
        let (slope, t_chol, t_log_det) = if d == 0 {
            (Vec::new(), Vec::new(), 0.0)
        } else {
            let chol = cholesky(&t_cov, d, "conditioning covariance")?;
            let slope = chol.solve(&DVector::from_vec(cross.clone())).as_slice().to_vec();
            let l = chol.l();
            let log_det = 2.0 * (0..d).map(|p| l[(p, p)].ln()).sum::<f64>();
            (slope, row_major(&l), log_det)
        };
        let var = cov(i, i) - slope.iter().zip(&cross).map(|(a, b)| a * b).sum::<f64>();
        if !(var > 1e-12) {
            return Err(Error::DegenerateConditional { coordinate: i, variance: var });
        }
        let intercept = c.mean[i] - slope.iter().zip(&t_mean).map(|(a, b)| a * b).sum::<f64>();
        Ok(Self {
            intercept,
            slope,
            var,
            t_mean,
            t_chol,
            t_log_norm: -0.5 * (t_log_det + d as f64 * (2.0 * PI).ln()),
        })
    }

    fn score(&self, x: f64, t: &[f64]) -> f64 {
        let mu = self.intercept + self.slope.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        -(x - mu) / self.var
    }

    fn log_joint(&self, x: f64, t: &[f64]) -> f64 {
        let mut z: Vec<f64> = t.iter().zip(&self.t_mean).map(|(a, b)| a - b).collect();
        forward_solve(&self.t_chol, &mut z);
        let q: f64 = z.iter().map(|v| v * v).sum();
        let s = self.score(x, t);
        self.t_log_norm - 0.5 * q - 0.5 * (2.0 * PI * self.var).ln() - 0.5 * s * s * self.var
    }
}

/// Exact conditional scores of a Gaussian mixture, built from Schur complements.
#[derive(Debug, Clone)]
pub struct MixtureConditional {
    dim: usize,
    statistic: SummaryStatistic,
    laws: Vec<(f64, Vec<CoordinateLaw>)>,
}

impl MixtureConditional {
    fn weights(&self, i: usize, x: f64, t: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = self.laws.iter().map(|(lw, laws)| lw + laws[i].log_joint(x, t)).collect();
        softmax(&mut w);
        w
    }
}

impl ConditionalScore for MixtureConditional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn statistic(&self) -> SummaryStatistic {
        self.statistic
    }

    fn conditional_score(&self, i: usize, x: f64, t: &[f64]) -> f64 {
        if self.laws.len() == 1 {
            return self.laws[0].1[i].score(x, t);
        }
        let w = self.weights(i, x, t);
        self.laws.iter().zip(&w).map(|((_, laws), r)| r * laws[i].score(x, t)).sum()
    }

    fn conditional_score_dx(&self, i: usize, x: f64, t: &[f64]) -> f64 {
        if self.laws.len() == 1 {
            return -1.0 / self.laws[0].1[i].var;
        }
        let w = self.weights(i, x, t);
        let mut mean_s = 0.0;
        let mut second = 0.0;
        for ((_, laws), r) in self.laws.iter().zip(&w) {
            let s = laws[i].score(x, t);
            mean_s += r * s;
            second += r * (-1.0 / laws[i].var + s * s);
        }
        second - mean_s * mean_s
    }
}

fn identity(m: usize, diag: f64) -> Vec<f64> {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = diag;
    }
    v
}

/// Unit-diagonal covariance with `rho` on the first off-diagonal.
fn tridiagonal(m: usize, rho: f64) -> Vec<f64> {
    let mut v = identity(m, 1.0);
    for i in 0..m.saturating_sub(1) {
        v[i * m + i + 1] = rho;
        v[(i + 1) * m + i] = rho;
    }
    v
}

/// Langevin sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldSettings {
    pub step: f64,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for SgldSettings {
    fn default() -> Self {
        Self {
            step: 0.01,
            burn_in: 1000,
            thinning: 10,
        }
    }
}

/// A sampleable generator.
#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    /// Isotropic Gaussian whose variances are all `1 + variance_shift`.
    Gvd {
        variance_shift: f64,
        target: Arc<GaussianMixture>,
    },
    /// Two-component mixture with `adjacent_correlation` between neighbouring coordinates.
    Mog {
        adjacent_correlation: f64,
        target: Arc<GaussianMixture>,
    },
    /// Any explicit Gaussian mixture.
    Mixture(Arc<GaussianMixture>),
    /// Rows drawn uniformly with replacement from a fixed dataset.
    RealSubsample(Arc<SampleMatrix>),
    /// Langevin chain driven by a score field, started at the origin.
    Sgld { target: ScoreField, settings: SgldSettings },
}

impl GeneratorSpec {
    pub fn gvd(dim: usize, variance_shift: f64) -> Result<Self> {
        if !(variance_shift > -1.0) || !variance_shift.is_finite() {
            return Err(invalid("variance_shift", "must be finite and greater than -1"));
        }
        let target = GaussianMixture::gaussian(vec![0.0; dim], identity(dim, 1.0 + variance_shift))?;
        Ok(GeneratorSpec::Gvd {
            variance_shift,
            target: Arc::new(target),
        })
    }

    /// Means default to `+/-(2, 0, ..., 0)`.
    pub fn mog(dim: usize, adjacent_correlation: f64) -> Result<Self> {
        let mut mu = vec![0.0; dim];
        if dim > 0 {
            mu[0] = 2.0;
        }
        let neg = mu.iter().map(|v| -v).collect();
        Self::mog_with_means(dim, adjacent_correlation, [mu, neg])
    }

    pub fn mog_with_means(dim: usize, adjacent_correlation: f64, means: [Vec<f64>; 2]) -> Result<Self> {
        if !adjacent_correlation.is_finite() {
            return Err(invalid("adjacent_correlation", "must be finite"));
        }
        let cov = tridiagonal(dim, adjacent_correlation);
        let [a, b] = means;
        let target = GaussianMixture::new(vec![(0.5, a, cov.clone()), (0.5, b, cov)])?;
        Ok(GeneratorSpec::Mog {
            adjacent_correlation,
            target: Arc::new(target),
        })
    }

    pub fn real(data: SampleMatrix) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::TooFewSamples { required: 1, found: 0 });
        }
        data.ensure_finite("dataset")?;
        Ok(GeneratorSpec::RealSubsample(Arc::new(data)))
    }

    pub fn sgld(target: ScoreField, settings: SgldSettings) -> Result<Self> {
        if !(settings.step > 0.0) || !settings.step.is_finite() {
            return Err(invalid("step", "must be positive"));
        }
        if settings.thinning == 0 {
            return Err(invalid("thinning", "must be at least 1"));
        }
        Ok(GeneratorSpec::Sgld { target, settings })
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Gvd { target, .. } | GeneratorSpec::Mog { target, .. } | GeneratorSpec::Mixture(target) => {
                target.dim()
            }
            GeneratorSpec::RealSubsample(d) => d.ncols(),
            GeneratorSpec::Sgld { target, .. } => target.dim(),
        }
    }

    fn mixture(&self) -> Option<&Arc<GaussianMixture>> {
        match self {
            GeneratorSpec::Gvd { target, .. } | GeneratorSpec::Mog { target, .. } | GeneratorSpec::Mixture(target) => {
                Some(target)
            }
            _ => None,
        }
    }
}

/// `count` draws from the generator.
pub fn sample(spec: &GeneratorSpec, count: usize, rng: &mut Rng) -> Result<SampleMatrix> {
    match spec {
        GeneratorSpec::Gvd { target, .. } | GeneratorSpec::Mog { target, .. } | GeneratorSpec::Mixture(target) => {
            Ok(target.sample(count, rng))
        }
        GeneratorSpec::RealSubsample(data) => {
            let idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..data.nrows())).collect();
            Ok(data.select_rows(&idx))
        }
        GeneratorSpec::Sgld { target, settings } => sgld_chain(target, settings, count, rng),
    }
}

fn sgld_chain(field: &ScoreField, settings: &SgldSettings, count: usize, rng: &mut Rng) -> Result<SampleMatrix> {
    let m = field.dim();
    let mut x = vec![0.0; m];
    let mut s = vec![0.0; m];
    let half = 0.5 * settings.step;
    let noise = settings.step.sqrt();
    let mut out = SampleMatrix::zeros(count, m);
    let total = settings.burn_in + count * settings.thinning;
    for it in 1..=total {
        field.scores_into(&x, &mut s);
        for (xi, si) in x.iter_mut().zip(&s) {
            let xi_noise: f64 = rng.sample(StandardNormal);
            *xi += half * si + noise * xi_noise;
        }
        if it > settings.burn_in && (it - settings.burn_in).is_multiple_of(settings.thinning) {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("Langevin chain at iteration {it}"),
                });
            }
            out.row_mut((it - settings.burn_in) / settings.thinning - 1).copy_from_slice(&x);
        }
    }
    Ok(out)
}

/// The target's joint score as a field.
pub fn exact_score(spec: &GeneratorSpec) -> Result<ScoreField> {
    match spec {
        GeneratorSpec::Sgld { target, .. } => Ok(target.clone()),
        GeneratorSpec::RealSubsample(_) => Err(Error::Unsupported(
            "a subsampled dataset has no density, so no exact score".into(),
        )),
        _ => Ok(ScoreField::ExactJoint(spec.mixture().expect("mixture variant").clone())),
    }
}

/// Exact conditional scores given the chosen summary statistic.
pub fn exact_conditional(spec: &GeneratorSpec, statistic: SummaryStatistic) -> Result<ScoreField> {
    match spec.mixture() {
        Some(target) => Ok(ScoreField::ExactConditional(Arc::new(target.conditional(statistic)?))),
        None => Err(Error::Unsupported(
            "exact conditional scores need a Gaussian or mixture target".into(),
        )),
    }
}

/// `s^(i)(x | rest)` for the target conditioned on all other coordinates.
pub fn exact_conditional_score(spec: &GeneratorSpec, i: usize, x: f64, rest: &[f64]) -> Result<f64> {
    let target = spec.mixture().ok_or_else(|| {
        Error::Unsupported("exact conditional scores need a Gaussian or mixture target".into())
    })?;
    let m = target.dim();
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, dim: m });
    }
    check_dim(m - 1, rest.len())?;
    let cond = target.conditional(SummaryStatistic::Identity)?;
    Ok(cond.conditional_score(i, x, rest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::score::score_component;

    fn rng(seed: u64) -> Rng {
        stream(seed, "generator-test", &[])
    }

    fn column_moments(s: &SampleMatrix, j: usize) -> (f64, f64) {
        let n = s.nrows() as f64;
        let mean = s.rows().map(|r| r[j]).sum::<f64>() / n;
        let var = s.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn bivariate(rho: f64) -> GeneratorSpec {
        GeneratorSpec::Mixture(Arc::new(
            GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, rho, rho, 1.0]).unwrap(),
        ))
    }

    #[test]
    fn gvd_null_moments() {
        let spec = GeneratorSpec::gvd(3, 0.0).unwrap();
        let s = sample(&spec, 10_000, &mut rng(1)).unwrap();
        for j in 0..3 {
            let (mean, var) = column_moments(&s, j);
            assert!(mean.abs() <= 4.0 / 100.0, "{mean}");
            assert!((var - 1.0).abs() <= 0.15, "{var}");
        }
    }

    #[test]
    fn gvd_shift_scales_variance() {
        let s = sample(&GeneratorSpec::gvd(2, 0.4).unwrap(), 20_000, &mut rng(2)).unwrap();
        let (_, var) = column_moments(&s, 0);
        assert!((var - 1.4).abs() <= 0.05, "{var}");
        assert!(GeneratorSpec::gvd(2, -1.0).is_err());
    }

    #[test]
    fn seeds_determine_samples() {
        let spec = GeneratorSpec::mog(4, 0.2).unwrap();
        let a = sample(&spec, 50, &mut rng(3)).unwrap();
        let b = sample(&spec, 50, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        let zero_shift = sample(&GeneratorSpec::gvd(3, 0.0).unwrap(), 20, &mut rng(4)).unwrap();
        let standard = GaussianMixture::standard(3).unwrap().sample(20, &mut rng(4));
        assert_eq!(zero_shift, standard);
    }

    #[test]
    fn mog_is_bimodal_with_balanced_components() {
        let spec = GeneratorSpec::mog(3, 0.0).unwrap();
        let s = sample(&spec, 10_000, &mut rng(5)).unwrap();
        let positive = s.rows().filter(|r| r[0] > 0.0).count() as f64 / 10_000.0;
        assert!((positive - 0.5).abs() <= 0.02, "{positive}");
        let near = |c: f64| s.rows().filter(|r| (r[0] - c).abs() < 0.25).count();
        assert!(near(2.0) > 3 * near(0.0));
        assert!(near(-2.0) > 3 * near(0.0));
    }

    #[test]
    fn positive_definiteness_gate() {
        assert!(GeneratorSpec::mog(40, 0.2).is_ok());
        assert!(matches!(GeneratorSpec::mog(40, 0.51), Err(Error::NotPositiveDefinite(_))));
        assert!(matches!(GeneratorSpec::mog(3, 0.75), Err(Error::NotPositiveDefinite(_))));
        assert!(GeneratorSpec::mog(3, 0.7).is_ok());
    }

    #[test]
    fn sgld_matches_stationary_moments() {
        let target = ScoreField::ExactJoint(Arc::new(GaussianMixture::standard(1).unwrap()));
        let settings = SgldSettings {
            step: 0.01,
            burn_in: 1000,
            thinning: 100,
        };
        let spec = GeneratorSpec::sgld(target, settings).unwrap();
        let s = sample(&spec, 10_000, &mut rng(6)).unwrap();
        let (mean, var) = column_moments(&s, 0);
        assert!(mean.abs() <= 0.05, "{mean}");
        assert!((0.9..=1.1).contains(&var), "{var}");
    }

    #[test]
    fn subsample_draws_dataset_rows() {
        let data = SampleMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let spec = GeneratorSpec::real(data.clone()).unwrap();
        let s = sample(&spec, 100, &mut rng(7)).unwrap();
        assert!(s.rows().all(|r| r == data.row(0) || r == data.row(1)));
        assert!(matches!(exact_score(&spec), Err(Error::Unsupported(_))));
    }

    #[test]
    fn exact_scores_at_known_points() {
        let field = exact_score(&GeneratorSpec::gvd(3, 0.0).unwrap()).unwrap();
        let v: Vec<f64> = (0..3).map(|i| score_component(&field, &[1.0, 2.0, 3.0], i).unwrap()).collect();
        assert_eq!(v, vec![-1.0, -2.0, -3.0]);
        let mog = GeneratorSpec::mog_with_means(2, 0.0, [vec![1.5, -0.5], vec![-1.5, 0.5]]).unwrap();
        let field = exact_score(&mog).unwrap();
        for i in 0..2 {
            assert!(score_component(&field, &[0.0, 0.0], i).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn exact_score_matches_log_density_differences() {
        let mog = GeneratorSpec::mog(3, 0.3).unwrap();
        let target = mog.mixture().unwrap().clone();
        let field = exact_score(&mog).unwrap();
        let pts = target.sample(200, &mut rng(8));
        let h = 1e-5;
        for z in pts.rows() {
            for i in 0..3 {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                let fd = (target.log_density(&zp) - target.log_density(&zm)) / (2.0 * h);
                let exact = score_component(&field, z, i).unwrap();
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
                let fd2 = (score_component(&field, &zp, i).unwrap() - score_component(&field, &zm, i).unwrap())
                    / (2.0 * h);
                assert!((fd2 - field.score_dx(z, i)).abs() <= 1e-5 * fd2.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bivariate_conditional_law() {
        let spec = bivariate(0.5);
        for (x, rest) in [(0.3, 1.2), (-2.0, 0.7), (1.0, -1.0)] {
            let s = exact_conditional_score(&spec, 0, x, &[rest]).unwrap();
            assert!((s + (x - 0.5 * rest) / 0.75).abs() < 1e-12);
        }
        let indep = bivariate(0.0);
        assert!((exact_conditional_score(&indep, 1, 0.8, &[5.0]).unwrap() + 0.8).abs() < 1e-12);
    }

    #[test]
    fn conditional_scores_match_joint_components() {
        for spec in [bivariate(0.5), GeneratorSpec::gvd(3, 0.2).unwrap(), GeneratorSpec::mog(4, 0.3).unwrap()] {
            let joint = exact_score(&spec).unwrap();
            let cond = exact_conditional(&spec, SummaryStatistic::Identity).unwrap();
            let pts = spec.mixture().unwrap().sample(100, &mut rng(9));
            for z in pts.rows() {
                for i in 0..z.len() {
                    let a = score_component(&joint, z, i).unwrap();
                    let b = score_component(&cond, z, i).unwrap();
                    assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
                    assert!((joint.score_dx(z, i) - cond.score_dx(z, i)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn mean_statistic_conditional_for_gaussians() {
        // Equicorrelated: x_0 | mean(x_1, x_2) has slope 2 rho / (1 + rho), variance 1 - 2 rho^2 / (1 + rho).
        let rho = 0.4;
        let cov = vec![1.0, rho, rho, rho, 1.0, rho, rho, rho, 1.0];
        let spec = GeneratorSpec::Mixture(Arc::new(GaussianMixture::gaussian(vec![0.0; 3], cov).unwrap()));
        let cond = exact_conditional(&spec, SummaryStatistic::Mean).unwrap();
        let slope = 2.0 * rho / (1.0 + rho);
        let var = 1.0 - 2.0 * rho * rho / (1.0 + rho);
        let z = [0.7, -0.2, 1.4];
        let t = 0.6;
        let got = score_component(&cond, &z, 0).unwrap();
        assert!((got + (0.7 - slope * t) / var).abs() < 1e-12);
        assert!(exact_conditional(&GeneratorSpec::gvd(1, 0.0).unwrap(), SummaryStatistic::Mean).is_err());
    }
}
