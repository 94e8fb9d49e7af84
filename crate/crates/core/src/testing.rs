//! Hypothesis-test drivers and their shared calibration rules.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::generators::{sample, GeneratorSpec};
use crate::kernels::{median_heuristic, sq_dist, GaussianKernel, KernelConfig};
use crate::matrix::SampleMatrix;
use crate::rng::stream;
use crate::score::{
    fit_conditional_gaussian, fit_score_matching, FitMethod, ScoreBasis, ScoreField, SummaryStatistic,
};
use crate::stein::{draw_indices, npksd_stat, QuadraticForm, SteinGram};

fn default_alpha() -> f64 {
    0.05
}

fn default_ridge() -> f64 {
    1e-4
}

fn default_fit() -> FitMethod {
    FitMethod::ScoreMatching
}

/// Parameters shared by every test driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Observed sample size.
    #[serde(rename = "n")]
    pub observed_size: usize,
    /// Generator draws used to fit the score.
    #[serde(rename = "N")]
    pub generator_size: usize,
    /// Coordinate re-sample size.
    #[serde(rename = "B")]
    pub resample_size: usize,
    /// Null replicates (Monte Carlo draws, bootstrap draws or permutations).
    #[serde(rename = "b")]
    pub null_replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub statistic: SummaryStatistic,
    #[serde(default)]
    pub basis: ScoreBasis,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_fit")]
    pub fit: FitMethod,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub form: QuadraticForm,
}

impl TestConfig {
    pub fn new(observed_size: usize, generator_size: usize, resample_size: usize, null_replicates: usize) -> Self {
        Self {
            alpha: default_alpha(),
            observed_size,
            generator_size,
            resample_size,
            null_replicates,
            seed: 0,
            statistic: SummaryStatistic::Identity,
            basis: ScoreBasis::default(),
            ridge: default_ridge(),
            fit: FitMethod::ScoreMatching,
            kernel: KernelConfig::median_heuristic(),
            form: QuadraticForm::Scalar,
        }
    }

    /// Checks the fields every driver relies on.
    pub fn validate_calibration(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie strictly between 0 and 1"));
        }
        if self.null_replicates < 20 {
            return Err(invalid("b", "need at least 20 null replicates"));
        }
        if let crate::kernels::Bandwidth::Fixed(s) = self.kernel.bandwidth {
            GaussianKernel::new(s)?;
        }
        Ok(())
    }

    /// Full validation for the Monte Carlo NP-KSD test.
    pub fn validate(&self) -> Result<()> {
        self.validate_calibration()?;
        if self.observed_size < 2 {
            return Err(invalid("n", "need at least 2 observations"));
        }
        if self.generator_size < self.observed_size {
            return Err(invalid("N", "generator sample size must be at least n"));
        }
        if self.resample_size < 1 {
            return Err(invalid("B", "must be at least 1"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(invalid("ridge", "must be finite and nonnegative"));
        }
        ScoreBasis::new(self.basis.degree)?;
        Ok(())
    }
}

/// Outcome of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub variant: String,
    pub statistic: f64,
    pub null_quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub generator_size: usize,
    #[serde(rename = "B")]
    pub resample_size: Option<usize>,
    pub b: usize,
    pub seed: u64,
    pub bandwidth: f64,
    pub null_draws: Vec<f64>,
    pub config: TestConfig,
    pub wall_time_seconds: f64,
}

/// Order-statistic quantile with index `ceil((1 - alpha) b)`, one-based.
pub fn null_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    // guard against (1 - alpha) b landing a rounding error above an integer
    let idx = (((1.0 - alpha) * b as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[idx.min(b) - 1]
}

/// `(1 + #{draws >= statistic}) / (b + 1)`.
pub fn monte_carlo_p_value(statistic: f64, draws: &[f64]) -> f64 {
    let hits = draws.iter().filter(|&&d| d >= statistic).count();
    (1 + hits) as f64 / (draws.len() + 1) as f64
}

/// Decision triple `(quantile, p-value, reject)`; rejection is strict.
pub fn decide(statistic: f64, draws: &[f64], alpha: f64) -> (f64, f64, bool) {
    let q = null_quantile(draws, alpha);
    (q, monte_carlo_p_value(statistic, draws), statistic > q)
}

/// Collects per-replicate results in index order so the first error is deterministic.
fn collect_replicates(results: Vec<Result<f64>>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        let v = res.map_err(|e| Error::NonFinite {
            context: format!("null replicate {r}: {e}"),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("null replicate {r} statistic"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn finite_statistic(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            context: "observed statistic".into(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    variant: &str,
    statistic: f64,
    draws: Vec<f64>,
    quantile: f64,
    p_value: f64,
    reject: bool,
    n: usize,
    generator_size: usize,
    resample_size: Option<usize>,
    bandwidth: f64,
    cfg: &TestConfig,
    started: Instant,
) -> TestReport {
    TestReport {
        variant: variant.to_string(),
        statistic,
        null_quantile: quantile,
        p_value,
        reject,
        alpha: cfg.alpha,
        n,
        generator_size,
        resample_size,
        b: draws.len(),
        seed: cfg.seed,
        bandwidth,
        null_draws: draws,
        config: cfg.clone(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Fits the conditional score model the configuration asks for.
pub fn fit_for_config(fit_samples: &SampleMatrix, cfg: &TestConfig) -> Result<ScoreField> {
    let model = match cfg.fit {
        FitMethod::ScoreMatching => fit_score_matching(fit_samples, cfg.statistic, cfg.basis, cfg.ridge)?,
        FitMethod::GaussianConditional => fit_conditional_gaussian(fit_samples, cfg.statistic)?,
    };
    Ok(model.into())
}

/// Short name of the NP-KSD flavour a configuration selects.
pub fn npksd_variant(cfg: &TestConfig) -> &'static str {
    match (cfg.fit, cfg.statistic) {
        (FitMethod::GaussianConditional, _) => "npksd_g",
        (FitMethod::ScoreMatching, SummaryStatistic::Mean) => "npksd_mean",
        (FitMethod::ScoreMatching, SummaryStatistic::Identity) => "npksd",
    }
}

/// Monte Carlo NP-KSD test of `observed` against a sample-only generator.
///
/// The score is fitted once on `N` generator draws. The observed statistic and each of the
/// `b` null statistics use their own coordinate draw; null sets are fresh generator draws.
pub fn npksd_test(observed: &SampleMatrix, generator: &GeneratorSpec, cfg: &TestConfig) -> Result<TestReport> {
    let started = Instant::now();
    cfg.validate()?;
    let m = generator.dim();
    check_dim(m, observed.ncols())?;
    check_dim(cfg.observed_size, observed.nrows())?;
    cfg.statistic.validate(m)?;
    observed.ensure_finite("observed samples")?;

    let fit_samples = sample(generator, cfg.generator_size, &mut stream(cfg.seed, "fit", &[]))?;
    let field = fit_for_config(&fit_samples, cfg)?;
    let kernel = cfg.kernel.resolve(observed)?;

    let draw = draw_indices(m, cfg.resample_size, &mut stream(cfg.seed, "index", &[]))?;
    let tau = finite_statistic(npksd_stat(observed, &field, &draw, &kernel, cfg.form)?)?;

    let results: Vec<Result<f64>> = (0..cfg.null_replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, "null", &[r as u64]);
            let s = sample(generator, cfg.observed_size, &mut rng)?;
            let d = draw_indices(m, cfg.resample_size, &mut rng)?;
            npksd_stat(&s, &field, &d, &kernel, cfg.form)
        })
        .collect();
    let draws = collect_replicates(results)?;
    let (q, p, reject) = decide(tau, &draws, cfg.alpha);
    Ok(report(
        npksd_variant(cfg),
        tau,
        draws,
        q,
        p,
        reject,
        observed.nrows(),
        cfg.generator_size,
        Some(cfg.resample_size),
        kernel.sigma(),
        cfg,
        started,
    ))
}

/// Multipliers used by the wild bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Rademacher,
    /// All multipliers equal to one; every bootstrap draw reproduces the statistic.
    Ones,
}

/// Exact-score KSD with a wild-bootstrap null.
pub fn ksd_wild_bootstrap_test(observed: &SampleMatrix, field: &ScoreField, cfg: &TestConfig) -> Result<TestReport> {
    ksd_wild_bootstrap_test_with(observed, field, cfg, WeightScheme::Rademacher)
}

pub fn ksd_wild_bootstrap_test_with(
    observed: &SampleMatrix,
    field: &ScoreField,
    cfg: &TestConfig,
    scheme: WeightScheme,
) -> Result<TestReport> {
    let started = Instant::now();
    cfg.validate_calibration()?;
    let n = observed.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, found: n });
    }
    let kernel = cfg.kernel.resolve(observed)?;
    let ones = vec![1.0; observed.ncols()];
    let gram = SteinGram::build(observed, field, &ones, &kernel, QuadraticForm::Diagonal)?;
    let tau = finite_statistic(gram.v_statistic())?;
    let results: Vec<Result<f64>> = (0..cfg.null_replicates)
        .into_par_iter()
        .map(|r| {
            let w: Vec<f64> = match scheme {
                WeightScheme::Ones => vec![1.0; n],
                WeightScheme::Rademacher => {
                    let mut rng = stream(cfg.seed, "wild", &[r as u64]);
                    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
                }
            };
            Ok(gram.weighted_v_statistic(&w))
        })
        .collect();
    let draws = collect_replicates(results)?;
    let (q, p, reject) = decide(tau, &draws, cfg.alpha);
    Ok(report("ksd", tau, draws, q, p, reject, n, 0, None, kernel.sigma(), cfg, started))
}

/// Exact-score KSD with a Monte Carlo null from fresh target draws.
pub fn ksd_monte_carlo_test(
    observed: &SampleMatrix,
    generator: &GeneratorSpec,
    field: &ScoreField,
    cfg: &TestConfig,
) -> Result<TestReport> {
    let started = Instant::now();
    cfg.validate_calibration()?;
    check_dim(generator.dim(), observed.ncols())?;
    let n = observed.nrows();
    let kernel = cfg.kernel.resolve(observed)?;
    let tau = finite_statistic(crate::stein::ksd_v(observed, field, &kernel)?)?;
    let results: Vec<Result<f64>> = (0..cfg.null_replicates)
        .into_par_iter()
        .map(|r| {
            let s = sample(generator, n, &mut stream(cfg.seed, "null", &[r as u64]))?;
            crate::stein::ksd_v(&s, field, &kernel)
        })
        .collect();
    let draws = collect_replicates(results)?;
    let (q, p, reject) = decide(tau, &draws, cfg.alpha);
    Ok(report("ksd_monte_carlo", tau, draws, q, p, reject, n, 0, None, kernel.sigma(), cfg, started))
}

fn two_sample_sizes(sp: &SampleMatrix, sq: &SampleMatrix) -> Result<()> {
    check_dim(sp.ncols(), sq.ncols())?;
    for s in [sp, sq] {
        if s.nrows() < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                found: s.nrows(),
            });
        }
    }
    sp.ensure_finite("first sample")?;
    sq.ensure_finite("second sample")
}

/// Unbiased squared MMD between two sample sets.
pub fn mmd_u_stat(sp: &SampleMatrix, sq: &SampleMatrix, kernel: &GaussianKernel) -> Result<f64> {
    two_sample_sizes(sp, sq)?;
    let within = |s: &SampleMatrix| {
        let n = s.nrows();
        let mut t = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    t += kernel.from_sq_dist(sq_dist(s.row(a), s.row(b)));
                }
            }
        }
        t / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for x in sp.rows() {
        for y in sq.rows() {
            cross += kernel.from_sq_dist(sq_dist(x, y));
        }
    }
    Ok(within(sp) + within(sq) - 2.0 * cross / (sp.nrows() * sq.nrows()) as f64)
}

/// Pooled kernel matrix with the summaries needed to score any re-split in `O(s^2)`.
struct PooledGram {
    size: usize,
    values: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
    trace: f64,
}

impl PooledGram {
    fn new(sq_dists: &[f64], size: usize, kernel: &GaussianKernel) -> Self {
        let values: Vec<f64> = sq_dists.iter().map(|&d| kernel.from_sq_dist(d)).collect();
        let row_sums: Vec<f64> = values.chunks_exact(size).map(|r| r.iter().sum()).collect();
        let total = row_sums.iter().sum();
        let trace = (0..size).map(|a| values[a * size + a]).sum();
        Self {
            size,
            values,
            row_sums,
            total,
            trace,
        }
    }

    /// Unbiased MMD between the rows in `subset` and the remaining rows.
    fn split_stat(&self, subset: &[usize]) -> f64 {
        let s = subset.len();
        let t = self.size - s;
        let mut inner = 0.0;
        let mut reach = 0.0;
        let mut diag = 0.0;
        for &a in subset {
            let row = &self.values[a * self.size..(a + 1) * self.size];
            inner += subset.iter().map(|&b| row[b]).sum::<f64>();
            reach += self.row_sums[a];
            diag += row[a];
        }
        let cross = reach - inner;
        let rest = self.total - 2.0 * reach + inner;
        let (s, t) = (s as f64, t as f64);
        (inner - diag) / (s * (s - 1.0)) + (rest - (self.trace - diag)) / (t * (t - 1.0)) - 2.0 * cross / (s * t)
    }
}

/// Pairwise squared distances of the stacked sample, row-major.
fn pooled_sq_dists(pooled: &SampleMatrix) -> Vec<f64> {
    let n = pooled.nrows();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for (b, v) in row.iter_mut().enumerate() {
            *v = sq_dist(pooled.row(a), pooled.row(b));
        }
    });
    out
}

/// Positions of the smaller sample inside the pooled set, and whether it comes first.
fn smaller_side(n1: usize, n2: usize) -> Vec<usize> {
    if n1 <= n2 {
        (0..n1).collect()
    } else {
        (n1..n1 + n2).collect()
    }
}

/// Permutation `r` as the positions assigned to the smaller side; draw 0 is the identity.
fn permuted_subset(seed: u64, tag: &str, r: usize, total: usize, identity: &[usize]) -> Vec<usize> {
    if r == 0 {
        return identity.to_vec();
    }
    let mut rng = stream(seed, tag, &[r as u64]);
    let mut perm: Vec<usize> = (0..total).collect();
    for i in 0..identity.len() {
        let j = rng.random_range(i..total);
        perm.swap(i, j);
    }
    perm.truncate(identity.len());
    perm
}

fn pooled_kernel(pooled: &SampleMatrix, cfg: &KernelConfig) -> Result<GaussianKernel> {
    cfg.resolve(pooled)
}

/// Permutation two-sample test with the unbiased MMD; the bandwidth is resolved on the pooled sample.
pub fn mmd_permutation_test(sp: &SampleMatrix, sq: &SampleMatrix, cfg: &TestConfig) -> Result<TestReport> {
    let started = Instant::now();
    cfg.validate_calibration()?;
    two_sample_sizes(sp, sq)?;
    let pooled = sp.vstack(sq)?;
    let kernel = pooled_kernel(&pooled, &cfg.kernel)?;
    let gram = PooledGram::new(&pooled_sq_dists(&pooled), pooled.nrows(), &kernel);
    let identity = smaller_side(sp.nrows(), sq.nrows());
    let tau = finite_statistic(gram.split_stat(&identity))?;
    let results: Vec<Result<f64>> = (0..cfg.null_replicates)
        .into_par_iter()
        .map(|r| Ok(gram.split_stat(&permuted_subset(cfg.seed, "perm", r, pooled.nrows(), &identity))))
        .collect();
    let draws = collect_replicates(results)?;
    let (q, p, reject) = decide(tau, &draws, cfg.alpha);
    Ok(report(
        "mmd",
        tau,
        draws,
        q,
        p,
        reject,
        sp.nrows(),
        sq.nrows(),
        None,
        kernel.sigma(),
        cfg,
        started,
    ))
}

/// Aggregation settings for the multi-bandwidth MMD test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    /// Explicit bandwidths; empty means the pooled median times `2^k`, `k = -2..=2`.
    #[serde(default)]
    pub bandwidths: Vec<f64>,
    /// Permutations used for the per-bandwidth quantiles.
    #[serde(default = "default_perms")]
    pub quantile_permutations: usize,
    /// Permutations used to calibrate the joint level.
    #[serde(default = "default_perms")]
    pub level_permutations: usize,
}

fn default_perms() -> usize {
    500
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            bandwidths: Vec::new(),
            quantile_permutations: default_perms(),
            level_permutations: default_perms(),
        }
    }
}

/// Result of the level calibration, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCalibration {
    pub bandwidths: Vec<f64>,
    /// Calibrated per-bandwidth level `u * w`.
    pub adjusted_level: f64,
    pub quantiles: Vec<f64>,
    pub statistics: Vec<f64>,
}

/// Order-statistic quantile at level `a` over sorted draws: index `ceil((1 - a) B)`.
fn sorted_quantile(sorted: &[f64], a: f64) -> f64 {
    let b = sorted.len();
    let idx = (((1.0 - a) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    sorted[idx - 1]
}

/// MMDAgg: rejects if any bandwidth's MMD exceeds its quantile at the calibrated level.
///
/// The report's statistic is `max_l (M_l - q_l)`, its quantile is 0 and its null draws are the
/// same maximum over the level-calibration permutations.
pub fn mmdagg_test(
    sp: &SampleMatrix,
    sq: &SampleMatrix,
    agg: &AggregateConfig,
    cfg: &TestConfig,
) -> Result<(TestReport, AggregateCalibration)> {
    let started = Instant::now();
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(invalid("alpha", "must lie strictly between 0 and 1"));
    }
    if agg.quantile_permutations < 50 || agg.level_permutations < 50 {
        return Err(invalid("permutations", "need at least 50 for both quantiles and level"));
    }
    two_sample_sizes(sp, sq)?;
    let pooled = sp.vstack(sq)?;
    let bandwidths = if agg.bandwidths.is_empty() {
        let base = median_heuristic(&pooled)?;
        (-2..=2).map(|k| base * 2f64.powi(k)).collect()
    } else {
        agg.bandwidths.clone()
    };
    if bandwidths.is_empty() {
        return Err(invalid("bandwidths", "need at least one bandwidth"));
    }
    let kernels = bandwidths.iter().map(|&s| GaussianKernel::new(s)).collect::<Result<Vec<_>>>()?;
    let dists = pooled_sq_dists(&pooled);
    let grams: Vec<PooledGram> = kernels.iter().map(|k| PooledGram::new(&dists, pooled.nrows(), k)).collect();
    let identity = smaller_side(sp.nrows(), sq.nrows());
    let total = pooled.nrows();
    let weight = 1.0 / bandwidths.len() as f64;

    let stats_under = |tag: &'static str, count: usize| -> Vec<Vec<f64>> {
        (1..=count)
            .into_par_iter()
            .map(|r| {
                let subset = permuted_subset(cfg.seed, tag, r, total, &identity);
                grams.iter().map(|g| g.split_stat(&subset)).collect()
            })
            .collect()
    };
    let quantile_draws = stats_under("agg-quantile", agg.quantile_permutations);
    let level_draws = stats_under("agg-level", agg.level_permutations);
    let sorted: Vec<Vec<f64>> = (0..bandwidths.len())
        .map(|l| {
            let mut v: Vec<f64> = quantile_draws.iter().map(|d| d[l]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let quantiles_at = |u: f64| -> Vec<f64> { sorted.iter().map(|s| sorted_quantile(s, u * weight)).collect() };
    let level_rate = |u: f64| -> f64 {
        let q = quantiles_at(u);
        let hits = level_draws
            .iter()
            .filter(|d| d.iter().zip(&q).any(|(m, qq)| m > qq))
            .count();
        hits as f64 / level_draws.len() as f64
    };

    // largest u in [0, |L|] with estimated level at most alpha
    let (mut lo, mut hi) = (0.0, bandwidths.len() as f64);
    if level_rate(hi) <= cfg.alpha {
        lo = hi;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if level_rate(mid) <= cfg.alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let quantiles = quantiles_at(lo);
    let statistics: Vec<f64> = grams.iter().map(|g| g.split_stat(&identity)).collect();
    let margin = |d: &[f64]| d.iter().zip(&quantiles).map(|(m, q)| m - q).fold(f64::NEG_INFINITY, f64::max);
    let tau = finite_statistic(margin(&statistics))?;
    let draws: Vec<f64> = level_draws.iter().map(|d| margin(d)).collect();
    let p = monte_carlo_p_value(tau, &draws);
    let reject = tau > 0.0;
    let rep = report(
        "mmdagg",
        tau,
        draws,
        0.0,
        p,
        reject,
        sp.nrows(),
        sq.nrows(),
        None,
        bandwidths[bandwidths.len() / 2],
        cfg,
        started,
    );
    Ok((
        rep,
        AggregateCalibration {
            bandwidths,
            adjusted_level: lo * weight,
            quantiles,
            statistics,
        },
    ))
}
