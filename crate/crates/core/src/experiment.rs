//! Configuration files, single runs and rejection-rate sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generators::{exact_score, sample, GaussianMixture, GeneratorSpec, SgldSettings};
use crate::matrix::SampleMatrix;
use crate::probe::ProbeSettings;
use crate::rng::{derive_seed, stream};
use crate::score::{
    fit_conditional_gaussian, fit_score_matching, ConditionalScoreModel, FitMethod, ScoreBasis, SummaryStatistic,
};
use crate::testing::{
    ksd_wild_bootstrap_test, mmd_permutation_test, mmdagg_test, npksd_test, AggregateConfig, TestConfig,
    TestReport,
};

pub const MANIFEST_VERSION: u32 = 1;

/// A model that can be sampled: the null generator or the source of observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Standard Gaussian; a perturbation shifts every variance.
    Gvd { dim: usize },
    /// Two-component Gaussian mixture; a perturbation sets the adjacent-coordinate covariance.
    Mog {
        dim: usize,
        #[serde(default)]
        means: Option<[Vec<f64>; 2]>,
    },
    /// Explicit Gaussian; perturbations do not apply.
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    /// Rows of a CSV file drawn with replacement.
    Csv { path: PathBuf },
    /// Langevin chain targeting another model's exact score.
    Sgld {
        target: Box<ModelConfig>,
        #[serde(default)]
        step: Option<f64>,
        #[serde(default)]
        burn_in: Option<usize>,
        #[serde(default)]
        thinning: Option<usize>,
    },
}

impl ModelConfig {
    /// The generator with the given perturbation applied where the model supports one.
    pub fn build(&self, perturbation: f64) -> Result<GeneratorSpec> {
        match self {
            ModelConfig::Gvd { dim } => GeneratorSpec::gvd(*dim, perturbation),
            ModelConfig::Mog { dim, means } => match means {
                Some(means) => GeneratorSpec::mog_with_means(*dim, perturbation, means.clone()),
                None => GeneratorSpec::mog(*dim, perturbation),
            },
            ModelConfig::Gaussian { mean, covariance } => {
                let flat: Vec<f64> = covariance.iter().flatten().copied().collect();
                if covariance.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        found: covariance.len(),
                    });
                }
                Ok(GeneratorSpec::Mixture(Arc::new(GaussianMixture::gaussian(mean.clone(), flat)?)))
            }
            ModelConfig::Csv { path } => GeneratorSpec::real(SampleMatrix::read_csv(path)?),
            ModelConfig::Sgld {
                target,
                step,
                burn_in,
                thinning,
            } => {
                let defaults = SgldSettings::default();
                let settings = SgldSettings {
                    step: step.unwrap_or(defaults.step),
                    burn_in: burn_in.unwrap_or(defaults.burn_in),
                    thinning: thinning.unwrap_or(defaults.thinning),
                };
                let field = exact_score(&target.build(perturbation)?)?;
                GeneratorSpec::sgld(field, settings)
            }
        }
    }
}

/// Where the observed sample comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservedConfig {
    /// Draws from the null model with the perturbation applied.
    #[default]
    Perturbed,
    /// Draws from a separate model.
    Model { model: ModelConfig },
    /// A fixed data file; `n` becomes its row count.
    Csv { path: PathBuf },
}

/// Test methods selectable from a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Npksd,
    NpksdMean,
    NpksdG,
    Ksd,
    Mmd,
    Mmdagg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Npksd => "npksd",
            Method::NpksdMean => "npksd_mean",
            Method::NpksdG => "npksd_g",
            Method::Ksd => "ksd",
            Method::Mmd => "mmd",
            Method::Mmdagg => "mmdagg",
        }
    }

    /// The test configuration with this method's score options applied.
    fn adjust(&self, cfg: &TestConfig) -> TestConfig {
        let mut cfg = cfg.clone();
        match self {
            Method::Npksd => {
                cfg.statistic = SummaryStatistic::Identity;
                cfg.fit = FitMethod::ScoreMatching;
            }
            Method::NpksdMean => {
                cfg.statistic = SummaryStatistic::Mean;
                cfg.fit = FitMethod::ScoreMatching;
            }
            Method::NpksdG => cfg.fit = FitMethod::GaussianConditional,
            _ => {}
        }
        cfg
    }
}

/// One test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub model: ModelConfig,
    #[serde(default)]
    pub observed: ObservedConfig,
    #[serde(default)]
    pub perturbation: f64,
    pub test: TestConfig,
    #[serde(default)]
    pub aggregate: AggregateConfig,
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Perturbation of the observed model (variance shift or adjacent covariance).
    Perturbation,
    GeneratorSize,
    ResampleSize,
    ObservedSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// A rejection-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub observed: ObservedConfig,
    #[serde(default)]
    pub perturbation: f64,
    pub methods: Vec<Method>,
    pub test: TestConfig,
    #[serde(default)]
    pub aggregate: AggregateConfig,
    pub sweep: SweepGrid,
    pub trials: usize,
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Settings for the `fit-score` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelConfig,
    #[serde(rename = "N")]
    pub generator_size: usize,
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
}

fn default_ridge() -> f64 {
    1e-4
}

fn default_fit() -> FitMethod {
    FitMethod::ScoreMatching
}

/// Settings for the `probe-convergence` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub model: ModelConfig,
    pub probe: ProbeSettings,
}

/// A configuration wrapped with the metadata needed to re-run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub manifest_version: u32,
    pub created_unix_seconds: u64,
    pub config: C,
}

impl<C> Manifest<C> {
    pub fn new(config: C) -> Self {
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            manifest_version: MANIFEST_VERSION,
            created_unix_seconds: created,
            config,
        }
    }
}

/// Reads a configuration, or the configuration inside a manifest.
pub fn load_config<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::InvalidParameter {
            name,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

/// Parses a configuration document; manifests are unwrapped first.
pub fn parse_config<C: serde::de::DeserializeOwned>(text: &str) -> Result<C> {
    let parse_err = |e: serde_json::Error| invalid("config", e.to_string());
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    if let Some(inner) = value.get("manifest_version").and(value.get("config")) {
        return serde_json::from_value(inner.clone()).map_err(parse_err);
    }
    // parse the text, not the value, so errors carry line numbers
    serde_json::from_str(text).map_err(parse_err)
}

/// Observed data for one trial, with the size it actually has.
fn observed_sample(
    observed: &ObservedConfig,
    null_model: &ModelConfig,
    perturbation: f64,
    size: usize,
    seed: u64,
) -> Result<SampleMatrix> {
    let mut rng = stream(seed, "observed", &[]);
    match observed {
        ObservedConfig::Perturbed => sample(&null_model.build(perturbation)?, size, &mut rng),
        ObservedConfig::Model { model } => sample(&model.build(perturbation)?, size, &mut rng),
        ObservedConfig::Csv { path } => SampleMatrix::read_csv(path),
    }
}

/// Runs one method against one observed set.
pub fn run_method(
    method: Method,
    observed: &SampleMatrix,
    generator: &GeneratorSpec,
    cfg: &TestConfig,
    aggregate: &AggregateConfig,
) -> Result<TestReport> {
    let cfg = method.adjust(cfg);
    match method {
        Method::Npksd | Method::NpksdMean | Method::NpksdG => npksd_test(observed, generator, &cfg),
        Method::Ksd => ksd_wild_bootstrap_test(observed, &exact_score(generator)?, &cfg),
        Method::Mmd | Method::Mmdagg => {
            let draws = sample(generator, cfg.generator_size, &mut stream(cfg.seed, "two-sample", &[]))?;
            if method == Method::Mmd {
                mmd_permutation_test(observed, &draws, &cfg)
            } else {
                Ok(mmdagg_test(observed, &draws, aggregate, &cfg)?.0)
            }
        }
    }
}

/// Executes a single-run configuration.
pub fn run_test(cfg: &RunConfig) -> Result<TestReport> {
    let generator = cfg.model.build(0.0)?;
    let mut test = cfg.test.clone();
    let observed = observed_sample(&cfg.observed, &cfg.model, cfg.perturbation, test.observed_size, test.seed)?;
    test.observed_size = observed.nrows();
    run_method(cfg.method, &observed, &generator, &test, &cfg.aggregate)
}

/// Draws `N` generator samples and fits the conditional score model a fit configuration describes.
pub fn fit_model(cfg: &FitConfig) -> Result<ConditionalScoreModel> {
    let generator = cfg.model.build(0.0)?;
    let draws = sample(&generator, cfg.generator_size, &mut stream(cfg.seed, "fit", &[]))?;
    match cfg.fit {
        FitMethod::ScoreMatching => fit_score_matching(&draws, cfg.statistic, cfg.basis, cfg.ridge),
        FitMethod::GaussianConditional => fit_conditional_gaussian(&draws, cfg.statistic),
    }
}

/// Rejection rate of one method at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: f64,
    pub method: Method,
    pub rate_mean: f64,
    pub rate_sd: f64,
    pub trials: usize,
    pub rounds: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.values.is_empty() {
            return Err(invalid("sweep.values", "grid must be nonempty"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "need at least one method"));
        }
        if self.trials == 0 || self.rounds == 0 {
            return Err(invalid("trials", "trials and rounds must be at least 1"));
        }
        if self.sweep.axis != SweepAxis::Perturbation
            && self.sweep.values.iter().any(|v| !(*v >= 1.0) || v.fract() != 0.0)
        {
            return Err(invalid("sweep.values", "size axes take positive integers"));
        }
        Ok(())
    }

    /// Test configuration and perturbation at one grid value.
    fn at(&self, value: f64) -> (TestConfig, f64) {
        let mut cfg = self.test.clone();
        let mut perturbation = self.perturbation;
        match self.sweep.axis {
            SweepAxis::Perturbation => perturbation = value,
            SweepAxis::GeneratorSize => cfg.generator_size = value as usize,
            SweepAxis::ResampleSize => cfg.resample_size = value as usize,
            SweepAxis::ObservedSize => cfg.observed_size = value as usize,
        }
        (cfg, perturbation)
    }
}

/// Seed of trial `trial` in round `round`; shared across grid values and methods.
pub fn trial_seed(base: u64, round: usize, trial: usize) -> u64 {
    derive_seed(base, "trial", &[round as u64, trial as u64])
}

/// Runs every `(value, method, round, trial)` job and aggregates rejection rates.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let generator = cfg.model.build(0.0)?;
    let jobs: Vec<(usize, usize, usize, usize)> = (0..cfg.sweep.values.len())
        .flat_map(|v| {
            (0..cfg.methods.len()).flat_map(move |me| {
                (0..cfg.rounds).flat_map(move |r| (0..cfg.trials).map(move |t| (v, me, r, t)))
            })
        })
        .collect();
    let outcomes: Vec<Result<bool>> = jobs
        .par_iter()
        .map(|&(v, me, r, t)| {
            let (mut test, perturbation) = cfg.at(cfg.sweep.values[v]);
            test.seed = trial_seed(cfg.test.seed, r, t);
            let observed = observed_sample(&cfg.observed, &cfg.model, perturbation, test.observed_size, test.seed)?;
            test.observed_size = observed.nrows();
            Ok(run_method(cfg.methods[me], &observed, &generator, &test, &cfg.aggregate)?.reject)
        })
        .collect();

    let mut hits: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let reject = outcome.map_err(|e| Error::Unsupported(format!(
            "trial {} of round {} ({} at {}): {e}",
            job.3,
            job.2,
            cfg.methods[job.1].name(),
            cfg.sweep.values[job.0]
        )))?;
        *hits.entry((job.0, job.1, job.2)).or_default() += usize::from(reject);
    }
    let mut rows = Vec::new();
    for (v, value) in cfg.sweep.values.iter().enumerate() {
        for (me, method) in cfg.methods.iter().enumerate() {
            let rates: Vec<f64> = (0..cfg.rounds)
                .map(|r| hits.get(&(v, me, r)).copied().unwrap_or(0) as f64 / cfg.trials as f64)
                .collect();
            let k = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / k;
            let sd = if rates.len() > 1 {
                (rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                axis: *value,
                method: *method,
                rate_mean: mean,
                rate_sd: sd,
                trials: cfg.trials,
                rounds: cfg.rounds,
            });
        }
    }
    rows.sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.axis.total_cmp(&b.axis)));
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "axis,method,rate_mean,rate_sd,trials,rounds";

/// CSV rendering of sweep rows, header included.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.axis,
            r.method.name(),
            r.rate_mean,
            r.rate_sd,
            r.trials,
            r.rounds
        );
    }
    out
}
