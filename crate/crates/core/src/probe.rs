//! Empirical convergence of the NP-KSD statistic to its exact-conditional reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::generators::{exact_conditional, sample, GeneratorSpec};
use crate::kernels::KernelConfig;
use crate::rng::stream;
use crate::score::{fit_score_matching, ScoreBasis, ScoreField, SummaryStatistic};
use crate::stein::{draw_indices, ksd_t_reference, npksd_stat, QuadraticForm};

fn default_ridge() -> f64 {
    1e-4
}

/// Grid and fitting options for the probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    /// Size of the fixed observed set.
    #[serde(rename = "n")]
    pub observed_size: usize,
    #[serde(rename = "N")]
    pub generator_sizes: Vec<usize>,
    #[serde(rename = "B")]
    pub resample_sizes: Vec<usize>,
    /// Number of independent repetitions averaged per grid point.
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub statistic: SummaryStatistic,
    #[serde(default)]
    pub basis: ScoreBasis,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub form: QuadraticForm,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Use the exact conditional scores instead of a fit, isolating the re-sampling error.
    #[serde(default)]
    pub inject_exact: bool,
}

/// Gap summary at one `(N, B)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub generator_size: usize,
    pub resample_size: usize,
    pub mean_gap: f64,
    pub sd_gap: f64,
    pub repetitions: usize,
}

/// For each `(N, B)`, the mean over repetitions of `|NP-KSD - reference|` on one observed set.
///
/// Within a repetition the coordinate draws for different `B` are nested prefixes of one
/// long draw, and the fit for each `N` uses its own generator stream.
pub fn convergence_probe(target: &GeneratorSpec, settings: &ProbeSettings) -> Result<Vec<ProbeRow>> {
    if settings.generator_sizes.is_empty() || settings.resample_sizes.is_empty() {
        return Err(invalid("grid", "N and B lists must be nonempty"));
    }
    if settings.repetitions == 0 {
        return Err(invalid("repetitions", "must be at least 1"));
    }
    if settings.resample_sizes.contains(&0) {
        return Err(invalid("B", "re-sample sizes must be at least 1"));
    }
    let m = target.dim();
    let exact = exact_conditional(target, settings.statistic)?;
    let observed = sample(target, settings.observed_size, &mut stream(settings.seed, "probe-observed", &[]))?;
    let kernel = settings.kernel.resolve(&observed)?;
    let reference = ksd_t_reference(&observed, &exact, &kernel, settings.form)?;
    let longest = *settings.resample_sizes.iter().max().expect("nonempty");

    let per_rep: Vec<Result<Vec<f64>>> = (0..settings.repetitions)
        .into_par_iter()
        .map(|rep| {
            let full = draw_indices(m, longest, &mut stream(settings.seed, "probe-index", &[rep as u64]))?;
            let mut gaps = Vec::with_capacity(settings.generator_sizes.len() * settings.resample_sizes.len());
            for &n_fit in &settings.generator_sizes {
                let field: ScoreField = if settings.inject_exact {
                    exact.clone()
                } else {
                    let mut rng = stream(settings.seed, "probe-fit", &[rep as u64, n_fit as u64]);
                    let fit_samples = sample(target, n_fit, &mut rng)?;
                    fit_score_matching(&fit_samples, settings.statistic, settings.basis, settings.ridge)?.into()
                };
                for &b in &settings.resample_sizes {
                    let stat = npksd_stat(&observed, &field, &full.prefix(b)?, &kernel, settings.form)?;
                    gaps.push((stat - reference).abs());
                }
            }
            Ok(gaps)
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut col = 0;
    for &n_fit in &settings.generator_sizes {
        for &b in &settings.resample_sizes {
            let vals: Vec<f64> = per_rep.iter().map(|g| g[col]).collect();
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(ProbeRow {
                generator_size: n_fit,
                resample_size: b,
                mean_gap: mean,
                sd_gap: sd,
                repetitions: vals.len(),
            });
            col += 1;
        }
    }
    Ok(rows)
}
