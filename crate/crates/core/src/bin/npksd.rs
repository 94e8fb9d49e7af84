use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use npksd_core::experiment::{
    fit_model, load_config, run_sweep, run_test, sweep_csv, ExperimentConfig, FitConfig, Manifest, ProbeConfig,
    RunConfig,
};
use npksd_core::probe::convergence_probe;

/// Goodness-of-fit tests for sample-only generative models.
#[derive(Parser)]
#[command(name = "npksd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test and print its report as JSON.
    Test(Common),
    /// Run a rejection-rate sweep and write a CSV table plus a manifest.
    Sweep(Common),
    /// Fit conditional score models and dump their coefficients as JSON.
    FitScore(Common),
    /// Tabulate the gap between NP-KSD and its exact-score reference over (N, B).
    ProbeConvergence(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file, or a manifest written by a previous sweep.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the base seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn out_dir(&self, fallback: Option<&Path>) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("npksd-out"));
        fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(dir)
    }

    fn load<C: serde::de::DeserializeOwned>(&self) -> Result<C> {
        load_config(&self.config).with_context(|| format!("failed to load config {}", self.config.display()))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Test(c) | Command::Sweep(c) | Command::FitScore(c) | Command::ProbeConvergence(c) => c,
    };
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("cannot configure the worker pool")?;
    }

    match &cli.command {
        Command::Test(c) => {
            let mut cfg: RunConfig = c.load()?;
            if let Some(seed) = c.seed {
                cfg.test.seed = seed;
            }
            let report = run_test(&cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            write(&c.out_dir(None)?.join("report.json"), &json)?;
        }
        Command::Sweep(c) => {
            let mut cfg: ExperimentConfig = c.load()?;
            if let Some(seed) = c.seed {
                cfg.test.seed = seed;
            }
            cfg.validate()?;
            let rows = run_sweep(&cfg)?;
            let dir = c.out_dir(cfg.output_dir.as_deref())?;
            let csv_path = dir.join(format!("{}.csv", cfg.id));
            write(&csv_path, &sweep_csv(&rows))?;
            let manifest = serde_json::to_string_pretty(&Manifest::new(cfg.clone()))?;
            write(&dir.join(format!("{}.manifest.json", cfg.id)), &manifest)?;
            eprintln!("wrote {}", csv_path.display());
        }
        Command::FitScore(c) => {
            let mut cfg: FitConfig = c.load()?;
            if let Some(seed) = c.seed {
                cfg.seed = seed;
            }
            let model = fit_model(&cfg)?;
            let json = serde_json::to_string_pretty(&model)?;
            println!("{json}");
            write(&c.out_dir(None)?.join("score_model.json"), &json)?;
        }
        Command::ProbeConvergence(c) => {
            let mut cfg: ProbeConfig = c.load()?;
            if let Some(seed) = c.seed {
                cfg.probe.seed = seed;
            }
            let rows = convergence_probe(&cfg.model.build(0.0)?, &cfg.probe)?;
            let path = c.out_dir(None)?.join("probe.csv");
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
            print!("{}", fs::read_to_string(&path)?);
        }
    }
    Ok(())
}
