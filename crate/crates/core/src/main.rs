use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use segpf::experiment::report;
use segpf::experiment::{
    median_subsample_variance, run_calibration, run_replicates, run_stability, run_subsample_sweep, run_table1,
    summarize, with_workers, EstimatorChoice, ExperimentConfig, InitKind, SamplerChoice,
};

#[derive(Parser)]
#[command(name = "segpf", version, about = "Segmented particle filter experiments on the linear-Gaussian model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MSE of smoothed means: standard filter vs. segmented filters with
    /// fixed and estimated initializers.
    Table1(Common),
    /// Per-replicate likelihood and smoothed-mean estimates with in-sample
    /// standard errors.
    Replicates(Common),
    /// In-sample variance estimates against the empirical spread on a
    /// frozen observation sequence.
    CalibrateVariance(Common),
    /// MSE at early stages as the horizon grows.
    StabilitySweep(Common),
    /// Variance of the subsampled likelihood as the number of pairs grows.
    SubsampleSweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; a `.summary.csv` file is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorChoice>,
    /// Reuse one observation sequence across replicates.
    #[arg(long)]
    frozen_y: bool,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerChoice>,
}

impl Common {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load_over(&base, path)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(e) = self.estimator {
            cfg.estimator = e;
        }
        if self.frozen_y {
            cfg.frozen_y = true;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(k) = self.particles {
            cfg.particles = k;
        }
        if let Some(i) = self.init {
            cfg.init = i;
        }
        if let Some(s) = self.sampler {
            cfg.sampler = s;
        }
        if cfg.workers == Some(0) {
            anyhow::bail!("--workers must be at least 1");
        }
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Write the main CSV and its summary when an output path is configured.
fn write_outputs(
    cfg: &ExperimentConfig,
    main: impl FnOnce(BufWriter<File>) -> csv::Result<()>,
    summary: Option<impl FnOnce(BufWriter<File>) -> csv::Result<()>>,
) -> Result<()> {
    let Some(out) = &cfg.out else { return Ok(()) };
    main(create(out)?).with_context(|| format!("writing {}", out.display()))?;
    if let Some(write) = summary {
        let path = report::summary_path(out);
        write(create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Table1(c) => {
            let cfg = c.resolve(ExperimentConfig::default())?;
            let study = with_workers(cfg.workers, || run_table1(&cfg))??;
            print!("{}", report::format_mse_study(&study));
            write_outputs(&cfg, |w| report::write_mse_study(w, &study), None::<fn(_) -> _>)?;
        }
        Command::Replicates(c) => {
            let cfg = c.resolve(ExperimentConfig::default())?;
            let rows = with_workers(cfg.workers, || run_replicates(&cfg))??;
            let summary = summarize(&rows);
            print!("{}", report::format_summary(&summary));
            write_outputs(&cfg, |w| report::write_replicates(w, &rows), Some(|w| report::write_summary(w, &summary)))?;
        }
        Command::CalibrateVariance(c) => {
            let cfg = c.resolve(ExperimentConfig::calibration())?;
            let (rows, summary) = with_workers(cfg.workers, || run_calibration(&cfg))??;
            print!("{}", report::format_summary(&summary));
            for s in summary.iter().filter(|s| s.calibration_ratio.is_some()) {
                println!("{}: median estimated / empirical variance = {:.3}", s.target, s.calibration_ratio.unwrap());
            }
            write_outputs(&cfg, |w| report::write_replicates(w, &rows), Some(|w| report::write_summary(w, &summary)))?;
        }
        Command::StabilitySweep(c) => {
            let cfg = c.resolve(ExperimentConfig::stability())?;
            let rows = with_workers(cfg.workers, || run_stability(&cfg))??;
            print!("{}", report::format_stability(&rows));
            write_outputs(&cfg, |w| report::write_stability(w, &rows), None::<fn(_) -> _>)?;
        }
        Command::SubsampleSweep(c) => {
            let cfg = c.resolve(ExperimentConfig::subsample_sweep())?;
            let rows = with_workers(cfg.workers, || run_subsample_sweep(&cfg))??;
            let medians = median_subsample_variance(&rows);
            print!("{}", report::format_subsample(&medians));
            write_outputs(
                &cfg,
                |w| report::write_subsample(w, &rows),
                Some(|w| report::write_subsample_summary(w, &medians)),
            )?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
