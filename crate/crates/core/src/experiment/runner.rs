//! Replicated runs on the linear-Gaussian model, scored against the Kalman
//! filter and RTS smoother.
//!
//! Replicates run in parallel on the current rayon pool. Every replicate
//! draws from its own seeded streams, so results are identical for any
//! number of workers.

use rayon::prelude::*;

use super::config::{ExperimentConfig, InitKind};
use crate::error::{Error, Result};
use crate::join::{allocate_particles, Functional, LikelihoodForm};
use crate::kalman::{kalman_filter, rts_smoother};
use crate::model::{LinearGaussian, WeightRule};
use crate::numeric::{mean_var, median, skewness_kurtosis};
use crate::pipeline::{InitMode, SegmentedFilter};
use crate::rng::{purpose, StreamSeed};
use crate::subsample::{draws_for_exponent, SubsampledLikelihood};

/// Child tag of the master seed for a frozen observation sequence.
const FROZEN_DATA: u64 = u64::MAX;

/// Floor on the estimated initializer variance, relative to `sigma_x2`.
const ESTIMATED_VAR_FLOOR: f64 = 1e-6;

/// Simulated states and observations with their exact smoothing answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
    /// `E(X_u | Y_1..Y_U)` for every 0-based `u`.
    pub smoothed_means: Vec<f64>,
    pub log_likelihood: f64,
}

impl Dataset {
    pub fn simulate(model: &LinearGaussian, horizon: usize, seed: StreamSeed) -> Result<Self> {
        let mut rng = seed.stream(&[purpose::SIMULATE]);
        let (states, observations) = model.simulate(horizon, &mut rng)?;
        let kf = kalman_filter(model.params(), &observations)?;
        let smoothed = rts_smoother(model.params(), &kf);
        Ok(Dataset { states, observations, smoothed_means: smoothed.mean, log_likelihood: kf.log_likelihood })
    }
}

/// Run `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `workers` is `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn build_model(cfg: &ExperimentConfig) -> Result<LinearGaussian> {
    LinearGaussian::new(cfg.params()?)
}

/// Seed of replicate `r`'s observation sequence.
pub fn data_seed(cfg: &ExperimentConfig, r: usize) -> StreamSeed {
    let root = StreamSeed(cfg.seed);
    if cfg.frozen_y {
        root.child(FROZEN_DATA)
    } else {
        root.child(r as u64)
    }
}

fn run_seed(cfg: &ExperimentConfig, r: usize, method: usize) -> StreamSeed {
    StreamSeed(cfg.seed).child(r as u64).child(method as u64)
}

/// The filter described by `cfg`, with `init` in place of `cfg.init`.
pub fn segmented_filter(cfg: &ExperimentConfig, init: InitKind) -> SegmentedFilter {
    let cfg = ExperimentConfig { init, ..cfg.clone() };
    let mode = match init {
        InitKind::Standard | InitKind::Fixed => InitMode::Fixed { mean: 0.0, var: cfg.sigma_x2 },
        InitKind::Estimated => InitMode::Estimated {
            window: cfg.window,
            aux_particles: cfg.aux_particles(),
            var_floor: ESTIMATED_VAR_FLOOR * cfg.sigma_x2,
        },
        InitKind::Predictor => InitMode::Predictor,
    };
    SegmentedFilter {
        horizon: cfg.horizon,
        particles: cfg.particle_counts(),
        init: mode,
        weight: WeightRule::Bootstrap,
    }
}

/// A mean over replicates and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanWithError {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanWithError {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, var) = mean_var(xs);
        MeanWithError { mean, stderr: (var / xs.len() as f64).sqrt() }
    }
}

/// Squared-error study of smoothed-mean estimates for several filters.
#[derive(Debug, Clone, PartialEq)]
pub struct MseStudy {
    /// 1-based stages.
    pub coords: Vec<usize>,
    pub methods: Vec<InitKind>,
    /// Smoothed means on the first replicate's observations.
    pub oracle: Vec<f64>,
    /// `mse[method][coord]`
    pub mse: Vec<Vec<MeanWithError>>,
}

impl MseStudy {
    pub fn cell(&self, method: InitKind, u: usize) -> Option<MeanWithError> {
        let i = self.methods.iter().position(|&m| m == method)?;
        let j = self.coords.iter().position(|&c| c == u)?;
        Some(self.mse[i][j])
    }
}

/// MSE of `psi_tilde` for `x_u` at each configured coordinate, for each of
/// `methods`, over `cfg.replicates` replicates.
pub fn mse_study(cfg: &ExperimentConfig, methods: &[InitKind]) -> Result<MseStudy> {
    for &kind in methods {
        ExperimentConfig { init: kind, ..cfg.clone() }.validate()?;
    }
    let model = build_model(cfg)?;
    let stages = cfg.stages();
    let filters: Vec<SegmentedFilter> = methods.iter().map(|&k| segmented_filter(cfg, k)).collect();
    let per_rep: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let data = Dataset::simulate(&model, cfg.horizon, data_seed(cfg, r))?;
            filters
                .iter()
                .enumerate()
                .map(|(i, filter)| {
                    let run = filter.run(&model, &data.observations, run_seed(cfg, r, i))?;
                    let join = run.join()?;
                    stages
                        .iter()
                        .map(|&u| {
                            let est = join.latent_estimate(&Functional::Coordinate(u))?;
                            Ok((est - data.smoothed_means[u]).powi(2))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let first = Dataset::simulate(&model, cfg.horizon, data_seed(cfg, 0))?;
    let mse = (0..methods.len())
        .map(|i| {
            (0..stages.len()).map(|j| MeanWithError::of(&per_rep.iter().map(|r| r[i][j]).collect::<Vec<_>>())).collect()
        })
        .collect();
    Ok(MseStudy {
        coords: cfg.coords.clone(),
        methods: methods.to_vec(),
        oracle: stages.iter().map(|&u| first.smoothed_means[u]).collect(),
        mse,
    })
}

/// Methods compared in the MSE table.
pub const TABLE1_METHODS: [InitKind; 3] = [InitKind::Standard, InitKind::Fixed, InitKind::Estimated];

/// Standard filter against the fixed- and estimated-initializer segmented
/// filters. Each replicate draws new observations unless `cfg.frozen_y` is
/// set.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<MseStudy> {
    mse_study(cfg, &TABLE1_METHODS)
}

/// One horizon of the stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub horizon: usize,
    pub u: usize,
    pub standard: MeanWithError,
    pub segmented: MeanWithError,
}

/// MSE at fixed early coordinates as the horizon grows, for the standard
/// filter and a segmented filter with segments of `cfg.segment_len` stages.
pub fn run_stability(cfg: &ExperimentConfig) -> Result<Vec<StabilityRow>> {
    let seg_kind = if cfg.init == InitKind::Standard { InitKind::Fixed } else { cfg.init };
    let mut rows = Vec::new();
    for &horizon in &cfg.horizons {
        if cfg.segment_len == 0 || horizon % cfg.segment_len != 0 {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is not a multiple of segment_len {}",
                cfg.segment_len
            )));
        }
        let coords: Vec<usize> = cfg.coords.iter().copied().filter(|&u| u <= horizon).collect();
        let c = ExperimentConfig {
            horizon,
            segments: horizon / cfg.segment_len,
            particles_per_segment: None,
            coords,
            seed: StreamSeed(cfg.seed).child(horizon as u64).0,
            ..cfg.clone()
        };
        let study = mse_study(&c, &[InitKind::Standard, seg_kind])?;
        for (j, &u) in study.coords.iter().enumerate() {
            rows.push(StabilityRow { horizon, u, standard: study.mse[0][j], segmented: study.mse[1][j] });
        }
    }
    Ok(rows)
}

/// Estimates of `E(x_u | Y)` from one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordEstimate {
    /// 1-based stage.
    pub u: usize,
    pub oracle: f64,
    pub psi_tilde: f64,
    pub stderr: f64,
    pub sigma2: Vec<f64>,
    pub allocation: Vec<usize>,
}

/// Everything recorded for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub log_lambda_oracle: f64,
    /// Log-likelihood estimates with the emission constant restored.
    pub log_lambda_chain: Option<f64>,
    pub log_lambda_product: Option<f64>,
    pub log_lambda_sub: Option<f64>,
    pub coords: Vec<CoordEstimate>,
}

/// Run the configured segmented filter `cfg.replicates` times and record
/// likelihood and smoothed-mean estimates with their in-sample variance
/// estimates.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRow>> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let filter = segmented_filter(cfg, cfg.init);
    let stages = cfg.stages();
    let correction = filter.weight.log_constant_correction(&model, cfg.horizon);
    let budget: usize = filter.particles.iter().sum();
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let data = Dataset::simulate(&model, cfg.horizon, data_seed(cfg, r))?;
            let seed = run_seed(cfg, r, 0);
            let run = filter.run(&model, &data.observations, seed)?;
            let join = run.join()?;
            let log_lambda_chain = match cfg.estimator.chain() {
                true => Some(join.log_likelihood(LikelihoodForm::Chain)? + correction),
                false => None,
            };
            let log_lambda_product = match cfg.estimator.product() {
                true => Some(join.log_likelihood(LikelihoodForm::Product)? + correction),
                false => None,
            };
            let log_lambda_sub = if cfg.subsample {
                let sub = SubsampledLikelihood::new(
                    &model,
                    &run.segments[0],
                    &run.segments[1],
                    &run.initializers[1],
                    cfg.sampler.into(),
                )?;
                let draws = draws_for_exponent(run.segments[0].particles(), cfg.subsample_s);
                let mut rng = seed.stream(&[purpose::SUBSAMPLE]);
                Some(sub.estimate(draws, &mut rng)?.log_lambda + correction)
            } else {
                None
            };
            let coords = stages
                .iter()
                .map(|&u| {
                    let psi = Functional::Coordinate(u);
                    let psi_tilde = join.latent_estimate(&psi)?;
                    let var = join.variance_estimate(&psi, psi_tilde)?;
                    Ok(CoordEstimate {
                        u: u + 1,
                        oracle: data.smoothed_means[u],
                        psi_tilde,
                        stderr: var.stderr,
                        allocation: allocate_particles(&var.sigma2, budget)?,
                        sigma2: var.sigma2,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateRow {
                replicate: r,
                log_lambda_oracle: data.log_likelihood,
                log_lambda_chain,
                log_lambda_product,
                log_lambda_sub,
                coords,
            })
        })
        .collect()
}

/// Cross-replicate summary of one estimated quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSummary {
    /// `x_u<u>` or `lambda_ratio_<form>`.
    pub target: String,
    pub mean_estimate: f64,
    pub mean_oracle: f64,
    pub mse: f64,
    /// Variance across replicates of estimate minus oracle.
    pub empirical_var: f64,
    /// `sqrt(empirical_var / R)`
    pub empirical_stderr: f64,
    /// Median of the in-sample variance estimates.
    pub median_estimated_var: Option<f64>,
    /// `median_estimated_var / empirical_var`
    pub calibration_ratio: Option<f64>,
    /// Moments of `(estimate - oracle) / stderr`.
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

fn plain_summary(target: String, est: &[f64], oracle: &[f64]) -> TargetSummary {
    let err: Vec<f64> = est.iter().zip(oracle).map(|(e, o)| e - o).collect();
    let (_, empirical_var) = mean_var(&err);
    TargetSummary {
        target,
        mean_estimate: mean_var(est).0,
        mean_oracle: mean_var(oracle).0,
        mse: err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64,
        empirical_var,
        empirical_stderr: (empirical_var / err.len() as f64).sqrt(),
        median_estimated_var: None,
        calibration_ratio: None,
        skewness: None,
        excess_kurtosis: None,
    }
}

/// Summaries for each coordinate and each reported likelihood form
/// (as `lambda_hat / lambda`).
pub fn summarize(rows: &[ReplicateRow]) -> Vec<TargetSummary> {
    let mut out = Vec::new();
    let Some(first) = rows.first() else { return out };
    for j in 0..first.coords.len() {
        let est: Vec<f64> = rows.iter().map(|r| r.coords[j].psi_tilde).collect();
        let oracle: Vec<f64> = rows.iter().map(|r| r.coords[j].oracle).collect();
        let mut s = plain_summary(format!("x_u{}", first.coords[j].u), &est, &oracle);
        let var_est: Vec<f64> = rows.iter().map(|r| r.coords[j].stderr.powi(2)).collect();
        let med = median(&var_est);
        s.median_estimated_var = Some(med);
        s.calibration_ratio = Some(med / s.empirical_var);
        let z: Vec<f64> = rows
            .iter()
            .map(|r| (r.coords[j].psi_tilde - r.coords[j].oracle) / r.coords[j].stderr)
            .filter(|z| z.is_finite())
            .collect();
        if z.len() > 2 {
            let (skew, kurt) = skewness_kurtosis(&z);
            s.skewness = Some(skew);
            s.excess_kurtosis = Some(kurt);
        }
        out.push(s);
    }
    type Getter = fn(&ReplicateRow) -> Option<f64>;
    let forms: [(&str, Getter); 3] = [
        ("chain", |r| r.log_lambda_chain),
        ("product", |r| r.log_lambda_product),
        ("subsampled", |r| r.log_lambda_sub),
    ];
    for (name, get) in forms {
        if get(first).is_none() {
            continue;
        }
        let ratio: Vec<f64> = rows.iter().map(|r| (get(r).unwrap_or(f64::NAN) - r.log_lambda_oracle).exp()).collect();
        out.push(plain_summary(format!("lambda_ratio_{name}"), &ratio, &vec![1.0; ratio.len()]));
    }
    out
}

/// Replicates on a single observation sequence, for checking the in-sample
/// variance estimates against the spread of the estimates themselves.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<(Vec<ReplicateRow>, Vec<TargetSummary>)> {
    let cfg = ExperimentConfig { frozen_y: true, ..cfg.clone() };
    let rows = run_replicates(&cfg)?;
    let summary = summarize(&rows);
    Ok((rows, summary))
}

/// Spread of the subsampled estimate for one segment pair and exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleRow {
    pub draw: usize,
    pub exponent: f64,
    pub pairs: usize,
    /// Full double-sum estimate on the same segments.
    pub log_lambda_full: f64,
    pub mean_log_sub: f64,
    pub var_log_sub: f64,
}

/// For each of `cfg.replicates` independent two-segment runs, repeat the
/// subsampled estimate `cfg.subsample_repeats` times at each exponent in
/// `cfg.exponents`.
pub fn run_subsample_sweep(cfg: &ExperimentConfig) -> Result<Vec<SubsampleRow>> {
    cfg.validate()?;
    if cfg.segment_count() != 2 {
        return Err(Error::InvalidConfig("the subsample sweep needs exactly two segments".into()));
    }
    if cfg.subsample_repeats < 2 {
        return Err(Error::InvalidConfig("subsample_repeats must be at least 2".into()));
    }
    if cfg.exponents.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidConfig("exponents must be positive".into()));
    }
    let model = build_model(cfg)?;
    let filter = segmented_filter(cfg, cfg.init);
    let correction = filter.weight.log_constant_correction(&model, cfg.horizon);
    let per_draw: Vec<Vec<SubsampleRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|d| {
            let data = Dataset::simulate(&model, cfg.horizon, data_seed(cfg, d))?;
            let seed = run_seed(cfg, d, 0);
            let run = filter.run(&model, &data.observations, seed)?;
            let full = run.join()?.log_likelihood(LikelihoodForm::Product)? + correction;
            let sub = SubsampledLikelihood::new(
                &model,
                &run.segments[0],
                &run.segments[1],
                &run.initializers[1],
                cfg.sampler.into(),
            )?;
            cfg.exponents
                .iter()
                .enumerate()
                .map(|(si, &s)| {
                    let pairs = draws_for_exponent(run.segments[0].particles(), s);
                    let logs = (0..cfg.subsample_repeats)
                        .map(|i| {
                            let mut rng = seed.stream(&[purpose::SUBSAMPLE, si as u64, i as u64]);
                            Ok(sub.estimate(pairs, &mut rng)?.log_lambda + correction)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    let (mean_log_sub, var_log_sub) = mean_var(&logs);
                    Ok(SubsampleRow { draw: d, exponent: s, pairs, log_lambda_full: full, mean_log_sub, var_log_sub })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_draw.into_iter().flatten().collect())
}

/// Median over segment draws of the variance of `log lambda*`, per
/// exponent, as `(exponent, pairs, median variance)`.
pub fn median_subsample_variance(rows: &[SubsampleRow]) -> Vec<(f64, usize, f64)> {
    let mut exps: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if !exps.iter().any(|&(s, _)| s == r.exponent) {
            exps.push((r.exponent, r.pairs));
        }
    }
    exps.into_iter()
        .map(|(s, v)| {
            let vars: Vec<f64> = rows.iter().filter(|r| r.exponent == s).map(|r| r.var_log_sub).collect();
            (s, v, median(&vars))
        })
        .collect()
}
