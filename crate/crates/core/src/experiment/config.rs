use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::subsample::PairSamplerKind;

/// Initializer used by segments after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// A single filter over the whole horizon (`segments` is ignored).
    Standard,
    /// `N(0, sigma_x2)`.
    Fixed,
    /// Gaussian fitted on the preceding `window + 1` observations.
    Estimated,
    /// Particle predictor from the previous segment (sequential).
    Predictor,
}

/// Which likelihood forms to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Chain,
    Product,
    Both,
}

impl EstimatorChoice {
    pub fn chain(self) -> bool {
        matches!(self, EstimatorChoice::Chain | EstimatorChoice::Both)
    }

    pub fn product(self) -> bool {
        matches!(self, EstimatorChoice::Product | EstimatorChoice::Both)
    }
}

/// Pair sampler used by the subsampled likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Uniform,
    Stratified,
}

impl From<SamplerChoice> for PairSamplerKind {
    fn from(c: SamplerChoice) -> Self {
        match c {
            SamplerChoice::Uniform => PairSamplerKind::Uniform,
            SamplerChoice::Stratified => PairSamplerKind::Stratified,
        }
    }
}

/// Everything an experiment needs. Loaded from a flat TOML file whose keys
/// are these field names; unset keys take the defaults below, which are the
/// settings of the linear-Gaussian MSE study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub a: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    /// Number of stages `U`.
    pub horizon: usize,
    /// Number of segments `M`.
    pub segments: usize,
    /// Particles per segment `K`.
    pub particles: usize,
    /// Optional per-segment particle counts; overrides `particles`.
    pub particles_per_segment: Option<Vec<usize>>,
    pub replicates: usize,
    pub init: InitKind,
    /// Extra observations `r` before a segment used by the estimated
    /// initializer (it sees `r + 1` observations).
    pub window: usize,
    /// Particles in the estimated initializer's auxiliary filter (default:
    /// `particles`).
    pub aux_particles: Option<usize>,
    /// 1-based stages `u` whose smoothed means are estimated.
    pub coords: Vec<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub estimator: EstimatorChoice,
    /// Add the subsampled likelihood (two segments only).
    pub subsample: bool,
    /// Subsample size exponent: `V = ceil(K^s)`.
    pub subsample_s: f64,
    pub sampler: SamplerChoice,
    /// Reuse a single observation sequence for every replicate.
    pub frozen_y: bool,
    pub workers: Option<usize>,
    /// Horizons visited by `stability-sweep`.
    pub horizons: Vec<usize>,
    /// Segment length used by `stability-sweep`.
    pub segment_len: usize,
    /// Exponents visited by `subsample-sweep`.
    pub exponents: Vec<f64>,
    /// Repeated subsamples per frozen segment pair in `subsample-sweep`.
    pub subsample_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            a: 0.8,
            sigma_x2: 1.0,
            sigma_y2: 1.0,
            horizon: 50,
            segments: 5,
            particles: 500,
            particles_per_segment: None,
            replicates: 100,
            init: InitKind::Fixed,
            window: 4,
            aux_particles: None,
            coords: (1..=10).map(|i| 5 * i).collect(),
            seed: 1,
            out: None,
            estimator: EstimatorChoice::Both,
            subsample: false,
            subsample_s: 1.0,
            sampler: SamplerChoice::Uniform,
            frozen_y: false,
            workers: None,
            horizons: vec![50, 100, 200],
            segment_len: 10,
            exponents: vec![1.0, 1.5, 2.0],
            subsample_repeats: 50,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the in-sample variance calibration study: one frozen
    /// observation sequence, two segments.
    pub fn calibration() -> Self {
        ExperimentConfig {
            horizon: 10,
            segments: 2,
            particles: 1000,
            replicates: 500,
            coords: vec![5],
            frozen_y: true,
            ..Default::default()
        }
    }

    /// Defaults for the smoothing-stability sweep.
    pub fn stability() -> Self {
        ExperimentConfig { coords: vec![5], ..Default::default() }
    }

    /// Defaults for the subsampled-likelihood sweep.
    pub fn subsample_sweep() -> Self {
        ExperimentConfig {
            horizon: 10,
            segments: 2,
            particles: 100,
            replicates: 20,
            coords: vec![],
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_over(&Self::default(), text)
    }

    /// Parse `text`, taking keys it does not set from `base`.
    pub fn from_toml_str_over(base: &Self, text: &str) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidConfig(e.to_string());
        let overrides: toml::Table = toml::from_str(text).map_err(|e| bad(&e))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| bad(&e))?;
        merged.extend(overrides);
        merged.try_into().map_err(|e| bad(&e))
    }

    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str_over(base, &text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(&Self::default(), path)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.a, self.sigma_x2, self.sigma_y2)
    }

    /// Effective number of segments (1 for the standard filter).
    pub fn segment_count(&self) -> usize {
        match (&self.particles_per_segment, self.init) {
            (_, InitKind::Standard) => 1,
            (Some(ks), _) => ks.len(),
            (None, _) => self.segments,
        }
    }

    pub fn particle_counts(&self) -> Vec<usize> {
        match (&self.particles_per_segment, self.init) {
            (Some(ks), kind) if kind != InitKind::Standard => ks.clone(),
            _ => vec![self.particles; self.segment_count()],
        }
    }

    /// 0-based stages for the configured coordinates.
    pub fn stages(&self) -> Vec<usize> {
        self.coords.iter().map(|u| u - 1).collect()
    }

    pub fn aux_particles(&self) -> usize {
        self.aux_particles.unwrap_or(self.particles)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        let m = self.segment_count();
        if self.horizon == 0 || m == 0 || !self.horizon.is_multiple_of(m) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} must be a positive multiple of the segment count {m}",
                self.horizon
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.particle_counts().contains(&0) {
            return Err(Error::InvalidConfig("particle counts must be positive".into()));
        }
        if let Some(&u) = self.coords.iter().find(|&&u| u == 0 || u > self.horizon) {
            return Err(Error::InvalidConfig(format!("coordinate {u} outside 1..={}", self.horizon)));
        }
        if self.subsample && m != 2 {
            return Err(Error::InvalidConfig("subsampling needs exactly two segments".into()));
        }
        if !(self.subsample_s > 0.0) {
            return Err(Error::InvalidConfig("subsample_s must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        Ok(())
    }
}
