//! Hidden Markov model abstraction, proposals, weights and segment
//! initializers, plus the scalar linear-Gaussian instance used throughout
//! the experiments.
//!
//! States are scalar and time indices are 0-based: stage `t` of a sequence
//! of length `U` runs over `0..U`.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normal_log_density};

/// A scalar-state hidden Markov model given by its densities and samplers.
///
/// All densities are in log space. `transition_*` receives the time index of
/// the *new* state.
pub trait StateSpaceModel: Sync {
    fn initial_log_density(&self, x: f64) -> f64;
    fn sample_initial(&self, rng: &mut dyn RngCore) -> f64;
    fn transition_log_density(&self, prev: f64, x: f64, t: usize) -> f64;
    fn sample_transition(&self, prev: f64, t: usize, rng: &mut dyn RngCore) -> f64;
    fn emission_log_density(&self, x: f64, y: f64, t: usize) -> f64;

    /// Emission log-density with any observation-independent constant
    /// dropped. Bootstrap weights use this kernel; the dropped constant is
    /// reported by [`StateSpaceModel::emission_log_constant`].
    fn emission_log_kernel(&self, x: f64, y: f64, t: usize) -> f64 {
        self.emission_log_density(x, y, t)
    }

    /// `emission_log_density - emission_log_kernel`, constant in `x` and `y`.
    fn emission_log_constant(&self, _t: usize) -> f64 {
        0.0
    }
}

/// Static parameters of the stationary AR(1)-plus-noise model
/// `X_t = a X_{t-1} + e_t`, `Y_t = X_t + n_t` with `e_t ~ N(0, (1-a^2) sx2)`,
/// `n_t ~ N(0, sy2)` and `X_1 ~ N(0, sx2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
}

impl ModelParams {
    pub fn new(a: f64, sigma_x2: f64, sigma_y2: f64) -> Result<Self> {
        let p = ModelParams { a, sigma_x2, sigma_y2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidParams(format!("a = {} must lie in (0, 1)", self.a)));
        }
        if !(self.sigma_x2 > 0.0 && self.sigma_x2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma_x2 = {} must be positive", self.sigma_x2)));
        }
        if !(self.sigma_y2 > 0.0 && self.sigma_y2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma_y2 = {} must be positive", self.sigma_y2)));
        }
        if !(self.innovation_var() > 0.0) {
            return Err(Error::InvalidParams("innovation variance (1 - a^2) sigma_x2 is not positive".into()));
        }
        Ok(())
    }

    /// `(1 - a^2) sigma_x2`.
    pub fn innovation_var(&self) -> f64 {
        (1.0 - self.a * self.a) * self.sigma_x2
    }
}

/// The linear-Gaussian model as a [`StateSpaceModel`].
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussian {
    params: ModelParams,
    innovation_var: f64,
    log_norm_x: f64,
}

impl LinearGaussian {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let innovation_var = params.innovation_var();
        Ok(LinearGaussian {
            params,
            innovation_var,
            log_norm_x: -0.5 * (2.0 * std::f64::consts::PI * innovation_var).ln(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Draw a latent path and its observations of length `len`.
    pub fn simulate(&self, len: usize, rng: &mut dyn RngCore) -> Result<(Vec<f64>, Vec<f64>)> {
        if len == 0 {
            return Err(Error::InvalidConfig("simulation length must be at least 1".into()));
        }
        let sy = self.params.sigma_y2.sqrt();
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        let mut x = self.sample_initial(rng);
        for t in 0..len {
            if t > 0 {
                x = self.sample_transition(x, t, rng);
            }
            let e: f64 = StandardNormal.sample(rng);
            xs.push(x);
            ys.push(x + sy * e);
        }
        Ok((xs, ys))
    }
}

impl StateSpaceModel for LinearGaussian {
    fn initial_log_density(&self, x: f64) -> f64 {
        normal_log_density(x, 0.0, self.params.sigma_x2)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.params.sigma_x2.sqrt() * z
    }

    #[inline]
    fn transition_log_density(&self, prev: f64, x: f64, _t: usize) -> f64 {
        let d = x - self.params.a * prev;
        self.log_norm_x - 0.5 * d * d / self.innovation_var
    }

    fn sample_transition(&self, prev: f64, _t: usize, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.params.a * prev + self.innovation_var.sqrt() * z
    }

    fn emission_log_density(&self, x: f64, y: f64, _t: usize) -> f64 {
        normal_log_density(y, x, self.params.sigma_y2)
    }

    fn emission_log_kernel(&self, x: f64, y: f64, _t: usize) -> f64 {
        bootstrap_weight(x, y, &self.params)
    }

    fn emission_log_constant(&self, _t: usize) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.params.sigma_y2).ln()
    }
}

/// Simulate the linear-Gaussian model from a seed.
pub fn simulate_hmm(params: ModelParams, len: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = LinearGaussian::new(params)?;
    let mut rng = crate::rng::StreamSeed(seed).stream(&[crate::rng::purpose::SIMULATE]);
    model.simulate(len, &mut rng)
}

/// Unnormalized bootstrap log-weight `-(y - x)^2 / (2 sigma_y2)`.
#[inline]
pub fn bootstrap_weight(x: f64, y: f64, params: &ModelParams) -> f64 {
    let d = y - x;
    -d * d / (2.0 * params.sigma_y2)
}

/// Density used in place of the transition at the first stage of a segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentInitializer {
    /// The model's own initial density; the only valid choice for the first
    /// segment.
    ModelPrior,
    /// A fixed Gaussian `N(mean, var)`.
    Gaussian { mean: f64, var: f64 },
    /// `K^-1 sum_k p(x | anchor_k)`, the particle approximation of the
    /// predictor built from the previous segment's final states. It makes
    /// every boundary column mean exactly one but couples the segments.
    PredictorMixture { anchors: Vec<f64>, t: usize },
}

impl SegmentInitializer {
    pub fn log_density<M: StateSpaceModel + ?Sized>(&self, model: &M, x: f64) -> f64 {
        match self {
            SegmentInitializer::ModelPrior => model.initial_log_density(x),
            SegmentInitializer::Gaussian { mean, var } => normal_log_density(x, *mean, *var),
            SegmentInitializer::PredictorMixture { anchors, t } => {
                let terms: Vec<f64> = anchors.iter().map(|&p| model.transition_log_density(p, x, *t)).collect();
                log_sum_exp(&terms) - (anchors.len() as f64).ln()
            }
        }
    }

    pub fn sample<M: StateSpaceModel + ?Sized>(&self, model: &M, rng: &mut dyn RngCore) -> f64 {
        match self {
            SegmentInitializer::ModelPrior => model.sample_initial(rng),
            SegmentInitializer::Gaussian { mean, var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            SegmentInitializer::PredictorMixture { anchors, t } => {
                let k = rng.random_range(0..anchors.len());
                model.sample_transition(anchors[k], *t, rng)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SegmentInitializer::Gaussian { mean, var } if !(mean.is_finite() && *var > 0.0 && var.is_finite()) => {
                Err(Error::InvalidConfig(format!("invalid Gaussian initializer N({mean}, {var})")))
            }
            SegmentInitializer::PredictorMixture { anchors, .. } if anchors.is_empty() => {
                Err(Error::InvalidConfig("predictor mixture needs at least one anchor".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Importance density for a segment filter.
///
/// `suffix` is the particle's path inside the current segment only, so a
/// proposal can never look across a segment boundary. At the first stage of
/// a segment the suffix is empty and the segment initializer is available.
pub trait Proposal: Sync {
    fn sample(&self, init: &SegmentInitializer, suffix: &[f64], t: usize, rng: &mut dyn RngCore) -> f64;
    fn log_density(&self, init: &SegmentInitializer, suffix: &[f64], x: f64, t: usize) -> f64;
}

/// Blind proposal: the initializer at a segment's first stage, the model
/// transition afterwards.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapProposal<'a, M> {
    pub model: &'a M,
}

impl<M: StateSpaceModel> Proposal for BootstrapProposal<'_, M> {
    fn sample(&self, init: &SegmentInitializer, suffix: &[f64], t: usize, rng: &mut dyn RngCore) -> f64 {
        match suffix.last() {
            None => init.sample(self.model, rng),
            Some(&prev) => self.model.sample_transition(prev, t, rng),
        }
    }

    fn log_density(&self, init: &SegmentInitializer, suffix: &[f64], x: f64, t: usize) -> f64 {
        match suffix.last() {
            None => init.log_density(self.model, x),
            Some(&prev) => self.model.transition_log_density(prev, x, t),
        }
    }
}

/// Locally optimal proposal for the linear-Gaussian model:
/// `q(x_t | x_{t-1}) ∝ p(x_t | x_{t-1}) g(Y_t | x_t)`. At a segment's first
/// stage it uses a Gaussian initializer's mean and variance (or the
/// stationary law for other initializers) as the prior.
#[derive(Debug, Clone)]
pub struct LocallyOptimalProposal<'a> {
    pub model: &'a LinearGaussian,
    pub observations: &'a [f64],
}

impl LocallyOptimalProposal<'_> {
    fn moments(&self, init: &SegmentInitializer, suffix: &[f64], t: usize) -> (f64, f64) {
        let p = self.model.params();
        let (prior_mean, prior_var) = match (suffix.last(), init) {
            (Some(&prev), _) => (p.a * prev, p.innovation_var()),
            (None, SegmentInitializer::Gaussian { mean, var }) => (*mean, *var),
            (None, _) => (0.0, p.sigma_x2),
        };
        let post_var = 1.0 / (1.0 / prior_var + 1.0 / p.sigma_y2);
        let post_mean = post_var * (prior_mean / prior_var + self.observations[t] / p.sigma_y2);
        (post_mean, post_var)
    }
}

impl Proposal for LocallyOptimalProposal<'_> {
    fn sample(&self, init: &SegmentInitializer, suffix: &[f64], t: usize, rng: &mut dyn RngCore) -> f64 {
        let (m, v) = self.moments(init, suffix, t);
        let z: f64 = StandardNormal.sample(rng);
        m + v.sqrt() * z
    }

    fn log_density(&self, init: &SegmentInitializer, suffix: &[f64], x: f64, t: usize) -> f64 {
        let (m, v) = self.moments(init, suffix, t);
        normal_log_density(x, m, v)
    }
}

/// How resampling weights are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `g(Y_t|x_t) p(x_t|x_{t-1}) / q_t(x_t|.)`, with the segment
    /// initializer in place of `p` at a segment's first stage.
    #[default]
    Ratio,
    /// The emission kernel alone (constant dropped). Equals the ratio rule up
    /// to that constant when the proposal is the bootstrap proposal.
    Bootstrap,
}

impl WeightRule {
    /// Log-weight of the extended path `suffix ++ [x]` at stage `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn log_weight<M: StateSpaceModel + ?Sized, P: Proposal + ?Sized>(
        &self,
        model: &M,
        proposal: &P,
        init: &SegmentInitializer,
        suffix: &[f64],
        x: f64,
        y: f64,
        t: usize,
    ) -> f64 {
        match self {
            WeightRule::Bootstrap => model.emission_log_kernel(x, y, t),
            WeightRule::Ratio => {
                let prior = match suffix.last() {
                    None => init.log_density(model, x),
                    Some(&prev) => model.transition_log_density(prev, x, t),
                };
                model.emission_log_density(x, y, t) + prior - proposal.log_density(init, suffix, x, t)
            }
        }
    }

    /// Amount to add to a log-likelihood estimate over stages `0..len` to
    /// undo the constants this rule drops.
    pub fn log_constant_correction<M: StateSpaceModel + ?Sized>(&self, model: &M, len: usize) -> f64 {
        match self {
            WeightRule::Ratio => 0.0,
            WeightRule::Bootstrap => (0..len).map(|t| model.emission_log_constant(t)).sum(),
        }
    }
}
