//! Subsampled two-segment likelihood estimate.
//!
//! Instead of summing all `K1 * K2` boundary ratios, `V` index pairs are
//! drawn i.i.d. from a positive distribution `beta` and each drawn ratio is
//! importance-weighted by `1 / beta`. Conditionally on the two segments the
//! estimate has the full double sum as its expectation, and only the drawn
//! ratios are ever evaluated.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::filter::SegmentOutput;
use crate::model::{SegmentInitializer, StateSpaceModel};
use crate::numeric::log_sum_exp;

/// Share of pair mass spread uniformly in the stratified sampler, so that
/// every pair keeps positive probability even where the proxy underflows.
pub const STRATIFIED_UNIFORM_SHARE: f64 = 0.05;

/// How pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSamplerKind {
    /// `beta(k, l) = 1 / (K1 K2)`.
    Uniform,
    /// `beta(k, l) = K1^-1 pi(l)`, with `pi(l)` proportional to the
    /// transition density of the second segment's first state `l` from the
    /// mean of the first segment's last states, mixed with a uniform share.
    Stratified,
}

/// Number of pairs `V = ceil(K^s)`.
pub fn draws_for_exponent(particles: usize, s: f64) -> usize {
    ((particles as f64).powf(s).ceil() as usize).max(1)
}

/// Result of one subsampled estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleDraw {
    pub log_lambda: f64,
    /// Number of boundary-ratio density evaluations performed.
    pub evaluations: usize,
}

/// Frozen pair of segments prepared for repeated subsampling.
pub struct SubsampledLikelihood<'a, M: ?Sized> {
    model: &'a M,
    first: &'a SegmentOutput,
    second: &'a SegmentOutput,
    init_second: &'a SegmentInitializer,
    kind: PairSamplerKind,
    /// `ln pi(l)` over the second segment's particles (stratified only).
    log_col_probs: Vec<f64>,
    col_sampler: Option<WeightedIndex<f64>>,
    sum_log_wbar: f64,
}

impl<'a, M: StateSpaceModel + ?Sized> SubsampledLikelihood<'a, M> {
    pub fn new(
        model: &'a M,
        first: &'a SegmentOutput,
        second: &'a SegmentOutput,
        init_second: &'a SegmentInitializer,
        kind: PairSamplerKind,
    ) -> Result<Self> {
        if first.config.start + first.config.len != second.config.start {
            return Err(Error::DimensionMismatch("subsampling needs two adjacent segments".into()));
        }
        let k2 = second.particles();
        let (log_col_probs, col_sampler) = match kind {
            PairSamplerKind::Uniform => (vec![-(k2 as f64).ln(); k2], None),
            PairSamplerKind::Stratified => {
                let center = first.last_states().iter().sum::<f64>() / first.particles() as f64;
                let t = second.config.start;
                let proxy: Vec<f64> =
                    second.first_states().iter().map(|&x| model.transition_log_density(center, x, t)).collect();
                let norm = log_sum_exp(&proxy);
                let probs: Vec<f64> = proxy
                    .iter()
                    .map(|&p| {
                        (1.0 - STRATIFIED_UNIFORM_SHARE) * (p - norm).exp() + STRATIFIED_UNIFORM_SHARE / k2 as f64
                    })
                    .collect();
                let sampler = WeightedIndex::new(&probs)
                    .map_err(|e| Error::InvalidConfig(format!("stratified pair sampler: {e}")))?;
                (probs.iter().map(|p| p.ln()).collect(), Some(sampler))
            }
        };
        Ok(SubsampledLikelihood {
            model,
            first,
            second,
            init_second,
            kind,
            log_col_probs,
            col_sampler,
            sum_log_wbar: first.sum_log_wbar() + second.sum_log_wbar(),
        })
    }

    pub fn kind(&self) -> PairSamplerKind {
        self.kind
    }

    /// `ln beta(k, l)`.
    pub fn log_beta(&self, _k: usize, l: usize) -> f64 {
        self.log_col_probs[l] - (self.first.particles() as f64).ln()
    }

    /// `ln[p(second_l | first_k) / r(second_l)]`.
    pub fn log_ratio(&self, k: usize, l: usize) -> f64 {
        let x = self.second.first_state(l);
        self.model.transition_log_density(self.first.last_state(k), x, self.second.config.start)
            - self.init_second.log_density(self.model, x)
    }

    /// Log of the estimate obtained from the single pair `(k, l)` (`V = 1`).
    pub fn log_single_pair(&self, k: usize, l: usize) -> f64 {
        let kk = (self.first.particles() * self.second.particles()) as f64;
        self.sum_log_wbar + self.log_ratio(k, l) - self.log_beta(k, l) - kk.ln()
    }

    /// `ln E_beta[estimate]`, by enumerating every pair. Costs `K1 K2`
    /// evaluations; meant for checking.
    pub fn log_expectation(&self) -> f64 {
        let terms: Vec<f64> = (0..self.first.particles())
            .flat_map(|k| (0..self.second.particles()).map(move |l| (k, l)))
            .map(|(k, l)| self.log_beta(k, l) + self.log_single_pair(k, l))
            .collect();
        log_sum_exp(&terms)
    }

    /// Draw `draws` pairs and return the log of the estimate.
    pub fn estimate(&self, draws: usize, rng: &mut dyn RngCore) -> Result<SubsampleDraw> {
        if draws == 0 {
            return Err(Error::InvalidConfig("at least one pair must be drawn".into()));
        }
        let (k1, k2) = (self.first.particles(), self.second.particles());
        let mut terms = Vec::with_capacity(draws);
        for _ in 0..draws {
            let k = rng.random_range(0..k1);
            let l = match &self.col_sampler {
                None => rng.random_range(0..k2),
                Some(s) => s.sample(rng),
            };
            let lb = self.log_beta(k, l);
            if lb == f64::NEG_INFINITY {
                return Err(Error::ZeroPairProbability(k, l));
            }
            terms.push(self.log_ratio(k, l) - lb);
        }
        let log_lambda = self.sum_log_wbar + log_sum_exp(&terms) - ((k1 * k2) as f64).ln() - (draws as f64).ln();
        Ok(SubsampleDraw { log_lambda, evaluations: terms.len() })
    }
}
