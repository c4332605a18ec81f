//! End-to-end segmented run: initializers, independent segment filters
//! (in parallel where the initializers allow it) and boundary matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{estimate_initializer, initializer_window, run_segment, SegmentConfig, SegmentOutput};
use crate::join::{boundary_matrix, BoundaryMatrix, Join};
use crate::model::{BootstrapProposal, SegmentInitializer, StateSpaceModel, WeightRule};
use crate::rng::{purpose, StreamSeed};

/// How segments after the first are initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// The model's initial density.
    Prior,
    /// A fixed `N(mean, var)`.
    Fixed { mean: f64, var: f64 },
    /// A Gaussian fitted by an auxiliary filter over the `window + 1`
    /// observations preceding the segment.
    Estimated { window: usize, aux_particles: usize, var_floor: f64 },
    /// The particle predictor from the previous segment. Forces the segments
    /// to run one after another.
    Predictor,
}

/// Segment geometry and filter settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedFilter {
    pub horizon: usize,
    /// Particles per segment; its length is the number of segments.
    pub particles: Vec<usize>,
    pub init: InitMode,
    pub weight: WeightRule,
}

/// Outputs of one segmented run.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedRun {
    pub segments: Vec<SegmentOutput>,
    pub initializers: Vec<SegmentInitializer>,
    pub boundaries: Vec<BoundaryMatrix>,
}

impl SegmentedRun {
    pub fn join(&self) -> Result<Join<'_>> {
        Join::new(&self.segments, &self.boundaries)
    }
}

impl SegmentedFilter {
    /// `segments` segments of `particles` each over `horizon` stages.
    pub fn uniform(horizon: usize, segments: usize, particles: usize, init: InitMode, weight: WeightRule) -> Self {
        SegmentedFilter { horizon, particles: vec![particles; segments], init, weight }
    }

    pub fn segment_count(&self) -> usize {
        self.particles.len()
    }

    pub fn segment_len(&self) -> usize {
        self.horizon / self.segment_count().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.segment_count();
        if m == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("need at least one segment and one stage".into()));
        }
        if !self.horizon.is_multiple_of(m) {
            return Err(Error::InvalidConfig(format!("horizon {} is not a multiple of {m} segments", self.horizon)));
        }
        if self.particles.contains(&0) {
            return Err(Error::InvalidConfig("every segment needs at least one particle".into()));
        }
        Ok(())
    }

    fn config(&self, m: usize) -> SegmentConfig {
        let len = self.segment_len();
        SegmentConfig { index: m, start: m * len, len, particles: self.particles[m] }
    }

    /// Initializer for segment `m >= 1` that does not depend on other
    /// segments' particles.
    fn independent_initializer<M: StateSpaceModel>(
        &self,
        model: &M,
        m: usize,
        observations: &[f64],
        seed: StreamSeed,
    ) -> Result<SegmentInitializer> {
        match &self.init {
            InitMode::Prior => Ok(SegmentInitializer::ModelPrior),
            InitMode::Fixed { mean, var } => Ok(SegmentInitializer::Gaussian { mean: *mean, var: *var }),
            InitMode::Estimated { window, aux_particles, var_floor } => {
                let start = self.config(m).start;
                let mut rng = seed.stream(&[purpose::INITIALIZER, m as u64]);
                estimate_initializer(
                    model,
                    observations,
                    initializer_window(start, *window),
                    *aux_particles,
                    *var_floor,
                    &mut rng,
                )
            }
            InitMode::Predictor => unreachable!("predictor initializers depend on the previous segment"),
        }
    }

    fn run_one<M: StateSpaceModel>(
        &self,
        model: &M,
        m: usize,
        init: &SegmentInitializer,
        observations: &[f64],
        seed: StreamSeed,
    ) -> Result<SegmentOutput> {
        let proposal = BootstrapProposal { model };
        let mut rng = seed.stream(&[purpose::SEGMENT, m as u64]);
        run_segment(model, &proposal, self.weight, init, self.config(m), observations, &mut rng)
    }

    /// Run every segment filter and build the boundary matrices. Segments
    /// run on the current rayon pool; the result does not depend on the
    /// pool size.
    pub fn run<M: StateSpaceModel>(&self, model: &M, observations: &[f64], seed: StreamSeed) -> Result<SegmentedRun> {
        self.validate()?;
        if observations.len() < self.horizon {
            return Err(Error::InvalidConfig(format!(
                "{} observations for a horizon of {}",
                observations.len(),
                self.horizon
            )));
        }
        let m_n = self.segment_count();
        let (segments, initializers) = if self.init == InitMode::Predictor {
            let mut segs: Vec<SegmentOutput> = Vec::with_capacity(m_n);
            let mut inits = Vec::with_capacity(m_n);
            for m in 0..m_n {
                let init = if m == 0 {
                    SegmentInitializer::ModelPrior
                } else {
                    SegmentInitializer::PredictorMixture { anchors: segs[m - 1].last_states(), t: self.config(m).start }
                };
                segs.push(self.run_one(model, m, &init, observations, seed)?);
                inits.push(init);
            }
            (segs, inits)
        } else {
            let pairs: Vec<(SegmentOutput, SegmentInitializer)> = (0..m_n)
                .into_par_iter()
                .map(|m| {
                    let init = if m == 0 {
                        SegmentInitializer::ModelPrior
                    } else {
                        self.independent_initializer(model, m, observations, seed)?
                    };
                    let out = self.run_one(model, m, &init, observations, seed)?;
                    Ok((out, init))
                })
                .collect::<Result<_>>()?;
            pairs.into_iter().unzip()
        };
        let boundaries = (1..m_n)
            .into_par_iter()
            .map(|m| boundary_matrix(model, &segments[m - 1], &segments[m], &initializers[m]))
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentedRun { segments, initializers, boundaries })
    }
}
