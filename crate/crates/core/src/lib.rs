//! Segmented particle filters for hidden Markov models.
//!
//! The observation sequence is cut into `M` contiguous segments, each
//! handled by its own particle filter with no interaction between filters.
//! The filters' outputs are joined afterwards through boundary matrices to
//! give an unbiased likelihood estimate, a ratio estimate of smoothed
//! latent-state functionals, in-sample per-filter variance estimates and a
//! particle allocation across filters. A subsampled `O(K)` likelihood
//! variant for two segments is included.
//!
//! [`kalman`] provides exact answers for the linear-Gaussian model, which
//! the [`experiment`] harness uses as ground truth.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod filter;
pub mod join;
pub mod kalman;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod subsample;

pub use error::{Error, Result};
pub use filter::{estimate_initializer, multinomial_resample, run_segment, SegmentConfig, SegmentOutput};
pub use join::{allocate_particles, boundary_matrix, BoundaryMatrix, EstimateReport, Functional, Join, LikelihoodForm};
pub use kalman::{kalman_filter, rts_smoother, KalmanState, SmootherState};
pub use model::{
    bootstrap_weight, simulate_hmm, BootstrapProposal, LinearGaussian, ModelParams, Proposal, SegmentInitializer,
    StateSpaceModel, WeightRule,
};
pub use pipeline::{InitMode, SegmentedFilter, SegmentedRun};
pub use rng::StreamSeed;
pub use subsample::{PairSamplerKind, SubsampledLikelihood};
