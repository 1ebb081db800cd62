//! Negative Binomial semiparametric regression by structured mean field
//! variational Bayes with Pólya-Gamma augmentation.
//!
//! The shape parameter kappa has a discrete prior; conditional on each atom
//! the remaining factors are fitted by coordinate ascent ([`batch`]) or by a
//! one-pass sufficient-statistics update over a stream ([`online`]), and the
//! atoms are averaged into a [`MixturePosterior`].

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod batch;
pub mod error;
pub mod model;
pub mod online;
pub mod posterior;
mod serde_util;
pub mod snapshot;
pub mod specfun;

pub use basis::SplineBasis;
pub use batch::{
    compute_elbo, fit_atoms, fit_batch, fit_single_atom, FitOptions, InitState, PerAtomFit,
    VarianceComponents,
};
pub use error::{NbvbError, Result};
pub use model::{
    assemble_design, simulate_dataset, AtomGrid, DesignBlocks, Hyperparams, MeanLink, Scenario,
    SimulatedData, SplineTerm,
};
pub use online::{snapshot_posterior, warmup, OnlineConfig, OnlineState, SuffStats};
pub use posterior::{
    accuracy_score, accuracy_score_discrete, kappa_pmf, linear_predictor_summary, response_summary,
    sigma2_density, AtomComponent, KappaPmf, MixturePosterior, PredictorSummary, ResponseSummary,
    TabulatedDensity,
};
pub use snapshot::{CovariateSpec, ModelSpec, Snapshot, SnapshotKind};
