//! Unit-level binomial and multinomial models for informative survey samples.
//!
//! Survey weights enter through a pseudo-likelihood in which each unit's
//! likelihood contribution is raised to its scaled weight. Two engines fit
//! the resulting pseudo-posterior: a Pólya-Gamma Gibbs sampler
//! ([`gibbs`]) and a variational-Bayes EM scheme ([`vb`]). Multinomial
//! responses are fit through a stick-breaking decomposition into
//! independent binomial fits ([`multinomial`]). Posterior draws are
//! poststratified over a population frame to produce small-area estimates
//! ([`predict`]), and [`simharness`] scores those estimates against
//! design-based direct estimators under informative Poisson PPS sampling.

pub mod data;
pub mod draws;
pub mod engine;
pub mod error;
pub mod gibbs;
pub mod linalg;
pub mod multinomial;
pub mod pg;
pub mod predict;
pub mod rng;
pub mod simharness;
pub mod vb;

pub use data::{
    build_design, eigen_basis, pseudo_counts, scale_weights, Adjacency, BasisChoice, DesignMatrices,
    DesignSchema, Factor, PopulationCell, PopulationFrame, SurveyDataset, SurveyUnit,
};
pub use draws::{Draw, FitDraws, FitMeta};
pub use engine::{fit_binomial, BinomialFit, Engine};
pub use error::{Error, Result};
pub use gibbs::{run_gibbs, BinomialData, GibbsConfig, GibbsState, PlMbModelSpec};
pub use multinomial::{
    fit_plmm, stick_data, stick_forward, stick_inverse, stick_seed, CategoricalResponse, PlMmFit,
};
pub use pg::{pg_mean, sample_pg, PgParams, PgSampler};
pub use predict::{
    binomial_cell_probs, multinomial_cell_probs, poststratify, summarize_draws, CellProbabilities, Domain,
    DomainEstimate, PredictMode,
};
pub use rng::{derive_seed, RngStream};
pub use simharness::{
    direct_estimates, poisson_pps_sample, run_simulation, size_variable, Estimator, ScoreBoard, SimBasis, SimDesign,
    SynthConfig, SyntheticPopulation,
};
pub use vb::{vb_fit, vb_sample, VbConfig, VbPosterior};
