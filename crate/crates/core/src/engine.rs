//! Engine selection shared by binomial and multinomial fits.

use crate::draws::FitDraws;
use crate::error::Result;
use crate::gibbs::{run_gibbs, BinomialData, GibbsConfig, PlMbModelSpec};
use crate::vb::{vb_fit, vb_sample, VbConfig, VbPosterior};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    Gibbs(GibbsConfig),
    Vb {
        config: VbConfig,
        /// Number of independent draws taken from the variational posterior.
        draws: usize,
        seed: u64,
    },
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Gibbs(_) => "gibbs",
            Engine::Vb { .. } => "vb",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Engine::Gibbs(c) => c.seed,
            Engine::Vb { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new: u64) -> Self {
        match &mut self {
            Engine::Gibbs(c) => c.seed = new,
            Engine::Vb { seed, .. } => *seed = new,
        }
        self
    }
}

/// Output of one binomial fit.
#[derive(Debug, Clone)]
pub struct BinomialFit {
    pub draws: FitDraws,
    pub variational: Option<VbPosterior>,
}

pub fn fit_binomial(spec: &PlMbModelSpec, data: &BinomialData, engine: &Engine) -> Result<BinomialFit> {
    match engine {
        Engine::Gibbs(cfg) => Ok(BinomialFit {
            draws: run_gibbs(spec, data, cfg)?,
            variational: None,
        }),
        Engine::Vb { config, draws, seed } => {
            let post = vb_fit(spec, data, config)?;
            let draws = vb_sample(&post, *draws, *seed)?;
            Ok(BinomialFit {
                draws,
                variational: Some(post),
            })
        }
    }
}
