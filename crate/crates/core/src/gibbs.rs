//! Pólya-Gamma Gibbs sampler for the pseudo-likelihood binomial mixed model.
//!
//! One sweep updates `ω → η → β → σ²_η` from their full conditionals:
//!
//! * `ω_i ~ PG(w̃_i n_i, x_i'β + φ_i'η)`
//! * `η ~ N((Φ'ΩΦ + I/σ²_η)⁻¹ Φ'Ω(κ/ω − Xβ), (Φ'ΩΦ + I/σ²_η)⁻¹)`
//! * `β ~ N((X'ΩX + I/σ²_β)⁻¹ X'Ω(κ/ω − Φη), (X'ΩX + I/σ²_β)⁻¹)`
//! * `σ²_η ~ IG(a + r/2, b + η'η/2)`
//!
//! with `κ_i = w̃_i (y_i − n_i/2)`. Since `Ω(κ/ω) = κ`, the linear terms are
//! evaluated as `Φ'(κ − ΩXβ)` and `X'(κ − ΩΦη)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::data::DesignMatrices;
use crate::draws::{Draw, FitDraws, FitMeta};
use crate::error::{Error, Result};
use crate::linalg::{sample_canonical, weighted_gram};
use crate::pg::{PgParams, PgSampler};
use crate::rng::{derive_seed, tag, RngStream};

/// Prior hyperparameters shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlMbModelSpec {
    pub sigma2_beta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PlMbModelSpec {
    fn default() -> Self {
        Self {
            sigma2_beta: 1000.0,
            a: 0.5,
            b: 0.5,
        }
    }
}

impl PlMbModelSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2_beta", self.sigma2_beta), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("prior `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Responses and design rows for one binomial fit.
#[derive(Debug, Clone)]
pub struct BinomialData {
    pub x: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub y: DVector<f64>,
    pub trials: DVector<f64>,
}

impl BinomialData {
    pub fn new(
        x: DMatrix<f64>,
        phi: DMatrix<f64>,
        weights: DVector<f64>,
        y: DVector<f64>,
        trials: DVector<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Data("binomial fit needs at least one unit".into()));
        }
        if phi.nrows() != n || weights.len() != n || y.len() != n || trials.len() != n {
            return Err(Error::Data("design, weights and responses are not conformable".into()));
        }
        for i in 0..n {
            if !(trials[i] > 0.0) {
                return Err(Error::Data(format!("unit {i} has no trials")));
            }
            if !(0.0..=trials[i]).contains(&y[i]) {
                return Err(Error::Data(format!("unit {i}: response {} outside 0..={}", y[i], trials[i])));
            }
            if !(weights[i] > 0.0) || !weights[i].is_finite() {
                return Err(Error::Domain(format!("unit {i}: weight must be positive")));
            }
        }
        Ok(Self {
            x,
            phi,
            weights,
            y,
            trials,
        })
    }

    pub fn from_design(design: &DesignMatrices, y: Vec<f64>, trials: Vec<f64>) -> Result<Self> {
        Self::new(
            design.x.clone(),
            design.phi.clone(),
            design.weights.clone(),
            DVector::from_vec(y),
            DVector::from_vec(trials),
        )
    }

    /// Keep only the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.x.select_rows(rows),
            self.phi.select_rows(rows),
            self.weights.select_rows(rows),
            self.y.select_rows(rows),
            self.trials.select_rows(rows),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.phi.ncols()
    }

    pub fn kappa(&self) -> DVector<f64> {
        DVector::from_vec(kappa(self.y.as_slice(), self.trials.as_slice(), self.weights.as_slice()))
    }

    pub fn linear_predictor(&self, beta: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let mut psi = &self.x * beta;
        if self.r() > 0 {
            psi += &self.phi * eta;
        }
        psi
    }
}

/// `κ_i = w̃_i (y_i − n_i/2)`.
pub fn kappa(y: &[f64], trials: &[f64], weights: &[f64]) -> Vec<f64> {
    assert!(y.len() == trials.len() && y.len() == weights.len(), "vectors must be conformable");
    y.iter()
        .zip(trials)
        .zip(weights)
        .map(|((y, n), w)| w * (y - 0.5 * n))
        .collect()
}

/// Current values of all sampled quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub sigma2_eta: f64,
    pub omega: DVector<f64>,
}

impl GibbsState {
    /// `β = 0`, `η = 0`, `σ²_η = 1`, `ω` at its prior mean `w̃_i n_i / 4`.
    pub fn initial(data: &BinomialData) -> Self {
        Self {
            beta: DVector::zeros(data.q()),
            eta: DVector::zeros(data.r()),
            sigma2_eta: 1.0,
            omega: data.weights.component_mul(&data.trials) * 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub burnin: usize,
    pub retained: usize,
    pub thin: usize,
    pub seed: u64,
    pub pg_truncation: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burnin: 1000,
            retained: 1000,
            thin: 1,
            seed: 0,
            pg_truncation: crate::pg::DEFAULT_TRUNCATION,
        }
    }
}

/// Redraw every `ω_i` on its own counter-based stream `(derive(seed, iteration), i)`.
pub fn draw_omega(
    state: &mut GibbsState,
    data: &BinomialData,
    sampler: &PgSampler,
    seed: u64,
    iteration: usize,
) -> Result<()> {
    let psi = data.linear_predictor(&state.beta, &state.eta);
    let shapes = data.weights.component_mul(&data.trials);
    let iter_seed = derive_seed(seed, &[tag::OMEGA, iteration as u64]);
    let omega = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let params = PgParams::new(shapes[i], psi[i])?;
            let mut rng = RngStream::new(iter_seed, i as u64);
            Ok(sampler.sample(params, &mut rng))
        })
        .collect::<Result<Vec<f64>>>()?;
    state.omega = DVector::from_vec(omega);
    Ok(())
}

pub fn draw_eta<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &BinomialData,
    kappa: &DVector<f64>,
    rng: &mut R,
) -> Result<()> {
    let r = data.r();
    if r == 0 {
        return Ok(());
    }
    let mut precision = weighted_gram(&data.phi, &state.omega);
    for j in 0..r {
        precision[(j, j)] += 1.0 / state.sigma2_eta;
    }
    let xb = &data.x * &state.beta;
    let resid = kappa - state.omega.component_mul(&xb);
    let linear = data.phi.tr_mul(&resid);
    state.eta = sample_canonical(precision, &linear, rng, "eta update")?;
    Ok(())
}

pub fn draw_beta<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &BinomialData,
    kappa: &DVector<f64>,
    sigma2_beta: f64,
    rng: &mut R,
) -> Result<()> {
    let q = data.q();
    let mut precision = weighted_gram(&data.x, &state.omega);
    for j in 0..q {
        precision[(j, j)] += 1.0 / sigma2_beta;
    }
    let resid = if data.r() > 0 {
        let pe = &data.phi * &state.eta;
        kappa - state.omega.component_mul(&pe)
    } else {
        kappa.clone()
    };
    let linear = data.x.tr_mul(&resid);
    state.beta = sample_canonical(precision, &linear, rng, "beta update")?;
    Ok(())
}

/// `σ²_η ~ IG(a + r/2, b + η'η/2)`.
pub fn draw_sigma_eta<R: Rng + ?Sized>(eta: &DVector<f64>, a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let shape = a + 0.5 * eta.len() as f64;
    let rate = b + 0.5 * eta.norm_squared();
    sample_inverse_gamma(shape, rate, rng)
}

pub(crate) fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Domain(format!("inverse gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

pub fn run_gibbs(spec: &PlMbModelSpec, data: &BinomialData, config: &GibbsConfig) -> Result<FitDraws> {
    spec.validate()?;
    if config.thin == 0 {
        return Err(Error::Domain("thin must be at least 1".into()));
    }
    let sampler = PgSampler::new(config.pg_truncation)?;
    let start = Instant::now();
    let kappa = data.kappa();
    let mut state = GibbsState::initial(data);
    let total = config.burnin + config.retained * config.thin;
    let global_seed = derive_seed(config.seed, &[tag::GLOBAL]);
    let mut draws = Vec::with_capacity(config.retained);

    for it in 0..total {
        let wrap = |e: Error| Error::Iteration {
            engine: "gibbs",
            iteration: it,
            source: Box::new(e),
        };
        let mut rng = RngStream::new(global_seed, it as u64);
        draw_omega(&mut state, data, &sampler, config.seed, it).map_err(wrap)?;
        draw_eta(&mut state, data, &kappa, &mut rng).map_err(wrap)?;
        draw_beta(&mut state, data, &kappa, spec.sigma2_beta, &mut rng).map_err(wrap)?;
        state.sigma2_eta = draw_sigma_eta(&state.eta, spec.a, spec.b, &mut rng).map_err(wrap)?;

        if state.beta.iter().chain(state.eta.iter()).any(|v| !v.is_finite()) || !state.sigma2_eta.is_finite() {
            return Err(Error::NonFinite {
                stage: "gibbs",
                iteration: it,
            });
        }
        if it >= config.burnin && (it - config.burnin + 1) % config.thin == 0 {
            draws.push(Draw {
                beta: state.beta.clone(),
                eta: state.eta.clone(),
                sigma2_eta: state.sigma2_eta,
            });
        }
    }

    Ok(FitDraws {
        draws,
        meta: FitMeta {
            engine: "gibbs",
            burnin: config.burnin,
            retained: config.retained,
            thin: config.thin,
            iterations: total,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    })
}
