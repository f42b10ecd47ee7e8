//! Variational-Bayes EM for the pseudo-likelihood binomial mixed model.
//!
//! With `D = [X, Φ]` and `ζ = (β', η')'`, each iteration performs
//!
//! ```text
//! Ω̃  = Diag(w̃_i tanh(ξ_i/2) / (2ξ_i))
//! Σ̃  = (blockdiag(I_q/σ²_β, (a + r/2)/b̃_η · I_r) + D'Ω̃D)⁻¹
//! μ̃  = Σ̃ D'(w̃ ⊙ (Z − 1/2))
//! b̃_η = b + (μ̃_η'μ̃_η + tr Σ̃_η) / 2
//! ξ_i = (D_i'Σ̃D_i + (D_i'μ̃)²)^{1/2}
//! ```
//!
//! `b̃_η` is the rate of the variational inverse-gamma factor for `σ²_η`,
//! whose shape is fixed at `a + r/2`. Only binary responses are supported.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::StandardNormal;
use rand::Rng;

use crate::draws::{Draw, FitDraws, FitMeta};
use crate::error::{Error, Result};
use crate::gibbs::{sample_inverse_gamma, BinomialData, PlMbModelSpec};
use crate::linalg::{cholesky_with_jitter, weighted_gram};
use crate::pg::half_tanh_ratio;
use crate::rng::{derive_seed, tag, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

/// Converged variational parameters.
#[derive(Debug, Clone)]
pub struct VbPosterior {
    pub q: usize,
    pub r: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Inverse-gamma shape `a + r/2` of the `σ²_η` factor.
    pub shape_eta: f64,
    /// Inverse-gamma rate of the `σ²_η` factor.
    pub b_eta: f64,
    pub xi: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of `μ̃` in the final iteration.
    pub last_mean_change: f64,
    pub wall_time_secs: f64,
}

impl VbPosterior {
    pub fn mean_beta(&self) -> DVector<f64> {
        self.mean.rows(0, self.q).clone_owned()
    }

    pub fn mean_eta(&self) -> DVector<f64> {
        self.mean.rows(self.q, self.r).clone_owned()
    }

    pub fn marginal_sd(&self) -> DVector<f64> {
        self.cov.diagonal().map(f64::sqrt)
    }

    pub fn cov_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        cholesky_with_jitter(self.cov.clone(), "variational covariance")
    }
}

/// Fit the variational approximation. Requires `n_i = 1` for all units.
pub fn vb_fit(spec: &PlMbModelSpec, data: &BinomialData, config: &VbConfig) -> Result<VbPosterior> {
    spec.validate()?;
    if let Some(i) = data.trials.iter().position(|&n| n != 1.0) {
        return Err(Error::Data(format!(
            "variational engine needs binary responses; unit {i} has {} trials",
            data.trials[i]
        )));
    }
    let start = Instant::now();
    let (n, q, r) = (data.n(), data.q(), data.r());
    let p = q + r;
    let mut d = DMatrix::zeros(n, p);
    d.columns_mut(0, q).copy_from(&data.x);
    if r > 0 {
        d.columns_mut(q, r).copy_from(&data.phi);
    }
    let centered = data.weights.component_mul(&data.y.map(|z| z - 0.5));
    let rhs = d.tr_mul(&centered);
    let shape_eta = spec.a + 0.5 * r as f64;

    let mut xi = DVector::from_element(n, 1.0);
    let mut b_eta = spec.b;
    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    for t in 1..=config.max_iter {
        iterations = t;
        let omega = DVector::from_fn(n, |i, _| data.weights[i] * half_tanh_ratio(xi[i]));
        let mut precision = weighted_gram(&d, &omega);
        for j in 0..q {
            precision[(j, j)] += 1.0 / spec.sigma2_beta;
        }
        for j in q..p {
            precision[(j, j)] += shape_eta / b_eta;
        }
        let chol = cholesky_with_jitter(precision, "variational precision").map_err(|e| Error::Iteration {
            engine: "vb",
            iteration: t,
            source: Box::new(e),
        })?;
        let new_cov = chol.inverse();
        let new_mean = &new_cov * &rhs;
        let mu_eta = new_mean.rows(q, r);
        let trace_eta: f64 = (q..p).map(|j| new_cov[(j, j)]).sum();
        let new_b = spec.b + 0.5 * (mu_eta.norm_squared() + trace_eta);

        let d_cov = &d * &new_cov;
        let d_mean = &d * &new_mean;
        for i in 0..n {
            let quad = d.row(i).dot(&d_cov.row(i));
            xi[i] = (quad + d_mean[i] * d_mean[i]).max(0.0).sqrt();
        }

        if new_mean.iter().any(|v| !v.is_finite()) || !new_b.is_finite() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "vb",
                iteration: t,
            });
        }
        let mean_change = (&new_mean - &mean).amax();
        let b_change = (new_b - b_eta).abs() / new_b.abs().max(f64::MIN_POSITIVE);
        mean = new_mean;
        cov = new_cov;
        b_eta = new_b;
        last_change = mean_change;
        if t > 1 && mean_change < config.tol && b_change < config.tol {
            converged = true;
            break;
        }
    }

    // Σ̃ is the inverse of an SPD matrix; symmetrize away rounding.
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(VbPosterior {
        q,
        r,
        mean,
        cov,
        shape_eta,
        b_eta,
        xi,
        iterations,
        converged,
        last_mean_change: last_change,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Independent draws of `ζ ~ N(μ̃, Σ̃)` and `σ²_η ~ IG(a + r/2, b̃_η)`.
pub fn vb_sample(post: &VbPosterior, m: usize, seed: u64) -> Result<FitDraws> {
    let start = Instant::now();
    let chol = post.cov_cholesky()?;
    let l = chol.l();
    let p = post.q + post.r;
    let base = derive_seed(seed, &[tag::VB_DRAWS]);
    let mut draws = Vec::with_capacity(m);
    for j in 0..m {
        let mut rng = RngStream::new(base, j as u64);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zeta = &post.mean + &l * z;
        let sigma2_eta = sample_inverse_gamma(post.shape_eta, post.b_eta, &mut rng)?;
        draws.push(Draw {
            beta: zeta.rows(0, post.q).clone_owned(),
            eta: zeta.rows(post.q, post.r).clone_owned(),
            sigma2_eta,
        });
    }
    Ok(FitDraws {
        draws,
        meta: FitMeta {
            engine: "vb",
            burnin: 0,
            retained: m,
            thin: 1,
            iterations: post.iterations,
            wall_time_secs: post.wall_time_secs + start.elapsed().as_secs_f64(),
        },
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PGSAEVB\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, dimensions, then little-endian `f64`s for
/// `μ̃`, the packed lower Cholesky factor of `Σ̃` (row-major), `b̃_η`, and `ξ`.
pub fn write_checkpoint<W: Write>(post: &VbPosterior, mut w: W) -> Result<()> {
    let chol = post.cov_cholesky()?;
    let l = chol.l();
    let p = post.q + post.r;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(post.q as u32).to_le_bytes())?;
    w.write_all(&(post.r as u32).to_le_bytes())?;
    w.write_all(&(post.xi.len() as u64).to_le_bytes())?;
    w.write_all(&(post.iterations as u64).to_le_bytes())?;
    w.write_all(&[post.converged as u8])?;
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    put(post.shape_eta)?;
    put(post.b_eta)?;
    put(post.last_mean_change)?;
    for v in post.mean.iter() {
        put(*v)?;
    }
    for i in 0..p {
        for j in 0..=i {
            put(l[(i, j)])?;
        }
    }
    for v in post.xi.iter() {
        put(*v)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<VbPosterior> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a variational checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut u32_ = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = u32_(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let q = u32_(&mut r)? as usize;
    let rr = u32_(&mut r)? as usize;
    let mut u64_ = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = u64_(&mut r)? as usize;
    let iterations = u64_(&mut r)? as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let f = |r: &mut R| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let shape_eta = f(&mut r)?;
    let b_eta = f(&mut r)?;
    let last_mean_change = f(&mut r)?;
    let p = q + rr;
    let mut mean = DVector::zeros(p);
    for i in 0..p {
        mean[i] = f(&mut r)?;
    }
    let mut l = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            l[(i, j)] = f(&mut r)?;
        }
    }
    let mut xi = DVector::zeros(n);
    for i in 0..n {
        xi[i] = f(&mut r)?;
    }
    Ok(VbPosterior {
        q,
        r: rr,
        mean,
        cov: &l * l.transpose(),
        shape_eta,
        b_eta,
        xi,
        iterations,
        converged: flag[0] != 0,
        last_mean_change,
        wall_time_secs: 0.0,
    })
}
