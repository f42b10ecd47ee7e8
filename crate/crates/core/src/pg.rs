//! Pólya-Gamma variates.
//!
//! `PG(b, c)` is equal in distribution to
//! `1/(2π²) Σ_k g_k / ((k − 1/2)² + c²/(4π²))` with `g_k ~ Gamma(b, 1)`.
//!
//! Draws for `b = 1` use Devroye's exact alternating-series accept/reject
//! scheme. Integer shapes are sums of `PG(1, c)` draws. The fractional part of
//! a non-integer shape is drawn from the gamma series truncated at a
//! configurable depth; the expected value of the omitted tail is added back
//! so the draw's mean equals the analytic mean exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub use crate::rng::RngStream;

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;
const PI_SQ: f64 = PI * PI;

/// Default number of gamma terms kept for the fractional shape remainder.
pub const DEFAULT_TRUNCATION: usize = 200;

/// Parameters of a `PG(b, c)` distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParams {
    b: f64,
    c: f64,
}

impl PgParams {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!("PG shape must be finite and > 0, got {b}")));
        }
        if !c.is_finite() {
            return Err(Error::Domain(format!("PG tilt must be finite, got {c}")));
        }
        Ok(Self { b, c })
    }

    pub fn shape(&self) -> f64 {
        self.b
    }

    pub fn tilt(&self) -> f64 {
        self.c
    }
}

/// `E[PG(b, c)] = b/(2c) · tanh(c/2)`, with the limit `b/4` at `c = 0`.
pub fn pg_mean(params: PgParams) -> f64 {
    params.b * half_tanh_ratio(params.c)
}

/// `tanh(c/2)/(2c)`, continuous at zero where it equals 1/4.
#[inline]
pub(crate) fn half_tanh_ratio(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Pólya-Gamma sampler with a configurable series truncation depth.
#[derive(Debug, Clone, Copy)]
pub struct PgSampler {
    truncation: usize,
}

impl Default for PgSampler {
    fn default() -> Self {
        Self {
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl PgSampler {
    pub fn new(truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Domain("PG truncation depth must be at least 1".into()));
        }
        Ok(Self { truncation })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn sample<R: Rng + ?Sized>(&self, params: PgParams, rng: &mut R) -> f64 {
        let PgParams { b, c } = params;
        let whole = b.floor();
        let frac = b - whole;
        let mut x = 0.0;
        for _ in 0..whole as u64 {
            x += draw_pg1(c, rng);
        }
        if frac > 0.0 {
            x += self.draw_fractional(frac, c, rng);
        }
        x
    }

    /// Truncated gamma series for `0 < b < 1` plus the mean of the omitted tail.
    fn draw_fractional<R: Rng + ?Sized>(&self, b: f64, c: f64, rng: &mut R) -> f64 {
        let gamma = Gamma::new(b, 1.0).expect("shape in (0, 1) is valid");
        let c2 = c * c / (4.0 * PI_SQ);
        let mut sum = 0.0;
        let mut kept_mean = 0.0;
        for k in 1..=self.truncation {
            let h = k as f64 - 0.5;
            let inv_den = 1.0 / (h * h + c2);
            sum += gamma.sample(rng) * inv_den;
            kept_mean += inv_den;
        }
        let scale = 1.0 / (2.0 * PI_SQ);
        let tail = b * half_tanh_ratio(c) - b * scale * kept_mean;
        sum * scale + tail.max(0.0)
    }
}

/// Draw one `PG(b, c)` variate with the default truncation depth.
pub fn sample_pg<R: Rng + ?Sized>(params: PgParams, rng: &mut R) -> f64 {
    PgSampler::default().sample(params, rng)
}

/// Exact `PG(1, c)` draw.
pub fn draw_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI_SQ + 0.5 * z * z;
    let p_texpon = mass_texpon(z, fz);
    loop {
        let x = if rng.random::<f64>() < p_texpon {
            TRUNC + sample_exp(rng) / fz
        } else {
            rtigauss(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

#[inline]
fn sample_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Coefficients of the alternating series for the J*(1, z) density.
fn series_coef(n: u32, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    let k = h * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let expnt = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x;
        expnt.exp()
    } else {
        0.0
    }
}

/// Probability that the proposal comes from the truncated exponential piece.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let qdivp = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC).
fn rtigauss<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    let mut x = t + 1.0;
    if TRUNC_RECIP > z {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let mut e1 = sample_exp(rng);
            let mut e2 = sample_exp(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = sample_exp(rng);
                e2 = sample_exp(rng);
            }
            let d = 1.0 + e1 * t;
            x = t / (d * d);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let g: f64 = StandardNormal.sample(rng);
            let y = g * g;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}
