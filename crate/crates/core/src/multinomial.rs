//! Multinomial responses through the stick-breaking decomposition.
//!
//! A `Multinomial(n, p)` likelihood factors into `K − 1` binomials
//! `Bin(Z_k | n_k, p̃_k)` with `n_k = n − Σ_{j<k} Z_j` and
//! `p̃_k = p_k / (1 − Σ_{j<k} p_j)`. Each stick is fit as an independent
//! pseudo-likelihood binomial model sharing the units' scaled weights. The
//! decomposition depends on category order, which is fixed by the order of
//! [`PlMmFit::categories`].

use nalgebra::DVector;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::data::{DesignMatrices, DesignSchema};
use crate::engine::{fit_binomial, BinomialFit, Engine};
use crate::error::{Error, Result};
use crate::gibbs::{BinomialData, PlMbModelSpec};
use crate::rng::{derive_seed, tag};

/// Category counts for one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalResponse {
    counts: Vec<u32>,
    trials: u32,
}

impl CategoricalResponse {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Data("need at least two categories".into()));
        }
        let trials: u32 = counts.iter().sum();
        if trials == 0 {
            return Err(Error::Data("categorical response has zero trials".into()));
        }
        Ok(Self { counts, trials })
    }

    /// A single trial falling in 1-based category `label` out of `k`.
    pub fn from_label(label: u32, k: usize) -> Result<Self> {
        if label == 0 || label as usize > k {
            return Err(Error::Data(format!("category label {label} outside 1..={k}")));
        }
        let mut counts = vec![0; k];
        counts[label as usize - 1] = 1;
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn trials(&self) -> u32 {
        self.trials
    }

    pub fn categories(&self) -> usize {
        self.counts.len()
    }
}

/// Conditional stick probabilities `p̃_1..p̃_{K−1}` of a simplex vector.
///
/// A stick whose remaining mass is zero gets `p̃_k = 0`.
pub fn stick_forward(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(Error::Domain("simplex needs at least two entries".into()));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("probabilities must be nonnegative: {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
    }
    let k = p.len();
    let mut tail = vec![0.0; k + 1];
    for j in (0..k).rev() {
        tail[j] = tail[j + 1] + p[j];
    }
    let mut out = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let remaining = tail[j];
        if remaining <= 0.0 {
            out.push(0.0);
        } else {
            out.push((p[j] / remaining).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Inverse of [`stick_forward`].
pub fn stick_inverse(sticks: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut remaining = 1.0;
    for &s in sticks {
        out.push(s * remaining);
        remaining *= 1.0 - s;
    }
    out.push(remaining);
    out
}

/// One stick's binomial observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StickPair {
    pub successes: u32,
    pub trials: u32,
    /// No mass left for this stick; contributes likelihood 1.
    pub inert: bool,
}

pub fn stick_data(z: &CategoricalResponse) -> Vec<StickPair> {
    let mut remaining = z.trials;
    z.counts[..z.counts.len() - 1]
        .iter()
        .map(|&c| {
            let pair = StickPair {
                successes: c,
                trials: remaining,
                inert: remaining == 0,
            };
            remaining -= c;
            pair
        })
        .collect()
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn multinomial_loglik(z: &CategoricalResponse, p: &[f64]) -> f64 {
    let n = z.trials as f64;
    let mut ll = ln_gamma(n + 1.0);
    for (&c, &pk) in z.counts.iter().zip(p) {
        ll += xlogy(c as f64, pk) - ln_gamma(c as f64 + 1.0);
    }
    ll
}

/// `Σ_k log Bin(Z_k | n_k, p̃_k)` over the sticks of `p`.
pub fn stick_binomial_loglik(z: &CategoricalResponse, p: &[f64]) -> Result<f64> {
    let sticks = stick_forward(p)?;
    Ok(stick_data(z)
        .iter()
        .zip(&sticks)
        .map(|(pair, &s)| {
            let (y, n) = (pair.successes, pair.trials);
            ln_choose(n, y) + xlogy(y as f64, s) + xlogy((n - y) as f64, 1.0 - s)
        })
        .sum())
}

/// Seed used for stick `k` (0-based) of a multinomial fit rooted at `root`.
pub fn stick_seed(root: u64, stick: usize) -> u64 {
    derive_seed(root, &[tag::STICK, stick as u64])
}

/// `K − 1` independent binomial sub-fits.
#[derive(Debug, Clone)]
pub struct PlMmFit {
    /// Category labels in stick order; the last category is the baseline.
    pub categories: Vec<String>,
    pub sticks: Vec<BinomialFit>,
    /// Units that carried mass into each stick.
    pub stick_units: Vec<usize>,
}

impl PlMmFit {
    pub fn k(&self) -> usize {
        self.categories.len()
    }

    pub fn n_draws(&self) -> usize {
        self.sticks.first().map_or(0, |s| s.draws.len())
    }
}

/// Binomial dataset for stick `k`, inert rows dropped.
pub fn stick_binomial_data(design: &DesignMatrices, responses: &[CategoricalResponse], k: usize) -> Result<BinomialData> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut n = Vec::new();
    for (i, z) in responses.iter().enumerate() {
        let pair = stick_data(z)[k];
        if !pair.inert {
            rows.push(i);
            y.push(pair.successes as f64);
            n.push(pair.trials as f64);
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("no units reach stick {}", k + 1)));
    }
    BinomialData::new(
        design.x.select_rows(&rows),
        design.phi.select_rows(&rows),
        design.weights.select_rows(&rows),
        DVector::from_vec(y),
        DVector::from_vec(n),
    )
}

pub fn fit_plmm(
    design: &DesignMatrices,
    responses: &[CategoricalResponse],
    categories: Vec<String>,
    spec: &PlMbModelSpec,
    engine: &Engine,
) -> Result<PlMmFit> {
    let k = categories.len();
    if k < 2 {
        return Err(Error::Data("multinomial fit needs at least two categories".into()));
    }
    if responses.len() != design.x.nrows() {
        return Err(Error::Data("responses and design rows differ in length".into()));
    }
    if let Some(z) = responses.iter().find(|z| z.categories() != k) {
        return Err(Error::Data(format!("response with {} categories, expected {k}", z.categories())));
    }
    let root = engine.seed();
    let results: Vec<Result<(BinomialFit, usize)>> = (0..k - 1)
        .into_par_iter()
        .map(|s| {
            let wrap = |e| Error::Stick {
                stick: s + 1,
                source: Box::new(e),
            };
            let data = stick_binomial_data(design, responses, s).map_err(wrap)?;
            let fit = fit_binomial(spec, &data, &engine.with_seed(stick_seed(root, s))).map_err(wrap)?;
            Ok((fit, data.n()))
        })
        .collect();
    let mut sticks = Vec::with_capacity(k - 1);
    let mut stick_units = Vec::with_capacity(k - 1);
    for r in results {
        let (fit, n) = r?;
        sticks.push(fit);
        stick_units.push(n);
    }
    Ok(PlMmFit {
        categories,
        sticks,
        stick_units,
    })
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-draw category probabilities for one covariate cell in one area.
pub fn plmm_cell_probs(fit: &PlMmFit, schema: &DesignSchema, covariates: &[String], area: &str) -> Result<Vec<Vec<f64>>> {
    let (x, phi) = schema.encode(covariates, area)?;
    Ok((0..fit.n_draws())
        .map(|d| {
            let sticks: Vec<f64> = fit
                .sticks
                .iter()
                .map(|s| {
                    let draw = &s.draws.draws[d];
                    let mut psi = x.dot(&draw.beta);
                    if !phi.is_empty() {
                        psi += phi.dot(&draw.eta);
                    }
                    logistic(psi)
                })
                .collect();
            stick_inverse(&sticks)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        let f = stick_forward(&[0.2, 0.3, 0.5]).unwrap();
        assert!((f[0] - 0.2).abs() < 1e-15 && (f[1] - 0.375).abs() < 1e-15);
        let u = stick_forward(&[0.25; 4]).unwrap();
        for (a, b) in u.iter().zip([0.25, 1.0 / 3.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(stick_forward(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(stick_forward(&[0.5, 0.6]).is_err());
        assert!(stick_forward(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn inverse_examples() {
        let p = stick_inverse(&[0.2, 0.375]);
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(stick_inverse(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn stick_data_examples() {
        let pairs = |c: Vec<u32>| -> Vec<(u32, u32, bool)> {
            stick_data(&CategoricalResponse::new(c).unwrap())
                .into_iter()
                .map(|p| (p.successes, p.trials, p.inert))
                .collect()
        };
        assert_eq!(pairs(vec![0, 1, 0]), vec![(0, 1, false), (1, 1, false)]);
        assert_eq!(pairs(vec![1, 0, 0]), vec![(1, 1, false), (0, 0, true)]);
        assert_eq!(pairs(vec![1, 2, 0, 3]), vec![(1, 6, false), (2, 5, false), (0, 3, false)]);
    }

    #[test]
    fn label_constructor() {
        assert_eq!(CategoricalResponse::from_label(2, 3).unwrap().counts(), &[0, 1, 0]);
        assert!(CategoricalResponse::from_label(0, 3).is_err());
        assert!(CategoricalResponse::from_label(4, 3).is_err());
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn roundtrip_on_simplex(raw in prop::collection::vec(0.0f64..1.0, 2..8)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let back = stick_inverse(&stick_forward(&p).unwrap());
            for (a, b) in p.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn inverse_lands_in_simplex(s in prop::collection::vec(0.0f64..=1.0, 1..10)) {
            let p = stick_inverse(&s);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
