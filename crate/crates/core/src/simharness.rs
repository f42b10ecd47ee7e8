//! Design-based simulation under informative Poisson PPS sampling.
//!
//! A finite population is treated as known. Each replicate draws a Poisson
//! PPS sample whose size variable depends on the outcome, fits the requested
//! estimators to the sample, and compares their domain estimates with the
//! true finite-population proportions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;

use crate::data::{build_design, Adjacency, RUN_COLUMN, BasisChoice, Factor, PopulationCell, PopulationFrame, SurveyDataset, SurveyUnit};
use crate::engine::{fit_binomial, Engine};
use crate::error::{Error, Result};
use crate::gibbs::{BinomialData, PlMbModelSpec};
use crate::multinomial::{fit_plmm, logistic, CategoricalResponse};
use crate::predict::{binomial_cell_probs, domain_draws, multinomial_cell_probs, summarize_domains, Domain, PredictMode};
use crate::rng::{derive_seed, tag, RngStream};

const Z_975: f64 = 1.959_963_984_540_054;

/// Size variable `exp(standardize(w_raw) + γ·1[H = 0])`.
///
/// Standardization uses the population standard deviation.
pub fn size_variable(raw_weights: &[f64], indicator: &[bool], gamma: f64) -> Result<Vec<f64>> {
    if raw_weights.len() != indicator.len() {
        return Err(Error::Data("weights and indicator differ in length".into()));
    }
    if raw_weights.is_empty() {
        return Err(Error::Data("size variable needs at least one unit".into()));
    }
    if raw_weights.iter().any(|w| !w.is_finite()) || !gamma.is_finite() {
        return Err(Error::Domain("size variable inputs must be finite".into()));
    }
    let n = raw_weights.len() as f64;
    let mean = raw_weights.iter().sum::<f64>() / n;
    let var = raw_weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Domain("raw weights have zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(raw_weights
        .iter()
        .zip(indicator)
        .map(|(w, &h)| ((w - mean) / sd + if h { 0.0 } else { gamma }).exp())
        .collect())
}

/// `π_i = min(1, n·s_i / Σ s)`.
pub fn inclusion_probabilities(size: &[f64], expected_n: f64) -> Result<Vec<f64>> {
    if !(expected_n > 0.0) || !expected_n.is_finite() {
        return Err(Error::Domain(format!("expected sample size must be positive, got {expected_n}")));
    }
    if size.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain("size variable must be positive and finite".into()));
    }
    let total: f64 = size.iter().sum();
    Ok(size.iter().map(|s| (expected_n * s / total).min(1.0)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpsSample {
    /// Inclusion probability of every population unit.
    pub inclusion: Vec<f64>,
    /// Selected units in population order.
    pub indices: Vec<usize>,
    /// `1/π` for each selected unit.
    pub weights: Vec<f64>,
}

pub fn poisson_pps_sample<R: Rng + ?Sized>(size: &[f64], expected_n: f64, rng: &mut R) -> Result<PpsSample> {
    let inclusion = inclusion_probabilities(size, expected_n)?;
    Ok(pps_from_inclusion(inclusion, rng))
}

fn pps_from_inclusion<R: Rng + ?Sized>(inclusion: Vec<f64>, rng: &mut R) -> PpsSample {
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for (i, &p) in inclusion.iter().enumerate() {
        if rng.random::<f64>() < p {
            indices.push(i);
            weights.push(1.0 / p);
        }
    }
    PpsSample {
        inclusion,
        indices,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEstimate {
    pub n: usize,
    /// Hájek ratio `Σ w y / Σ w`.
    pub weighted: f64,
    pub unweighted: f64,
    /// Linearized variance of the weighted estimate under Poisson sampling.
    pub variance: f64,
}

/// Per-group direct estimates. Groups without sampled units are `None`.
pub fn direct_estimates(y: &[f64], weights: &[f64], inclusion: &[f64], group: &[usize], n_groups: usize) -> Result<Vec<Option<DirectEstimate>>> {
    let n = y.len();
    if weights.len() != n || inclusion.len() != n || group.len() != n {
        return Err(Error::Data("direct estimate inputs differ in length".into()));
    }
    if let Some(&g) = group.iter().find(|&&g| g >= n_groups) {
        return Err(Error::Data(format!("group index {g} out of range")));
    }
    let mut count = vec![0usize; n_groups];
    let mut sw = vec![0.0; n_groups];
    let mut swy = vec![0.0; n_groups];
    let mut sy = vec![0.0; n_groups];
    for i in 0..n {
        let g = group[i];
        count[g] += 1;
        sw[g] += weights[i];
        swy[g] += weights[i] * y[i];
        sy[g] += y[i];
    }
    let p_hat: Vec<f64> = (0..n_groups).map(|g| if count[g] > 0 { swy[g] / sw[g] } else { f64::NAN }).collect();
    let mut num = vec![0.0; n_groups];
    for i in 0..n {
        let g = group[i];
        num[g] += (1.0 - inclusion[i]) * weights[i].powi(2) * (y[i] - p_hat[g]).powi(2);
    }
    Ok((0..n_groups)
        .map(|g| {
            (count[g] > 0).then(|| DirectEstimate {
                n: count[g],
                weighted: p_hat[g],
                unweighted: sy[g] / count[g] as f64,
                variance: num[g] / sw[g].powi(2),
            })
        })
        .collect())
}

/// Generator settings for a synthetic finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub mean_area_size: usize,
    /// Area sizes are uniform on `mean·[1 − spread, 1 + spread]`.
    pub area_size_spread: f64,
    pub factor_levels: Vec<usize>,
    pub categories: usize,
    pub intercept: f64,
    pub effect_sd: f64,
    pub area_sd: f64,
    /// Weight of the neighbour average in each area effect, in `[0, 1]`.
    pub spatial_smoothing: f64,
    /// Spread of the area-level covariate distributions on the logit scale.
    pub covariate_heterogeneity: f64,
    /// Gamma shape of the raw weights; smaller values mean heavier skew.
    pub weight_shape: f64,
    /// Shift of `log w_raw` for units outside category 1.
    pub weight_outcome_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 6,
            mean_area_size: 667,
            area_size_spread: 0.5,
            factor_levels: vec![3, 2],
            categories: 2,
            intercept: 1.5,
            effect_sd: 0.5,
            area_sd: 0.4,
            spatial_smoothing: 0.5,
            covariate_heterogeneity: 0.5,
            weight_shape: 4.0,
            weight_outcome_shift: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.rows == 0 || self.cols == 0 {
            return bad("lattice needs at least one row and column".into());
        }
        if self.mean_area_size == 0 {
            return bad("mean area size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.area_size_spread) {
            return bad(format!("area size spread must be in [0, 1), got {}", self.area_size_spread));
        }
        if self.factor_levels.iter().any(|&l| l < 2) {
            return bad("every factor needs at least two levels".into());
        }
        if self.categories < 2 {
            return bad("need at least two outcome categories".into());
        }
        if !(0.0..=1.0).contains(&self.spatial_smoothing) {
            return bad(format!("spatial smoothing must be in [0, 1], got {}", self.spatial_smoothing));
        }
        for (name, v) in [
            ("effect_sd", self.effect_sd),
            ("area_sd", self.area_sd),
            ("covariate_heterogeneity", self.covariate_heterogeneity),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.weight_shape > 0.0) || !self.weight_shape.is_finite() {
            return bad(format!("weight shape must be positive, got {}", self.weight_shape));
        }
        if !self.intercept.is_finite() || !self.weight_outcome_shift.is_finite() {
            return bad("intercept and weight shift must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationUnit {
    pub area: usize,
    pub levels: Vec<usize>,
    /// 0-based outcome category.
    pub category: usize,
    pub raw_weight: f64,
}

/// A finite population with known outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub factors: Vec<Factor>,
    pub areas: Vec<String>,
    pub categories: usize,
    pub units: Vec<PopulationUnit>,
    pub adjacency: Option<Adjacency>,
}

fn padded(prefix: &str, i: usize, count: usize) -> String {
    let width = count.to_string().len();
    format!("{prefix}{:0width$}", i + 1)
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl SyntheticPopulation {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.rows * cfg.cols;
        let areas: Vec<String> = (0..m).map(|i| padded("area", i, m)).collect();
        let adjacency = Adjacency::lattice(&areas, cfg.rows, cfg.cols)?;
        let factors = cfg
            .factor_levels
            .iter()
            .enumerate()
            .map(|(f, &l)| Factor::new(format!("x{}", f + 1), (0..l).map(|i| padded("l", i, l)).collect()))
            .collect::<Result<Vec<_>>>()?;

        let root = derive_seed(cfg.seed, &[tag::SYNTH]);
        let mut rng = RngStream::new(root, 0);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let normal = |rng: &mut RngStream| -> f64 { std_normal.sample(rng) };

        let weight_dist = Gamma::new(cfg.weight_shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
        let sticks = cfg.categories - 1;
        let dummies: usize = cfg.factor_levels.iter().map(|l| l - 1).sum();
        let effects: Vec<Vec<f64>> = (0..sticks)
            .map(|_| (0..dummies).map(|_| cfg.effect_sd * normal(&mut rng)).collect())
            .collect();
        let area_effects: Vec<Vec<f64>> = (0..sticks)
            .map(|_| {
                let z: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
                (0..m)
                    .map(|i| {
                        let nb: Vec<usize> = (0..m).filter(|&j| adjacency.matrix[(i, j)] > 0.0).collect();
                        let avg = if nb.is_empty() {
                            z[i]
                        } else {
                            nb.iter().map(|&j| z[j]).sum::<f64>() / nb.len() as f64
                        };
                        cfg.area_sd * ((1.0 - cfg.spatial_smoothing) * z[i] + cfg.spatial_smoothing * avg)
                    })
                    .collect()
            })
            .collect();
        let covariate_probs: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|_| {
                cfg.factor_levels
                    .iter()
                    .map(|&l| {
                        let z: Vec<f64> = (0..l).map(|_| cfg.covariate_heterogeneity * normal(&mut rng)).collect();
                        softmax(&z)
                    })
                    .collect()
            })
            .collect();
        let spread = cfg.area_size_spread;
        let sizes: Vec<usize> = (0..m)
            .map(|_| {
                let f = 1.0 - spread + 2.0 * spread * rng.random::<f64>();
                ((cfg.mean_area_size as f64 * f).round() as usize).max(1)
            })
            .collect();

        let mut units = Vec::with_capacity(sizes.iter().sum());
        for a in 0..m {
            for _ in 0..sizes[a] {
                let levels: Vec<usize> = covariate_probs[a].iter().map(|p| categorical(p, &mut rng)).collect();
                let mut category = sticks;
                for k in 0..sticks {
                    let mut psi = cfg.intercept + area_effects[k][a];
                    let mut offset = 0;
                    for (f, &l) in levels.iter().enumerate() {
                        if l > 0 {
                            psi += effects[k][offset + l - 1];
                        }
                        offset += cfg.factor_levels[f] - 1;
                    }
                    if rng.random::<f64>() < logistic(psi) {
                        category = k;
                        break;
                    }
                }
                let shift = if category == 0 { 0.0 } else { cfg.weight_outcome_shift };
                let raw_weight = shift.exp() * weight_dist.sample(&mut rng);
                units.push(PopulationUnit {
                    area: a,
                    levels,
                    category,
                    raw_weight,
                });
            }
        }
        Ok(Self {
            factors,
            areas,
            categories: cfg.categories,
            units,
            adjacency: Some(adjacency),
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Poststratification cells with their counts, ordered by area then levels.
    pub fn frame(&self) -> Result<PopulationFrame> {
        let mut counts: BTreeMap<(usize, &[usize]), u64> = BTreeMap::new();
        for u in &self.units {
            *counts.entry((u.area, u.levels.as_slice())).or_default() += 1;
        }
        let cells = counts
            .into_iter()
            .map(|((a, levels), count)| PopulationCell {
                area: self.areas[a].clone(),
                covariates: self.level_names(levels),
                count,
            })
            .collect();
        PopulationFrame::new(self.factors.iter().map(|f| f.name.clone()).collect(), cells)
    }

    fn level_names(&self, levels: &[usize]) -> Vec<String> {
        self.factors.iter().zip(levels).map(|(f, &l)| f.levels[l].clone()).collect()
    }

    /// Share of each area's units in `category`.
    pub fn area_proportions(&self, category: usize) -> Vec<f64> {
        let mut hit = vec![0u64; self.areas.len()];
        let mut tot = vec![0u64; self.areas.len()];
        for u in &self.units {
            tot[u.area] += 1;
            hit[u.area] += (u.category == category) as u64;
        }
        hit.iter()
            .zip(&tot)
            .map(|(&h, &t)| if t > 0 { h as f64 / t as f64 } else { f64::NAN })
            .collect()
    }

    /// CSV with header `id,area,<factors…>,category,raw_weight`; categories are 1-based.
    pub fn write_csv<W: Write>(&self, writer: W, run: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = run.map(|_| RUN_COLUMN.to_string()).into_iter().collect();
        header.extend(["id".to_string(), "area".to_string()]);
        header.extend(self.factors.iter().map(|f| f.name.clone()));
        header.push("category".into());
        header.push("raw_weight".into());
        w.write_record(&header)?;
        let width = self.units.len().to_string().len();
        for (i, u) in self.units.iter().enumerate() {
            let mut row: Vec<String> = run.map(str::to_string).into_iter().collect();
            row.extend([format!("u{:0width$}", i + 1), self.areas[u.area].clone()]);
            row.extend(self.level_names(&u.levels));
            row.push((u.category + 1).to_string());
            row.push(u.raw_weight.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); registries are the sorted observed values.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("population file is missing required column `{name}`")))
        };
        let (id_col, area_col, cat_col, w_col) = (position("id")?, position("area")?, position("category")?, position("raw_weight")?);
        let fixed = [id_col, area_col, cat_col, w_col];
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| !fixed.contains(&c) && headers[c].trim() != RUN_COLUMN)
            .collect();
        let mut raw = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let get = |c: usize| -> Result<&str> {
                match record.get(c).map(str::trim) {
                    Some(v) if !v.is_empty() => Ok(v),
                    _ => Err(Error::Data(format!("line {line}: missing `{}`", &headers[c]))),
                }
            };
            let category: usize = get(cat_col)?
                .parse()
                .ok()
                .filter(|&c: &usize| c >= 1)
                .ok_or_else(|| Error::Data(format!("line {line}: `category` must be a positive integer")))?;
            let raw_weight: f64 = get(w_col)?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: `raw_weight` is not a number")))?;
            let levels = cov_cols.iter().map(|&c| get(c).map(str::to_string)).collect::<Result<Vec<_>>>()?;
            raw.push((get(area_col)?.to_string(), levels, category - 1, raw_weight));
        }
        if raw.is_empty() {
            return Err(Error::Data("population file has no units".into()));
        }
        let areas: Vec<String> = raw.iter().map(|r| r.0.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let factors = cov_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let levels = raw.iter().map(|r| r.1[j].clone()).collect::<std::collections::BTreeSet<_>>();
                Factor::new(headers[c].trim().to_string(), levels.into_iter().collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let categories = raw.iter().map(|r| r.2).max().unwrap_or(0) + 1;
        if categories < 2 {
            return Err(Error::Data("population outcome has a single category".into()));
        }
        let units = raw
            .into_iter()
            .map(|(a, levels, category, raw_weight)| PopulationUnit {
                area: areas.binary_search(&a).expect("registry"),
                levels: factors
                    .iter()
                    .zip(&levels)
                    .map(|(f, l)| f.index_of(l).expect("registry"))
                    .collect(),
                category,
                raw_weight,
            })
            .collect();
        Ok(Self {
            factors,
            areas,
            categories,
            units,
            adjacency: None,
        })
    }
}

/// Random-effect basis used by model-based estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimBasis {
    AreaIncidence,
    /// Leading eigenvectors of the population's adjacency.
    Eigen(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub expected_n: f64,
    pub gamma: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Categories whose area shares are estimated.
    pub categories: Vec<usize>,
    pub spec: PlMbModelSpec,
    pub basis: SimBasis,
    pub predict_mode: PredictMode,
    pub level: f64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            expected_n: 2000.0,
            gamma: 2.0,
            replicates: 25,
            seed: 0,
            categories: vec![0],
            spec: PlMbModelSpec::default(),
            basis: SimBasis::AreaIncidence,
            predict_mode: PredictMode::Sampled,
            level: 0.95,
        }
    }
}

impl SimDesign {
    pub fn validate(&self, population: &SyntheticPopulation) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Domain("need at least one replicate".into()));
        }
        if !(self.expected_n > 0.0) || self.expected_n > population.len() as f64 {
            return Err(Error::Domain(format!(
                "expected sample size {} must be in (0, {}]",
                self.expected_n,
                population.len()
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Domain("gamma must be finite".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Domain("no categories to estimate".into()));
        }
        if let Some(k) = self.categories.iter().find(|&&k| k >= population.categories) {
            return Err(Error::Domain(format!("category {} out of range", k + 1)));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(Error::Domain(format!("interval level must be in (0, 1), got {}", self.level)));
        }
        if let SimBasis::Eigen(rank) = self.basis {
            if population.adjacency.is_none() {
                return Err(Error::Domain("eigenvector basis needs an adjacency".into()));
            }
            if rank == 0 || rank > population.areas.len() {
                return Err(Error::Domain(format!("basis rank {rank} out of range")));
            }
        }
        self.spec.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Weighted (Hájek) direct estimator with a normal interval.
    Direct,
    /// Sample mean with a binomial normal interval.
    Unweighted,
    /// Pseudo-likelihood model fit and poststratified.
    Model { label: String, engine: Engine },
    /// Truth plus a fixed offset, with a zero-width interval.
    Oracle { offset: f64 },
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Direct => "direct".into(),
            Estimator::Unweighted => "unweighted".into(),
            Estimator::Model { label, .. } => label.clone(),
            Estimator::Oracle { .. } => "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    /// One entry per domain; `None` where the estimator is undefined.
    pub outcome: std::result::Result<Vec<Option<Interval>>, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub sample_size: usize,
    pub runs: Vec<EstimatorRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorScore {
    pub estimator: String,
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
    pub coverage: f64,
    pub mean_seconds: f64,
    pub replicates_ok: usize,
    pub failures: usize,
    pub domains_scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainScore {
    pub estimator: String,
    pub domain: String,
    pub truth: f64,
    pub n_estimates: usize,
    pub mean_estimate: f64,
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBoard {
    pub estimators: Vec<EstimatorScore>,
    pub domains: Vec<DomainScore>,
    pub replicates: Vec<ReplicateResult>,
    pub domain_ids: Vec<String>,
    pub truth: Vec<f64>,
}

impl ScoreBoard {
    pub fn attempts(&self) -> usize {
        self.replicates.iter().map(|r| r.runs.len()).sum()
    }

    pub fn failures(&self) -> usize {
        self.estimators.iter().map(|e| e.failures).sum()
    }

    pub fn failure_fraction(&self) -> f64 {
        let a = self.attempts();
        if a == 0 {
            0.0
        } else {
            self.failures() as f64 / a as f64
        }
    }

    pub fn estimator(&self, name: &str) -> Option<&EstimatorScore> {
        self.estimators.iter().find(|e| e.estimator == name)
    }
}

struct Prepared<'a> {
    population: &'a SyntheticPopulation,
    design: &'a SimDesign,
    inclusion: Vec<f64>,
    frame: PopulationFrame,
    domains: Vec<Domain>,
    truth: Vec<f64>,
    basis: BasisChoice,
}

/// Domain ids and true shares in scoreboard order.
pub fn simulation_domains(population: &SyntheticPopulation, categories: &[usize]) -> (Vec<String>, Vec<f64>) {
    let mut ids = Vec::new();
    let mut truth = Vec::new();
    for &k in categories {
        let props = population.area_proportions(k);
        for (a, p) in population.areas.iter().zip(props) {
            ids.push(if categories.len() == 1 { a.clone() } else { format!("{a}:{}", k + 1) });
            truth.push(p);
        }
    }
    (ids, truth)
}

fn prepare<'a>(population: &'a SyntheticPopulation, design: &'a SimDesign) -> Result<Prepared<'a>> {
    design.validate(population)?;
    let raw: Vec<f64> = population.units.iter().map(|u| u.raw_weight).collect();
    let h: Vec<bool> = population.units.iter().map(|u| u.category == 0).collect();
    let size = size_variable(&raw, &h, design.gamma)?;
    let inclusion = inclusion_probabilities(&size, design.expected_n)?;
    let frame = population.frame()?;
    let (ids, truth) = simulation_domains(population, &design.categories);
    let mut domains = Vec::new();
    let mut id_iter = ids.into_iter();
    for &k in &design.categories {
        for area in &population.areas {
            domains.push(Domain {
                id: id_iter.next().expect("one id per domain"),
                cells: frame.cells.iter().enumerate().filter(|(_, c)| &c.area == area).map(|(i, _)| i).collect(),
                category: k,
            });
        }
    }
    let basis = match design.basis {
        SimBasis::AreaIncidence => BasisChoice::AreaIncidence,
        SimBasis::Eigen(rank) => BasisChoice::Eigenbasis {
            rank,
            adjacency: population.adjacency.clone().expect("validated"),
        },
    };
    Ok(Prepared {
        population,
        design,
        inclusion,
        frame,
        domains,
        truth,
        basis,
    })
}

fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    derive_seed(seed, &[tag::REPLICATE, replicate as u64])
}

/// Sample drawn in replicate `r` of a simulation seeded with `seed`.
pub fn replicate_sample(population: &SyntheticPopulation, design: &SimDesign, replicate: usize) -> Result<PpsSample> {
    let prep = prepare(population, design)?;
    Ok(draw_sample(&prep, replicate))
}

fn draw_sample(prep: &Prepared, replicate: usize) -> PpsSample {
    let seed = derive_seed(replicate_seed(prep.design.seed, replicate), &[tag::SAMPLE]);
    pps_from_inclusion(prep.inclusion.clone(), &mut RngStream::new(seed, 0))
}

fn run_direct(prep: &Prepared, sample: &PpsSample, weighted: bool) -> Result<Vec<Option<Interval>>> {
    let pop = prep.population;
    let pi: Vec<f64> = sample.indices.iter().map(|&i| prep.inclusion[i]).collect();
    let group: Vec<usize> = sample.indices.iter().map(|&i| pop.units[i].area).collect();
    let mut out = Vec::with_capacity(prep.domains.len());
    for &k in &prep.design.categories {
        let y: Vec<f64> = sample.indices.iter().map(|&i| (pop.units[i].category == k) as u8 as f64).collect();
        let est = direct_estimates(&y, &sample.weights, &pi, &group, pop.areas.len())?;
        out.extend(est.into_iter().map(|e| {
            e.map(|e| {
                let (p, var) = if weighted {
                    (e.weighted, e.variance)
                } else {
                    (e.unweighted, e.unweighted * (1.0 - e.unweighted) / e.n as f64)
                };
                let half = Z_975 * var.sqrt();
                Interval {
                    estimate: p,
                    low: p - half,
                    high: p + half,
                }
            })
        }));
    }
    Ok(out)
}

/// Survey records for a sample; responses are 1-based category labels with weights `1/π`.
pub fn survey_from_sample(pop: &SyntheticPopulation, sample: &PpsSample) -> Result<SurveyDataset> {
    let width = pop.units.len().to_string().len();
    let units: Vec<SurveyUnit> = sample
        .indices
        .iter()
        .zip(&sample.weights)
        .map(|(&i, &w)| {
            let u = &pop.units[i];
            SurveyUnit {
                id: format!("u{:0width$}", i + 1),
                response: (u.category + 1) as u32,
                trials: 1,
                weight: w,
                area: pop.areas[u.area].clone(),
                covariates: pop.factors.iter().zip(&u.levels).map(|(f, &l)| f.levels[l].clone()).collect(),
            }
        })
        .collect();
    SurveyDataset::new(units, pop.factors.clone(), pop.areas.clone())
}

fn run_model(prep: &Prepared, sample: &PpsSample, engine: &Engine, predict_seed: u64) -> Result<Vec<Option<Interval>>> {
    let pop = prep.population;
    let dataset = survey_from_sample(pop, sample)?;
    let design = build_design(&dataset, &prep.basis)?;
    let probs = if pop.categories == 2 {
        let y = dataset.units().iter().map(|u| (u.response == 1) as u8 as f64).collect();
        let data = BinomialData::from_design(&design, y, vec![1.0; dataset.len()])?;
        let fit = fit_binomial(&prep.design.spec, &data, engine)?;
        binomial_cell_probs(&fit.draws, &design.schema, &prep.frame)?
    } else {
        let responses = dataset
            .units()
            .iter()
            .map(|u| CategoricalResponse::from_label(u.response, pop.categories))
            .collect::<Result<Vec<_>>>()?;
        let labels = (1..=pop.categories).map(|k| k.to_string()).collect();
        let fit = fit_plmm(&design, &responses, labels, &prep.design.spec, engine)?;
        multinomial_cell_probs(&fit, &design.schema, &prep.frame)?
    };
    let draws = domain_draws(&probs, &prep.frame, &prep.domains, prep.design.predict_mode, predict_seed)?;
    let summaries = summarize_domains(&draws, prep.design.level, true)?;
    Ok(summaries
        .into_iter()
        .map(|s| {
            Some(Interval {
                estimate: s.point,
                low: s.ci_low,
                high: s.ci_high,
            })
        })
        .collect())
}

fn run_replicate(prep: &Prepared, estimators: &[Estimator], replicate: usize) -> ReplicateResult {
    let sample = draw_sample(prep, replicate);
    let rep_seed = replicate_seed(prep.design.seed, replicate);
    let runs = estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let start = Instant::now();
            let outcome = if sample.indices.is_empty() {
                Err(Error::Data("empty sample".into()))
            } else {
                match est {
                    Estimator::Direct => run_direct(prep, &sample, true),
                    Estimator::Unweighted => run_direct(prep, &sample, false),
                    Estimator::Model { engine, .. } => {
                        let engine = engine.with_seed(derive_seed(rep_seed, &[tag::ENGINE, e as u64]));
                        run_model(prep, &sample, &engine, derive_seed(rep_seed, &[tag::PREDICT, e as u64]))
                    }
                    Estimator::Oracle { offset } => Ok(prep
                        .truth
                        .iter()
                        .map(|t| {
                            let v = t + offset;
                            Some(Interval {
                                estimate: v,
                                low: v,
                                high: v,
                            })
                        })
                        .collect()),
                }
            };
            EstimatorRun {
                outcome: outcome.map_err(|e| e.to_string()),
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    ReplicateResult {
        replicate,
        sample_size: sample.indices.len(),
        runs,
    }
}

/// Run all replicates and score every estimator.
pub fn run_simulation(population: &SyntheticPopulation, design: &SimDesign, estimators: &[Estimator]) -> Result<ScoreBoard> {
    if estimators.is_empty() {
        return Err(Error::Domain("no estimators requested".into()));
    }
    let prep = prepare(population, design)?;
    let replicates: Vec<ReplicateResult> = (0..design.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&prep, estimators, r))
        .collect();
    let ids: Vec<String> = prep.domains.iter().map(|d| d.id.clone()).collect();
    Ok(score(estimators, replicates, ids, prep.truth))
}

/// Aggregate replicate results into a scoreboard.
pub fn score(estimators: &[Estimator], replicates: Vec<ReplicateResult>, domain_ids: Vec<String>, truth: Vec<f64>) -> ScoreBoard {
    let nd = domain_ids.len();
    let mut est_scores = Vec::with_capacity(estimators.len());
    let mut dom_scores = Vec::new();
    for (e, est) in estimators.iter().enumerate() {
        let name = est.name();
        let mut values: Vec<Vec<Interval>> = vec![Vec::new(); nd];
        let mut ok = 0;
        let mut failures = 0;
        let mut seconds = 0.0;
        for rep in &replicates {
            let run = &rep.runs[e];
            match &run.outcome {
                Ok(per_domain) => {
                    ok += 1;
                    seconds += run.seconds;
                    for (d, v) in per_domain.iter().enumerate() {
                        if let Some(iv) = v {
                            values[d].push(*iv);
                        }
                    }
                }
                Err(_) => failures += 1,
            }
        }
        let mut sums = (0.0, 0.0, 0.0);
        let mut hits = 0usize;
        let mut total = 0usize;
        let mut scored = 0usize;
        for d in 0..nd {
            let vals = &values[d];
            let t = truth[d];
            if vals.is_empty() || t.is_nan() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().map(|v| v.estimate).sum::<f64>() / n;
            let mse = vals.iter().map(|v| (v.estimate - t).powi(2)).sum::<f64>() / n;
            let variance = vals.iter().map(|v| (v.estimate - mean).powi(2)).sum::<f64>() / n;
            let bias2 = (mean - t).powi(2);
            let h = vals.iter().filter(|v| v.low <= t && t <= v.high).count();
            hits += h;
            total += vals.len();
            scored += 1;
            sums.0 += mse;
            sums.1 += bias2;
            sums.2 += variance;
            dom_scores.push(DomainScore {
                estimator: name.clone(),
                domain: domain_ids[d].clone(),
                truth: t,
                n_estimates: vals.len(),
                mean_estimate: mean,
                mse,
                bias2,
                variance,
                coverage: h as f64 / n,
            });
        }
        let avg = |s: f64| if scored > 0 { s / scored as f64 } else { f64::NAN };
        est_scores.push(EstimatorScore {
            estimator: name,
            mse: avg(sums.0),
            bias2: avg(sums.1),
            variance: avg(sums.2),
            coverage: if total > 0 { hits as f64 / total as f64 } else { f64::NAN },
            mean_seconds: if ok > 0 { seconds / ok as f64 } else { f64::NAN },
            replicates_ok: ok,
            failures,
            domains_scored: scored,
        });
    }
    ScoreBoard {
        estimators: est_scores,
        domains: dom_scores,
        replicates,
        domain_ids,
        truth,
    }
}

fn prefixed(run: Option<&str>, mut row: Vec<String>) -> Vec<String> {
    if let Some(tag) = run {
        row.insert(0, tag.to_string());
    }
    row
}

fn header(run: Option<&str>, cols: &[&str]) -> Vec<String> {
    prefixed(run.map(|_| "run"), cols.iter().map(|c| c.to_string()).collect())
}

/// `estimator,mse,bias2,variance,coverage,replicates_ok,failures,domains_scored`.
pub fn write_scoreboard_csv<W: Write>(writer: W, board: &ScoreBoard, run: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(
        run,
        &["estimator", "mse", "bias2", "variance", "coverage", "replicates_ok", "failures", "domains_scored"],
    ))?;
    for e in &board.estimators {
        w.write_record(prefixed(
            run,
            vec![
                e.estimator.clone(),
                e.mse.to_string(),
                e.bias2.to_string(),
                e.variance.to_string(),
                e.coverage.to_string(),
                e.replicates_ok.to_string(),
                e.failures.to_string(),
                e.domains_scored.to_string(),
            ],
        ))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-domain scores in long format.
pub fn write_domain_scores_csv<W: Write>(writer: W, board: &ScoreBoard, run: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(
        run,
        &["estimator", "domain", "truth", "n_estimates", "mean_estimate", "mse", "bias2", "variance", "coverage"],
    ))?;
    for d in &board.domains {
        w.write_record(prefixed(
            run,
            vec![
                d.estimator.clone(),
                d.domain.clone(),
                d.truth.to_string(),
                d.n_estimates.to_string(),
                d.mean_estimate.to_string(),
                d.mse.to_string(),
                d.bias2.to_string(),
                d.variance.to_string(),
                d.coverage.to_string(),
            ],
        ))?;
    }
    w.flush()?;
    Ok(())
}

/// `replicate,estimator,sample_size,status,message`.
pub fn write_replicate_log_csv<W: Write>(writer: W, board: &ScoreBoard, run: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(run, &["replicate", "estimator", "sample_size", "status", "message"]))?;
    for rep in &board.replicates {
        for (e, runr) in board.estimators.iter().zip(&rep.runs) {
            let (status, msg) = match &runr.outcome {
                Ok(_) => ("ok", String::new()),
                Err(m) => ("failed", m.clone()),
            };
            w.write_record(prefixed(
                run,
                vec![
                    rep.replicate.to_string(),
                    e.estimator.clone(),
                    rep.sample_size.to_string(),
                    status.to_string(),
                    msg,
                ],
            ))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `estimator,mean_seconds,total_seconds`. Wall times vary between runs.
pub fn write_timings_csv<W: Write>(writer: W, board: &ScoreBoard, run: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(run, &["estimator", "mean_seconds", "total_seconds"]))?;
    for (e, score) in board.estimators.iter().enumerate() {
        let total: f64 = board.replicates.iter().map(|r| r.runs[e].seconds).sum();
        w.write_record(prefixed(
            run,
            vec![score.estimator.clone(), score.mean_seconds.to_string(), total.to_string()],
        ))?;
    }
    w.flush()?;
    Ok(())
}
