//! Posterior-predictive poststratification.
//!
//! For every posterior draw, each population cell gets a probability vector
//! over categories. A domain's value for that draw is the share of its
//! population falling in the domain's category: either the expected share
//! `Σ N_c p_c / Σ N_c`, or a share computed from cell counts drawn from
//! `Multinomial(N_c, p_c)`. The draws are then summarized per domain.

use std::io::Write;

use rand_distr::{Binomial, Distribution};

use crate::data::{DesignSchema, PopulationFrame};
use crate::draws::FitDraws;
use crate::error::{Error, Result};
use crate::multinomial::{logistic, plmm_cell_probs, PlMmFit};
use crate::rng::{derive_seed, tag, RngStream};

/// Per-draw, per-cell category probabilities.
///
/// Binomial fits use two categories: success (0) and failure (1).
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilities {
    pub n_draws: usize,
    pub n_cells: usize,
    pub n_categories: usize,
    values: Vec<f64>,
}

impl CellProbabilities {
    pub fn from_fn(
        n_draws: usize,
        n_cells: usize,
        n_categories: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Self {
        let mut values = Vec::with_capacity(n_draws * n_cells * n_categories);
        for d in 0..n_draws {
            for c in 0..n_cells {
                let p = f(d, c);
                debug_assert_eq!(p.len(), n_categories);
                values.extend(p);
            }
        }
        Self {
            n_draws,
            n_cells,
            n_categories,
            values,
        }
    }

    pub fn get(&self, draw: usize, cell: usize) -> &[f64] {
        let k = self.n_categories;
        let start = (draw * self.n_cells + cell) * k;
        &self.values[start..start + k]
    }
}

pub fn binomial_cell_probs(fit: &FitDraws, schema: &DesignSchema, frame: &PopulationFrame) -> Result<CellProbabilities> {
    let encoded = frame
        .cells
        .iter()
        .map(|c| schema.encode(&c.covariates, &c.area))
        .collect::<Result<Vec<_>>>()?;
    if fit.q() != schema.q() || fit.r() != schema.r() {
        return Err(Error::Schema(format!(
            "draws have q={}, r={} but the schema has q={}, r={}",
            fit.q(),
            fit.r(),
            schema.q(),
            schema.r()
        )));
    }
    Ok(CellProbabilities::from_fn(fit.len(), encoded.len(), 2, |d, c| {
        let draw = &fit.draws[d];
        let (x, phi) = &encoded[c];
        let mut psi = x.dot(&draw.beta);
        if !phi.is_empty() {
            psi += phi.dot(&draw.eta);
        }
        let p = logistic(psi);
        vec![p, 1.0 - p]
    }))
}

pub fn multinomial_cell_probs(fit: &PlMmFit, schema: &DesignSchema, frame: &PopulationFrame) -> Result<CellProbabilities> {
    let per_cell = frame
        .cells
        .iter()
        .map(|c| plmm_cell_probs(fit, schema, &c.covariates, &c.area))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellProbabilities::from_fn(fit.n_draws(), per_cell.len(), fit.k(), |d, c| {
        per_cell[c][d].clone()
    }))
}

/// A set of cells and the category whose population share is estimated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub id: String,
    pub cells: Vec<usize>,
    pub category: usize,
}

/// One domain per area (in `areas` order) for `category`.
pub fn domains_by_area(frame: &PopulationFrame, areas: &[String], category: usize, suffix: &str) -> Vec<Domain> {
    areas
        .iter()
        .map(|a| Domain {
            id: format!("{a}{suffix}"),
            cells: frame
                .cells
                .iter()
                .enumerate()
                .filter(|(_, c)| &c.area == a)
                .map(|(i, _)| i)
                .collect(),
            category,
        })
        .collect()
}

/// A single domain spanning every cell.
pub fn domain_all(frame: &PopulationFrame, id: &str, category: usize) -> Domain {
    Domain {
        id: id.to_string(),
        cells: (0..frame.cells.len()).collect(),
        category,
    }
}

/// Area × category domains for every category, ids `area:category`.
pub fn domains_by_area_category(frame: &PopulationFrame, areas: &[String], categories: &[String]) -> Vec<Domain> {
    categories
        .iter()
        .enumerate()
        .flat_map(|(k, label)| domains_by_area(frame, areas, k, &format!(":{label}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Population-weighted cell probabilities.
    Expected,
    /// Shares computed from multinomially drawn cell counts.
    Sampled,
}

/// Per-draw domain values. Zero-population domains hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDraws {
    pub ids: Vec<String>,
    pub population: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

pub fn domain_draws(
    probs: &CellProbabilities,
    frame: &PopulationFrame,
    domains: &[Domain],
    mode: PredictMode,
    seed: u64,
) -> Result<DomainDraws> {
    if probs.n_cells != frame.cells.len() {
        return Err(Error::Schema("cell probabilities do not match the frame".into()));
    }
    for d in domains {
        if d.category >= probs.n_categories {
            return Err(Error::Schema(format!("domain `{}` has category {} out of range", d.id, d.category)));
        }
        if let Some(&c) = d.cells.iter().find(|&&c| c >= frame.cells.len()) {
            return Err(Error::Schema(format!("domain `{}` references missing cell {c}", d.id)));
        }
    }
    let k = probs.n_categories;
    let population: Vec<u64> = domains
        .iter()
        .map(|d| d.cells.iter().map(|&c| frame.cells[c].count).sum())
        .collect();
    let mut values = vec![Vec::with_capacity(probs.n_draws); domains.len()];
    let base = derive_seed(seed, &[tag::PREDICT]);
    let mut cell_share = vec![0.0; probs.n_cells * k];
    for draw in 0..probs.n_draws {
        match mode {
            PredictMode::Expected => {
                for (c, cell) in frame.cells.iter().enumerate() {
                    let p = probs.get(draw, c);
                    for j in 0..k {
                        cell_share[c * k + j] = cell.count as f64 * p[j];
                    }
                }
            }
            PredictMode::Sampled => {
                let mut rng = RngStream::new(base, draw as u64);
                for (c, cell) in frame.cells.iter().enumerate() {
                    let counts = sample_multinomial(cell.count, probs.get(draw, c), &mut rng)?;
                    for j in 0..k {
                        cell_share[c * k + j] = counts[j] as f64;
                    }
                }
            }
        }
        for ((d, vals), &pop) in domains.iter().zip(values.iter_mut()).zip(&population) {
            if pop == 0 {
                vals.push(f64::NAN);
                continue;
            }
            let num: f64 = d.cells.iter().map(|&c| cell_share[c * k + d.category]).sum();
            vals.push(num / pop as f64);
        }
    }
    Ok(DomainDraws {
        ids: domains.iter().map(|d| d.id.clone()).collect(),
        population,
        values,
    })
}

fn sample_multinomial(n: u64, p: &[f64], rng: &mut RngStream) -> Result<Vec<u64>> {
    let mut out = vec![0; p.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (j, &pj) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == p.len() {
            out[j] = left;
            break;
        }
        let cond = if mass > 0.0 { (pj / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, cond)
            .map_err(|e| Error::Domain(format!("binomial({left}, {cond}): {e}")))?
            .sample(rng);
        out[j] = draw;
        left -= draw;
        mass -= pj;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, SD and the equal-tailed interval at `level`.
pub fn summarize_draws(draws: &[f64], level: f64) -> Result<DrawSummary> {
    if draws.is_empty() {
        return Err(Error::Data("cannot summarize zero draws".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Domain(format!("interval level must be in (0, 1), got {level}")));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    Ok(DrawSummary {
        mean,
        sd,
        ci_low: quantile_sorted(&sorted, alpha),
        ci_high: quantile_sorted(&sorted, 1.0 - alpha),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainEstimate {
    pub domain: String,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_draws: usize,
    pub zero_population: bool,
}

impl DomainEstimate {
    pub fn flags(&self) -> &'static str {
        if self.zero_population {
            "zero_population"
        } else {
            ""
        }
    }
}

/// Summarize domain draws. With `strict`, a zero-population domain is an error.
pub fn summarize_domains(draws: &DomainDraws, level: f64, strict: bool) -> Result<Vec<DomainEstimate>> {
    draws
        .ids
        .iter()
        .zip(&draws.values)
        .zip(&draws.population)
        .map(|((id, vals), &pop)| {
            if pop == 0 {
                if strict {
                    return Err(Error::Data(format!("domain `{id}` has zero population")));
                }
                return Ok(DomainEstimate {
                    domain: id.clone(),
                    point: f64::NAN,
                    se: f64::NAN,
                    ci_low: f64::NAN,
                    ci_high: f64::NAN,
                    n_draws: vals.len(),
                    zero_population: true,
                });
            }
            let s = summarize_draws(vals, level)?;
            Ok(DomainEstimate {
                domain: id.clone(),
                point: s.mean,
                se: s.sd,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
                n_draws: vals.len(),
                zero_population: false,
            })
        })
        .collect()
}

/// Draw-level aggregation followed by summaries.
pub fn poststratify(
    probs: &CellProbabilities,
    frame: &PopulationFrame,
    domains: &[Domain],
    mode: PredictMode,
    seed: u64,
    strict: bool,
) -> Result<Vec<DomainEstimate>> {
    let draws = domain_draws(probs, frame, domains, mode, seed)?;
    summarize_domains(&draws, 0.95, strict)
}

/// RFC-4180 estimates table: `domain,point,se,ci_low,ci_high,n_draws,flags`.
pub fn write_estimates_csv<W: Write>(writer: W, estimates: &[DomainEstimate], run: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["domain", "point", "se", "ci_low", "ci_high", "n_draws", "flags"];
    if run.is_some() {
        header.insert(0, "run");
    }
    w.write_record(&header)?;
    for e in estimates {
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        let mut row = vec![
            e.domain.clone(),
            fmt(e.point),
            fmt(e.se),
            fmt(e.ci_low),
            fmt(e.ci_high),
            e.n_draws.to_string(),
            e.flags().to_string(),
        ];
        if let Some(tag) = run {
            row.insert(0, tag.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
