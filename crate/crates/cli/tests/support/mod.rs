#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use pgsae::data::{build_design, BasisChoice, DesignMatrices, Factor, SurveyDataset, SurveyUnit};
use pgsae::gibbs::BinomialData;
use pgsae::multinomial::logistic;
use pgsae::RngStream;

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut q = 0.0;
    if lambda < 1e-3 {
        return (d, 1.0);
    }
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * if k as u64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * k * k * lambda * lambda).exp();
        q += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, q.clamp(0.0, 1.0))
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Batch-means Monte Carlo standard error of the mean of a chain.
pub fn batch_means_se(chain: &[f64], batches: usize) -> f64 {
    let size = chain.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| chain[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, v) = mean_var(&means);
    (v / batches as f64).sqrt()
}

/// Batch-means standard error of the sample SD, by the delta method on the second central moment.
pub fn batch_means_sd_se(chain: &[f64], batches: usize) -> f64 {
    let (m, v) = mean_var(chain);
    let sq: Vec<f64> = chain.iter().map(|x| (x - m).powi(2)).collect();
    batch_means_se(&sq, batches) / (2.0 * v.sqrt())
}

/// Posterior mean and SD of a scalar with log density `logf`, by composite Simpson on `[lo, hi]`.
pub fn quadrature_moments(logf: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> (f64, f64) {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| logf(x)).collect();
    let top = lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, (&x, &l)) in xs.iter().zip(&lf).enumerate() {
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = c * (l - top).exp();
        z += f;
        m1 += f * x;
        m2 += f * x * x;
    }
    let mean = m1 / z;
    (mean, (m2 / z - mean * mean).sqrt())
}

/// Raw log-normal weights.
pub fn lognormal_weights(n: usize, sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    let d = LogNormal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub struct Fixture {
    pub dataset: SurveyDataset,
    pub design: DesignMatrices,
    pub data: BinomialData,
}

/// Binary survey with one three-level factor and `areas` areas of `per_area` units,
/// log-normal raw weights, and area-incidence random effects.
pub fn incidence_fixture(areas: usize, per_area: usize, seed: u64) -> Fixture {
    let mut rng = RngStream::new(seed, 0);
    let beta = [-0.4, 0.6, -0.5];
    let names: Vec<String> = (0..areas).map(|a| format!("area{:02}", a + 1)).collect();
    let levels = ["l1", "l2", "l3"];
    let raw = lognormal_weights(areas * per_area, 0.5, &mut rng);
    let mut units = Vec::with_capacity(areas * per_area);
    for i in 0..areas * per_area {
        let a = i / per_area;
        let level = rng.random_range(0..3usize);
        let effect = 0.5 * (a as f64 * 1.3).sin();
        let psi = beta[0] + if level > 0 { beta[level] } else { 0.0 } + effect;
        units.push(SurveyUnit {
            id: format!("u{i}"),
            response: (rng.random::<f64>() < logistic(psi)) as u32,
            trials: 1,
            weight: raw[i],
            area: names[a].clone(),
            covariates: vec![levels[level].to_string()],
        });
    }
    let factors = vec![Factor::new("x1", levels.iter().map(|s| s.to_string()).collect()).unwrap()];
    let dataset = SurveyDataset::new(units, factors, names).unwrap();
    let design = build_design(&dataset, &BasisChoice::AreaIncidence).unwrap();
    let y = dataset.units().iter().map(|u| u.response as f64).collect();
    let data = BinomialData::from_design(&design, y, vec![1.0; dataset.len()]).unwrap();
    Fixture { dataset, design, data }
}
