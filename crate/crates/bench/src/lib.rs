//! Shared fixtures for the benchmarks.

use rand::Rng;

use pgsae::data::{build_design, BasisChoice, Factor, SurveyDataset, SurveyUnit};
use pgsae::multinomial::logistic;
use pgsae::{BinomialData, RngStream};

/// Binary survey with one three-level factor over `areas` areas of `per_area` units.
pub fn binomial_fixture(areas: usize, per_area: usize, seed: u64) -> BinomialData {
    let mut rng = RngStream::new(seed, 0);
    let names: Vec<String> = (0..areas).map(|a| format!("area{a}")).collect();
    let levels = ["l1", "l2", "l3"];
    let units = (0..areas * per_area)
        .map(|i| {
            let level = i % 3;
            let psi = -0.4 + 0.5 * level as f64 + 0.5 * ((i / per_area) as f64).sin();
            SurveyUnit {
                id: i.to_string(),
                response: (rng.random::<f64>() < logistic(psi)) as u32,
                trials: 1,
                weight: 0.5 + rng.random::<f64>(),
                area: names[i / per_area].clone(),
                covariates: vec![levels[level].to_string()],
            }
        })
        .collect();
    let factors = vec![Factor::new("x1", levels.iter().map(|s| s.to_string()).collect()).expect("valid factor")];
    let data = SurveyDataset::new(units, factors, names).expect("valid dataset");
    let design = build_design(&data, &BasisChoice::AreaIncidence).expect("full-rank design");
    let y = data.units().iter().map(|u| u.response as f64).collect();
    BinomialData::from_design(&design, y, vec![1.0; data.len()]).expect("consistent data")
}
