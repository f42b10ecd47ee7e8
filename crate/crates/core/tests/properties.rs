use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use pgsae::data::{build_design, eigen_basis, scale_weights, Adjacency, BasisChoice, Factor, PopulationCell, PopulationFrame, SurveyDataset, SurveyUnit};
use pgsae::multinomial::{fit_plmm, logistic, multinomial_loglik, plmm_cell_probs, stick_binomial_loglik, stick_inverse, CategoricalResponse};
use pgsae::predict::{binomial_cell_probs, domain_all, domain_draws, domains_by_area, summarize_domains, PredictMode};
use pgsae::simharness::{score, Estimator, EstimatorRun, Interval, ReplicateResult};
use pgsae::{run_gibbs, sample_pg, vb_fit, BinomialData, Engine, GibbsConfig, PgParams, PlMbModelSpec, RngStream, VbConfig};

fn dataset(seed: u64, areas: usize, per_area: usize, weight_scale: f64) -> SurveyDataset {
    let mut rng = RngStream::new(seed, 0);
    let names: Vec<String> = (0..areas).map(|a| format!("a{a}")).collect();
    let levels = ["p", "q", "r"];
    let units = (0..areas * per_area)
        .map(|i| {
            let level = if i < 3 { i } else { rng.random_range(0..3usize) };
            let psi = -0.3 + 0.4 * level as f64 + 0.3 * ((i / per_area) as f64).cos();
            SurveyUnit {
                id: i.to_string(),
                response: (rng.random::<f64>() < logistic(psi)) as u32,
                trials: 1,
                weight: weight_scale * (0.5 + rng.random::<f64>()),
                area: names[i / per_area].clone(),
                covariates: vec![levels[level].into()],
            }
        })
        .collect();
    let factors = vec![Factor::new("f", levels.iter().map(|s| s.to_string()).collect()).unwrap()];
    SurveyDataset::new(units, factors, names).unwrap()
}

fn binomial(data: &SurveyDataset) -> (pgsae::DesignMatrices, BinomialData) {
    let design = build_design(data, &BasisChoice::AreaIncidence).unwrap();
    let y = data.units().iter().map(|u| u.response as f64).collect();
    let bd = BinomialData::from_design(&design, y, vec![1.0; data.len()]).unwrap();
    (design, bd)
}

fn frame_for(schema: &pgsae::DesignSchema, seed: u64, zero_cells: bool) -> PopulationFrame {
    let mut rng = RngStream::new(seed, 1);
    let mut cells = Vec::new();
    for a in &schema.areas {
        for l in &schema.factors[0].levels {
            let count = if zero_cells && rng.random::<f64>() < 0.2 { 0 } else { rng.random_range(1..500u64) };
            cells.push(PopulationCell {
                area: a.clone(),
                covariates: vec![l.clone()],
                count,
            });
        }
    }
    PopulationFrame::new(vec![schema.factors[0].name.clone()], cells).unwrap()
}

proptest! {
    #[test]
    fn scaling_is_idempotent_and_scale_free(raw in prop::collection::vec(1e-3f64..1e3, 1..60), c in 1e-3f64..1e3) {
        let once = scale_weights(&raw).unwrap();
        let twice = scale_weights(&once).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|w| w * c).collect();
        let rescaled = scale_weights(&scaled).unwrap();
        prop_assert!((once.iter().sum::<f64>() - raw.len() as f64).abs() < 1e-9);
        for i in 0..raw.len() {
            prop_assert!((once[i] - twice[i]).abs() < 1e-12);
            prop_assert!((once[i] - rescaled[i]).abs() < 1e-12 * once[i].max(1.0));
        }
    }

    #[test]
    fn design_shapes_and_dummy_roundtrip(seed in 0u64..1000, areas in 1usize..6, per_area in 3usize..12) {
        let data = dataset(seed, areas, per_area, 1.0);
        let design = build_design(&data, &BasisChoice::AreaIncidence).unwrap();
        prop_assert_eq!(design.x.nrows(), data.len());
        prop_assert_eq!(design.phi.nrows(), data.len());
        prop_assert_eq!(design.phi.ncols(), design.schema.r());
        let levels = &design.schema.factors[0].levels;
        for (i, u) in data.units().iter().enumerate() {
            prop_assert_eq!(design.x[(i, 0)], 1.0);
            let hot: Vec<usize> = (1..design.x.ncols()).filter(|&j| design.x[(i, j)] == 1.0).collect();
            let recovered = match hot.as_slice() {
                [] => levels[0].clone(),
                [j] => levels[*j].clone(),
                _ => return Err(TestCaseError::fail("more than one dummy set")),
            };
            prop_assert_eq!(&recovered, &u.covariates[0]);
        }
    }

    #[test]
    fn eigen_basis_is_orthonormal(m in 2usize..9, edges in prop::collection::vec((0usize..9, 0usize..9), 1..20), rank in 1usize..9) {
        let areas: Vec<String> = (0..m).map(|i| i.to_string()).collect();
        let edges: Vec<(String, String)> = edges
            .into_iter()
            .map(|(a, b)| (a % m, b % m))
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let adj = Adjacency::from_edges(&areas, &edges).unwrap();
        let rank = rank.min(m);
        let basis = eigen_basis(&adj.matrix, rank).unwrap();
        let gram = basis.transpose() * &basis;
        prop_assert!((gram - DMatrix::identity(rank, rank)).abs().max() < 1e-8);
    }

    #[test]
    fn pg_draws_are_deterministic_and_positive(b in 0.05f64..6.0, c in -15.0f64..15.0, seed in any::<u64>()) {
        let p = PgParams::new(b, c).unwrap();
        let mut r1 = RngStream::new(seed, 3);
        let mut r2 = RngStream::new(seed, 3);
        for _ in 0..20 {
            let (x, y) = (sample_pg(p, &mut r1), sample_pg(p, &mut r2));
            prop_assert_eq!(x.to_bits(), y.to_bits());
            prop_assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn multinomial_factors_into_sticks(raw in prop::collection::vec(1e-3f64..1.0, 2..7), draws in prop::collection::vec(0usize..7, 1..40)) {
        let k = raw.len();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut counts = vec![0u32; k];
        for d in draws {
            counts[d % k] += 1;
        }
        let z = CategoricalResponse::new(counts).unwrap();
        prop_assert_eq!(z.counts().iter().sum::<u32>(), z.trials());
        let gap = (multinomial_loglik(&z, &p) - stick_binomial_loglik(&z, &p).unwrap()).abs();
        prop_assert!(gap < 1e-10);
    }

    #[test]
    fn stick_inverse_closes_on_simplex(s in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let p = stick_inverse(&s);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mse_decomposes(truth in prop::collection::vec(0.0f64..1.0, 1..5), noise in prop::collection::vec(prop::collection::vec(-0.3f64..0.3, 5), 1..8), gap in 0usize..5) {
        let m = truth.len();
        let replicates: Vec<ReplicateResult> = noise
            .iter()
            .enumerate()
            .map(|(r, e)| ReplicateResult {
                replicate: r,
                sample_size: 10,
                runs: vec![EstimatorRun {
                    outcome: Ok((0..m)
                        .map(|d| (d != gap || r % 2 == 0).then(|| Interval { estimate: truth[d] + e[d], low: truth[d] + e[d] - 0.1, high: truth[d] + e[d] + 0.1 }))
                        .collect()),
                    seconds: 0.0,
                }],
            })
            .collect();
        let ids = (0..m).map(|d| d.to_string()).collect();
        let board = score(&[Estimator::Direct], replicates, ids, truth);
        for d in &board.domains {
            prop_assert!((d.mse - d.bias2 - d.variance).abs() < 1e-12);
            prop_assert!(d.mse >= d.bias2 && d.bias2 >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gibbs_is_invariant_to_weight_scale(seed in 0u64..500, c in 0.01f64..100.0) {
        let (_, a) = binomial(&dataset(seed, 3, 15, 1.0));
        let (_, b) = binomial(&dataset(seed, 3, 15, c));
        let cfg = GibbsConfig { burnin: 20, retained: 30, seed, ..GibbsConfig::default() };
        let spec = PlMbModelSpec::default();
        let fa = run_gibbs(&spec, &a, &cfg).unwrap();
        let fb = run_gibbs(&spec, &b, &cfg).unwrap();
        prop_assert_eq!(fa.draws.len(), 30);
        for (x, y) in fa.draws.iter().zip(&fb.draws) {
            prop_assert!((&x.beta - &y.beta).abs().max() < 1e-9 * (1.0 + x.beta.abs().max()));
        }
    }

    #[test]
    fn vb_posterior_is_well_formed(seed in 0u64..500, areas in 2usize..6) {
        let (_, data) = binomial(&dataset(seed, areas, 40, 1.0));
        let spec = PlMbModelSpec::default();
        let cfg = VbConfig::default();
        let post = vb_fit(&spec, &data, &cfg).unwrap();
        prop_assert!((&post.cov - post.cov.transpose()).abs().max() < 1e-10);
        prop_assert!(post.cov_cholesky().is_ok());
        prop_assert!(post.xi.iter().all(|&x| x >= 0.0));
        prop_assert!(post.b_eta > 0.0);
        if post.converged {
            prop_assert!(post.last_mean_change < cfg.tol);
        }
        let q = data.q();
        let beta_block = post.cov.view((0, 0), (q, q)).into_owned();
        let top = beta_block.symmetric_eigenvalues().max();
        prop_assert!(top <= spec.sigma2_beta);
    }

    #[test]
    fn poststratified_estimates_are_coherent(seed in 0u64..500) {
        let data = dataset(seed, 4, 30, 1.0);
        let (design, bd) = binomial(&data);
        let cfg = GibbsConfig { burnin: 50, retained: 120, seed, ..GibbsConfig::default() };
        let fit = run_gibbs(&PlMbModelSpec::default(), &bd, &cfg).unwrap();
        let frame = frame_for(&design.schema, seed, true);
        let probs = binomial_cell_probs(&fit, &design.schema, &frame).unwrap();
        let mut domains = domains_by_area(&frame, &design.schema.areas, 0, "");
        domains.push(domain_all(&frame, "all", 0));
        let m = design.schema.areas.len();
        let mut se = Vec::new();
        for mode in [PredictMode::Expected, PredictMode::Sampled] {
            let dd = domain_draws(&probs, &frame, &domains, mode, seed).unwrap();
            let total: f64 = dd.population[..m].iter().map(|&n| n as f64).sum();
            for d in 0..probs.n_draws {
                let agg: f64 = (0..m).filter(|&a| dd.population[a] > 0).map(|a| dd.population[a] as f64 * dd.values[a][d]).sum::<f64>() / total;
                prop_assert!((agg - dd.values[m][d]).abs() < 1e-12);
            }
            let est = summarize_domains(&dd, 0.95, false).unwrap();
            for e in est.iter().filter(|e| !e.zero_population) {
                prop_assert!((0.0..=1.0).contains(&e.point));
                prop_assert!(0.0 <= e.ci_low && e.ci_low <= e.point && e.point <= e.ci_high && e.ci_high <= 1.0);
            }
            se.push(est.iter().map(|e| e.se).collect::<Vec<_>>());
        }
        // Added noise cannot lower the variance in expectation; the sample cross term
        // between draws and noise can, by at most a z²/D fraction.
        let slack = (1.0 - 16.0 / probs.n_draws as f64).sqrt();
        for (e, s) in se[0].iter().zip(&se[1]) {
            if e.is_finite() {
                prop_assert!(e * slack <= *s, "expected se {} vs sampled se {}", e, s);
            }
        }
    }

    #[test]
    fn multinomial_cell_probabilities_close(seed in 0u64..500) {
        let mut rng = RngStream::new(seed, 9);
        let base = dataset(seed, 3, 40, 1.0);
        let responses: Vec<CategoricalResponse> = (0..base.len())
            .map(|_| CategoricalResponse::from_label(rng.random_range(1..=3), 3).unwrap())
            .collect();
        let design = build_design(&base, &BasisChoice::AreaIncidence).unwrap();
        let engine = Engine::Vb { config: VbConfig::default(), draws: 40, seed };
        let labels = vec!["1".into(), "2".into(), "3".into()];
        let fit = fit_plmm(&design, &responses, labels, &PlMbModelSpec::default(), &engine).unwrap();
        prop_assert_eq!(fit.sticks.len(), 2);
        for a in &design.schema.areas {
            for l in &design.schema.factors[0].levels {
                for p in plmm_cell_probs(&fit, &design.schema, std::slice::from_ref(l), a).unwrap() {
                    prop_assert_eq!(p.len(), 3);
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
