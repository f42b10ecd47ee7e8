//! The four commands. Each one loads and validates every input, computes all
//! results in memory, and only then writes its files.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use pgsae::data::{build_design, BasisChoice, DesignSchema, Factor, PopulationFrame, SurveyDataset};
use pgsae::gibbs::{BinomialData, GibbsConfig, PlMbModelSpec};
use pgsae::multinomial::{fit_plmm, CategoricalResponse};
use pgsae::predict::{
    binomial_cell_probs, domain_all, domain_draws, domains_by_area, multinomial_cell_probs, summarize_domains,
    write_estimates_csv, CellProbabilities, Domain, PredictMode,
};
use pgsae::rng::{derive_seed, tag};
use pgsae::simharness::{
    replicate_sample, run_simulation, survey_from_sample, write_domain_scores_csv, write_replicate_log_csv, write_scoreboard_csv, write_timings_csv,
    Estimator, SimBasis, SimDesign, SyntheticPopulation,
};
use pgsae::vb::{read_checkpoint, write_checkpoint, VbConfig};
use pgsae::{fit_binomial, Adjacency, BinomialFit, Engine, FitDraws};

use crate::config::{BasisName, Command, EngineName, Family, ModeName, RunConfig};
use crate::error::{CliError, CliResult, ErrorKind};
use crate::manifest::{run_hash, Staged};

/// What a command wrote.
#[derive(Debug, Clone)]
pub struct Summary {
    pub command: Command,
    pub run: String,
    pub output: PathBuf,
    pub files: Vec<String>,
}

/// Run `command` inside a worker pool sized by `threads`.
pub fn run(command: Command, cfg: &RunConfig) -> CliResult<Summary> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(CliError::validation(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::io(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Fit => cmd_fit(cfg),
        Command::Predict => cmd_predict(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Synthpop => cmd_synthpop(cfg),
    })
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::validation(format!("`{key}` is required for this command")))?;
    existing(p, key)
}

fn existing<'a>(p: &'a Path, key: &str) -> CliResult<&'a Path> {
    if !p.exists() {
        return Err(CliError::validation(format!("{key}: file {} does not exist", p.display())));
    }
    Ok(p)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))
}

fn spec(cfg: &RunConfig) -> PlMbModelSpec {
    PlMbModelSpec {
        sigma2_beta: cfg.model.sigma2_beta,
        a: cfg.model.a,
        b: cfg.model.b,
    }
}

fn engine(cfg: &RunConfig, name: EngineName, seed: u64) -> Engine {
    match name {
        EngineName::Gibbs => Engine::Gibbs(GibbsConfig {
            burnin: cfg.mcmc.burnin,
            retained: cfg.mcmc.retained,
            thin: cfg.mcmc.thin,
            seed,
            pg_truncation: cfg.mcmc.pg_truncation,
        }),
        EngineName::Vb => Engine::Vb {
            config: VbConfig {
                tol: cfg.vb.tol,
                max_iter: cfg.vb.max_iter,
            },
            draws: cfg.vb.draws,
            seed,
        },
    }
}

fn mode(m: ModeName) -> PredictMode {
    match m {
        ModeName::Expected => PredictMode::Expected,
        ModeName::Sampled => PredictMode::Sampled,
    }
}

fn engine_label(e: EngineName) -> &'static str {
    match e {
        EngineName::Gibbs => "gibbs",
        EngineName::Vb => "vb",
    }
}

fn union_sorted<'a>(a: impl IntoIterator<Item = &'a String>, b: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    a.into_iter().chain(b).cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Widen the survey registries with the population frame's levels and areas.
fn widen_registries(data: SurveyDataset, frame: &PopulationFrame) -> CliResult<SurveyDataset> {
    let (frame_factors, frame_areas) = frame.registries()?;
    let missing: Vec<&str> = data
        .factors()
        .iter()
        .filter(|f| !frame_factors.iter().any(|g| g.name == f.name))
        .map(|f| f.name.as_str())
        .collect();
    let extra: Vec<&str> = frame_factors
        .iter()
        .filter(|g| !data.factors().iter().any(|f| f.name == g.name))
        .map(|g| g.name.as_str())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::validation(format!(
            "population covariates do not match the survey; missing: [{}], unexpected: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let factors = data
        .factors()
        .iter()
        .map(|f| {
            let g = frame_factors.iter().find(|g| g.name == f.name).expect("checked above");
            Factor::new(f.name.clone(), union_sorted(&f.levels, &g.levels))
        })
        .collect::<pgsae::Result<Vec<_>>>()?;
    let areas = union_sorted(data.areas(), &frame_areas);
    Ok(data.with_registries(factors, areas)?)
}

fn basis(cfg: &RunConfig, areas: &[String]) -> CliResult<BasisChoice> {
    Ok(match cfg.model.basis {
        BasisName::None => BasisChoice::None,
        BasisName::Incidence => BasisChoice::AreaIncidence,
        BasisName::Eigen => {
            let path = require(&cfg.data.adjacency, "data.adjacency")?;
            let adjacency = Adjacency::read_csv(open(path)?, areas).map_err(CliError::context(path.display()))?;
            BasisChoice::Eigenbasis {
                rank: cfg.model.rank,
                adjacency,
            }
        }
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pgsae::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn vb_diagnostics(fit: &BinomialFit) -> Value {
    match &fit.variational {
        Some(p) => json!({"iterations": p.iterations, "converged": p.converged, "last_mean_change": p.last_mean_change}),
        None => Value::Null,
    }
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<Summary> {
    let run = run_hash(cfg, Command::Fit);
    let survey_path = require(&cfg.data.survey, "data.survey")?;
    let mut data = SurveyDataset::read_csv(open(survey_path)?).map_err(CliError::context(survey_path.display()))?;
    if let Some(p) = &cfg.data.population {
        let p = existing(p, "data.population")?;
        let frame = PopulationFrame::read_csv(open(p)?).map_err(CliError::context(p.display()))?;
        data = widen_registries(data, &frame)?;
    }
    let choice = basis(cfg, data.areas())?;
    let design = build_design(&data, &choice).map_err(CliError::context("design"))?;
    let spec = spec(cfg);
    let eng = engine(cfg, cfg.model.engine, derive_seed(cfg.seed, &[tag::ENGINE]));

    let mut staged = Staged::new(&run);
    staged.json("schema.json", json!({"run": run, "schema": design.schema}))?;
    let start = Instant::now();
    let (details, fits) = match cfg.model.family {
        Family::Binomial => {
            let y: Vec<f64> = data.units().iter().map(|u| u.response as f64).collect();
            let n: Vec<f64> = data.units().iter().map(|u| u.trials as f64).collect();
            let bd = BinomialData::from_design(&design, y, n).map_err(CliError::context(survey_path.display()))?;
            let fit = fit_binomial(&spec, &bd, &eng).map_err(CliError::context("fit"))?;
            (json!({"vb": vb_diagnostics(&fit)}), vec![("draws.csv".to_string(), "vb_checkpoint.bin".to_string(), fit)])
        }
        Family::Multinomial => {
            let (responses, labels) = categorical_responses(cfg, &data)?;
            let fit = fit_plmm(&design, &responses, labels.clone(), &spec, &eng).map_err(CliError::context("fit"))?;
            let stick_info: Vec<Value> = fit
                .sticks
                .iter()
                .zip(&fit.stick_units)
                .enumerate()
                .map(|(k, (s, n))| json!({"stick": k + 1, "units": n, "draws": format!("draws_stick{}.csv", k + 1), "vb": vb_diagnostics(s)}))
                .collect();
            staged.json("categories.json", json!({"run": run, "categories": labels, "sticks": stick_info}))?;
            let files = fit
                .sticks
                .into_iter()
                .enumerate()
                .map(|(k, s)| (format!("draws_stick{}.csv", k + 1), format!("vb_checkpoint_stick{}.bin", k + 1), s))
                .collect();
            (json!({"categories": labels.len()}), files)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let mut n_draws = 0;
    for (draws_name, ckpt_name, fit) in &fits {
        n_draws = fit.draws.len();
        staged.bytes(draws_name, csv_bytes(|b| fit.draws.write_csv(b, Some(&run)))?);
        if let Some(post) = &fit.variational {
            staged.bytes(ckpt_name, csv_bytes(|b| write_checkpoint(post, b))?);
        }
    }
    let manifest = json!({
        "command": "fit",
        "engine": engine_label(cfg.model.engine),
        "family": match cfg.model.family { Family::Binomial => "binomial", Family::Multinomial => "multinomial" },
        "n_units": data.len(),
        "q": design.schema.q(),
        "r": design.schema.r(),
        "draws": n_draws,
        "details": details,
    });
    staged.finish(cfg, Command::Fit, manifest, json!({"fit_seconds": seconds}))
}

fn categorical_responses(cfg: &RunConfig, data: &SurveyDataset) -> CliResult<(Vec<CategoricalResponse>, Vec<String>)> {
    if let Some(u) = data.units().iter().find(|u| u.trials != 1) {
        return Err(CliError::validation(format!(
            "multinomial responses are category labels with trials = 1; unit `{}` has trials = {}",
            u.id, u.trials
        )));
    }
    let max_label = data.units().iter().map(|u| u.response as usize).max().unwrap_or(0);
    let k = cfg.model.categories.unwrap_or(max_label.max(2));
    let responses = data
        .units()
        .iter()
        .map(|u| CategoricalResponse::from_label(u.response, k).map_err(CliError::context(format!("unit `{}`", u.id))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((responses, (1..=k).map(|c| c.to_string()).collect()))
}

fn read_json(path: &Path) -> CliResult<Value> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn read_draws(dir: &Path, name: &str, engine: &'static str) -> CliResult<FitDraws> {
    let path = dir.join(name);
    FitDraws::read_csv(open(&path)?, engine).map_err(CliError::context(path.display()))
}

pub fn cmd_predict(cfg: &RunConfig) -> CliResult<Summary> {
    let run = run_hash(cfg, Command::Predict);
    let fit_dir = cfg.data.fit.clone().unwrap_or_else(|| cfg.output.clone());
    let manifest_path = fit_dir.join("fit_manifest.json");
    if !manifest_path.exists() {
        return Err(CliError::validation(format!("no fit artifacts in {}", fit_dir.display())));
    }
    let fit_manifest = read_json(&manifest_path)?;
    let schema_doc = read_json(&fit_dir.join("schema.json"))?;
    let schema: DesignSchema = serde_json::from_value(schema_doc["schema"].clone())
        .map_err(|e| CliError::validation(format!("schema.json: {e}")))?;
    let pop_path = require(&cfg.data.population, "data.population")?;
    let frame = PopulationFrame::read_csv(open(pop_path)?).map_err(CliError::context(pop_path.display()))?;
    let frame = frame.aligned_to(&schema).map_err(CliError::context(pop_path.display()))?;
    let engine: &'static str = if fit_manifest["details"]["engine"] == "vb" { "vb" } else { "gibbs" };

    let start = Instant::now();
    let (probs, domains): (CellProbabilities, Vec<Domain>) = if fit_manifest["details"]["family"] == "multinomial" {
        let cats = read_json(&fit_dir.join("categories.json"))?;
        let labels: Vec<String> = serde_json::from_value(cats["categories"].clone())
            .map_err(|e| CliError::validation(format!("categories.json: {e}")))?;
        let sticks = (1..labels.len())
            .map(|k| {
                Ok(BinomialFit {
                    draws: read_draws(&fit_dir, &format!("draws_stick{k}.csv"), engine)?,
                    variational: None,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let fit = pgsae::PlMmFit {
            categories: labels.clone(),
            stick_units: vec![0; sticks.len()],
            sticks,
        };
        let probs = multinomial_cell_probs(&fit, &schema, &frame).map_err(CliError::context("predict"))?;
        let mut domains = Vec::new();
        for (k, label) in labels.iter().enumerate() {
            domains.extend(domains_by_area(&frame, &schema.areas, k, &format!(":{label}")));
            domains.push(domain_all(&frame, &format!("all:{label}"), k));
        }
        (probs, domains)
    } else {
        let draws = read_draws(&fit_dir, "draws.csv", engine)?;
        let probs = binomial_cell_probs(&draws, &schema, &frame).map_err(CliError::context("predict"))?;
        let mut domains = domains_by_area(&frame, &schema.areas, 0, "");
        domains.push(domain_all(&frame, "all", 0));
        (probs, domains)
    };
    let draws = domain_draws(&probs, &frame, &domains, mode(cfg.predict.mode), derive_seed(cfg.seed, &[tag::PREDICT]))?;
    let estimates = summarize_domains(&draws, cfg.predict.level, cfg.predict.strict)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut staged = Staged::new(&run);
    staged.bytes("estimates.csv", csv_bytes(|b| write_estimates_csv(b, &estimates, Some(&run)))?);
    let flagged = estimates.iter().filter(|e| e.zero_population).count();
    let manifest = json!({
        "command": "predict",
        "fit_run": fit_manifest["run"],
        "domains": estimates.len(),
        "zero_population_domains": flagged,
        "draws": probs.n_draws,
    });
    staged.finish(cfg, Command::Predict, manifest, json!({"predict_seconds": seconds}))
}

fn load_population(cfg: &RunConfig) -> CliResult<SyntheticPopulation> {
    match &cfg.data.units {
        Some(_) => {
            let path = require(&cfg.data.units, "data.units")?;
            let mut pop = SyntheticPopulation::read_csv(open(path)?).map_err(CliError::context(path.display()))?;
            if let Some(p) = &cfg.data.adjacency {
                let p = existing(p, "data.adjacency")?;
                pop.adjacency = Some(Adjacency::read_csv(open(p)?, &pop.areas).map_err(CliError::context(p.display()))?);
            }
            Ok(pop)
        }
        None => Ok(SyntheticPopulation::generate(&cfg.synthpop.to_config(cfg.seed))?),
    }
}

/// Estimators requested by the `[sim]` block, in scoreboard order.
pub fn sim_estimators(cfg: &RunConfig) -> Vec<Estimator> {
    let mut out = Vec::new();
    if cfg.sim.direct {
        out.push(Estimator::Direct);
    }
    if cfg.sim.unweighted {
        out.push(Estimator::Unweighted);
    }
    for &e in &cfg.sim.engines {
        out.push(Estimator::Model {
            label: engine_label(e).to_string(),
            engine: engine(cfg, e, 0),
        });
    }
    if cfg.sim.oracle {
        out.push(Estimator::Oracle { offset: 0.0 });
    }
    out
}

pub fn sim_design(cfg: &RunConfig) -> CliResult<SimDesign> {
    let basis = match cfg.model.basis {
        BasisName::Incidence => SimBasis::AreaIncidence,
        BasisName::Eigen => SimBasis::Eigen(cfg.model.rank),
        BasisName::None => return Err(CliError::validation("simulate needs model.basis = incidence or eigen")),
    };
    Ok(SimDesign {
        expected_n: cfg.sim.expected_n,
        gamma: cfg.sim.gamma,
        replicates: cfg.sim.replicates,
        seed: cfg.seed,
        categories: cfg.sim.categories.iter().map(|k| k - 1).collect(),
        spec: spec(cfg),
        basis,
        predict_mode: mode(cfg.sim.mode),
        level: cfg.predict.level,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Summary> {
    let run = run_hash(cfg, Command::Simulate);
    let population = load_population(cfg)?;
    let design = sim_design(cfg)?;
    design.validate(&population)?;
    let estimators = sim_estimators(cfg);
    if estimators.is_empty() {
        return Err(CliError::validation("no estimators enabled in [sim]"));
    }
    let start = Instant::now();
    let board = run_simulation(&population, &design, &estimators)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut staged = Staged::new(&run);
    staged.bytes("scoreboard.csv", csv_bytes(|b| write_scoreboard_csv(b, &board, Some(&run)))?);
    staged.bytes("domain_scores.csv", csv_bytes(|b| write_domain_scores_csv(b, &board, Some(&run)))?);
    staged.bytes("replicate_log.csv", csv_bytes(|b| write_replicate_log_csv(b, &board, Some(&run)))?);
    staged.timing_bytes("simulate_timings.csv", csv_bytes(|b| write_timings_csv(b, &board, Some(&run)))?);
    let fraction = board.failure_fraction();
    let manifest = json!({
        "command": "simulate",
        "population_size": population.len(),
        "replicates": design.replicates,
        "estimators": estimators.iter().map(Estimator::name).collect::<Vec<_>>(),
        "failed_runs": board.failures(),
        "attempted_runs": board.attempts(),
    });
    let summary = staged.finish(cfg, Command::Simulate, manifest, json!({"simulate_seconds": seconds}))?;
    if fraction > cfg.sim.failure_threshold {
        return Err(CliError {
            kind: ErrorKind::ReplicateOverflow,
            message: format!(
                "{} of {} estimator runs failed, above the threshold of {}",
                board.failures(),
                board.attempts(),
                cfg.sim.failure_threshold
            ),
        });
    }
    Ok(summary)
}

pub fn cmd_synthpop(cfg: &RunConfig) -> CliResult<Summary> {
    let run = run_hash(cfg, Command::Synthpop);
    let pop = SyntheticPopulation::generate(&cfg.synthpop.to_config(cfg.seed))?;
    let frame = pop.frame()?;
    let mut staged = Staged::new(&run);
    staged.bytes("population_units.csv", csv_bytes(|b| pop.write_csv(b, Some(&run)))?);
    staged.bytes("population_frame.csv", csv_bytes(|b| frame.write_csv(b, Some(&run)))?);
    if let Some(adj) = &pop.adjacency {
        staged.bytes("adjacency.csv", csv_bytes(|b| adj.write_csv(b, Some(&run)))?);
    }
    let design = sim_design(cfg)?;
    design.validate(&pop)?;
    let sample = replicate_sample(&pop, &design, 0)?;
    let mut survey = survey_from_sample(&pop, &sample)?;
    if pop.categories == 2 {
        let units = survey
            .units()
            .iter()
            .cloned()
            .map(|mut u| {
                u.response = (u.response == 1) as u32;
                u
            })
            .collect();
        survey = SurveyDataset::new(units, pop.factors.clone(), pop.areas.clone())?;
    }
    staged.bytes("survey_sample.csv", csv_bytes(|b| survey.write_csv(b, Some(&run)))?);
    let mut truth = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut truth);
        w.write_record(["run", "area", "category", "share"]).map_err(csv_err)?;
        for k in 0..pop.categories {
            for (a, p) in pop.areas.iter().zip(pop.area_proportions(k)) {
                w.write_record([run.as_str(), a, &(k + 1).to_string(), &p.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    staged.bytes("truth.csv", truth);
    let manifest = json!({
        "command": "synthpop",
        "population_size": pop.len(),
        "areas": pop.areas.len(),
        "categories": pop.categories,
        "sample_size": survey.len(),
    });
    staged.finish(cfg, Command::Synthpop, manifest, Value::Null)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::io(e.to_string())
}

/// Load a VB checkpoint written by `fit`.
pub fn load_checkpoint(path: &Path) -> CliResult<pgsae::VbPosterior> {
    read_checkpoint(open(path)?).map_err(CliError::context(path.display()))
}
