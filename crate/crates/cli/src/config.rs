//! Run configuration: one TOML file, with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Predict,
    Simulate,
    Synthpop,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Simulate => "simulate",
            Command::Synthpop => "synthpop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub mcmc: McmcBlock,
    #[serde(default)]
    pub vb: VbBlock,
    #[serde(default)]
    pub predict: PredictBlock,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub synthpop: SynthBlock,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub survey: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    /// Directory holding fit artifacts; defaults to `output`.
    pub fit: Option<PathBuf>,
    /// Unit-level population for `simulate`; generated from `[synthpop]` when absent.
    pub units: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineName {
    Gibbs,
    Vb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Binomial,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisName {
    None,
    Incidence,
    Eigen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub engine: EngineName,
    pub family: Family,
    /// Number of categories for multinomial data; inferred from the labels when absent.
    pub categories: Option<usize>,
    pub sigma2_beta: f64,
    pub a: f64,
    pub b: f64,
    pub basis: BasisName,
    pub rank: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            engine: EngineName::Gibbs,
            family: Family::Binomial,
            categories: None,
            sigma2_beta: 1000.0,
            a: 0.5,
            b: 0.5,
            basis: BasisName::Incidence,
            rank: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcBlock {
    pub burnin: usize,
    pub retained: usize,
    pub thin: usize,
    pub pg_truncation: usize,
}

impl Default for McmcBlock {
    fn default() -> Self {
        Self {
            burnin: 1000,
            retained: 1000,
            thin: 1,
            pg_truncation: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbBlock {
    pub tol: f64,
    pub max_iter: usize,
    pub draws: usize,
}

impl Default for VbBlock {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            draws: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Expected,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictBlock {
    pub mode: ModeName,
    pub level: f64,
    /// Fail instead of flagging domains with zero population.
    pub strict: bool,
}

impl Default for PredictBlock {
    fn default() -> Self {
        Self {
            mode: ModeName::Expected,
            level: 0.95,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub expected_n: f64,
    pub gamma: f64,
    pub replicates: usize,
    pub engines: Vec<EngineName>,
    pub direct: bool,
    pub unweighted: bool,
    /// Add the truth as an estimator.
    pub oracle: bool,
    /// 1-based categories whose area shares are scored.
    pub categories: Vec<usize>,
    pub mode: ModeName,
    /// Largest tolerated fraction of failed estimator runs.
    pub failure_threshold: f64,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            expected_n: 2000.0,
            gamma: 2.0,
            replicates: 25,
            engines: vec![EngineName::Gibbs, EngineName::Vb],
            direct: true,
            unweighted: true,
            oracle: false,
            categories: vec![1],
            mode: ModeName::Sampled,
            failure_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthBlock {
    pub rows: usize,
    pub cols: usize,
    pub mean_area_size: usize,
    pub area_size_spread: f64,
    pub factor_levels: Vec<usize>,
    pub categories: usize,
    pub intercept: f64,
    pub effect_sd: f64,
    pub area_sd: f64,
    pub spatial_smoothing: f64,
    pub covariate_heterogeneity: f64,
    pub weight_shape: f64,
    pub weight_outcome_shift: f64,
    /// Generator seed; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SynthBlock {
    fn default() -> Self {
        let d = pgsae::SynthConfig::default();
        Self {
            rows: d.rows,
            cols: d.cols,
            mean_area_size: d.mean_area_size,
            area_size_spread: d.area_size_spread,
            factor_levels: d.factor_levels,
            categories: d.categories,
            intercept: d.intercept,
            effect_sd: d.effect_sd,
            area_sd: d.area_sd,
            spatial_smoothing: d.spatial_smoothing,
            covariate_heterogeneity: d.covariate_heterogeneity,
            weight_shape: d.weight_shape,
            weight_outcome_shift: d.weight_outcome_shift,
            seed: None,
        }
    }
}

impl SynthBlock {
    pub fn to_config(&self, run_seed: u64) -> pgsae::SynthConfig {
        pgsae::SynthConfig {
            rows: self.rows,
            cols: self.cols,
            mean_area_size: self.mean_area_size,
            area_size_spread: self.area_size_spread,
            factor_levels: self.factor_levels.clone(),
            categories: self.categories,
            intercept: self.intercept,
            effect_sd: self.effect_sd,
            area_sd: self.area_sd,
            spatial_smoothing: self.spatial_smoothing,
            covariate_heterogeneity: self.covariate_heterogeneity,
            weight_shape: self.weight_shape,
            weight_outcome_shift: self.weight_outcome_shift,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

/// Set the dotted `path` in a TOML table, parsing `raw` as a TOML value when possible.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::validation(format!("override key `{path}` is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("override key `{path}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides, and resolve relative paths against `base`.
    pub fn from_toml(text: &str, overrides: &[String], base: &Path) -> CliResult<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::validation(format!("config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        for p in [
            &mut self.data.survey,
            &mut self.data.population,
            &mut self.data.adjacency,
            &mut self.data.fit,
            &mut self.data.units,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Range checks that do not depend on the command.
    pub fn validate(&self) -> CliResult<()> {
        let m = &self.model;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::validation(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("model.sigma2_beta", m.sigma2_beta)?;
        positive("model.a", m.a)?;
        positive("model.b", m.b)?;
        positive("vb.tol", self.vb.tol)?;
        if m.basis == BasisName::Eigen && m.rank == 0 {
            return Err(CliError::validation("model.rank must be at least 1"));
        }
        if m.categories.is_some_and(|k| k < 2) {
            return Err(CliError::validation("model.categories must be at least 2"));
        }
        if self.mcmc.retained == 0 || self.mcmc.thin == 0 || self.mcmc.pg_truncation == 0 {
            return Err(CliError::validation("mcmc.retained, mcmc.thin and mcmc.pg_truncation must be at least 1"));
        }
        if self.vb.max_iter == 0 || self.vb.draws == 0 {
            return Err(CliError::validation("vb.max_iter and vb.draws must be at least 1"));
        }
        if !(self.predict.level > 0.0 && self.predict.level < 1.0) {
            return Err(CliError::validation(format!("predict.level must be in (0, 1), got {}", self.predict.level)));
        }
        let s = &self.sim;
        if s.replicates == 0 {
            return Err(CliError::validation("sim.replicates must be at least 1"));
        }
        positive("sim.expected_n", s.expected_n)?;
        if !s.gamma.is_finite() {
            return Err(CliError::validation("sim.gamma must be finite"));
        }
        if !(0.0..=1.0).contains(&s.failure_threshold) {
            return Err(CliError::validation("sim.failure_threshold must be in [0, 1]"));
        }
        if s.categories.is_empty() || s.categories.contains(&0) {
            return Err(CliError::validation("sim.categories must list 1-based categories"));
        }
        Ok(())
    }

    /// Canonical JSON used for hashing; the command is included.
    pub fn canonical_json(&self, command: Command) -> String {
        let mut c = self.clone();
        c.command = Some(command);
        serde_json::to_string(&c).expect("config serializes")
    }
}
