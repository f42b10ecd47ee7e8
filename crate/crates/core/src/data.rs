//! Survey ingestion, weight scaling, and design construction.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rescale survey weights to sum to the sample size: `w̃_i = n·w_i / Σ w_j`.
pub fn scale_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Data("cannot scale an empty weight vector".into()));
    }
    if let Some((i, w)) = raw.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("weight {i} must be positive and finite, got {w}")));
    }
    let n = raw.len() as f64;
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| n * w / total).collect())
}

/// Pseudo-weighted successes and trials `(y·w̃, n·w̃)`.
pub fn pseudo_counts(y: &[f64], trials: &[f64], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert!(y.len() == trials.len() && y.len() == weights.len(), "vectors must be conformable");
    let ys = y.iter().zip(weights).map(|(y, w)| y * w).collect();
    let ns = trials.iter().zip(weights).map(|(n, w)| n * w).collect();
    (ys, ns)
}

/// A categorical covariate and its ordered levels. The first level is the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if levels.is_empty() {
            return Err(Error::Data(format!("factor `{name}` has no levels")));
        }
        let unique: BTreeSet<_> = levels.iter().collect();
        if unique.len() != levels.len() {
            return Err(Error::Data(format!("factor `{name}` has duplicate levels")));
        }
        Ok(Self { name, levels })
    }

    pub fn index_of(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyUnit {
    pub id: String,
    /// Success count for binomial data, or a 1-based category label.
    pub response: u32,
    pub trials: u32,
    pub weight: f64,
    pub area: String,
    pub covariates: Vec<String>,
}

/// Sampled units together with the factor and area registries they refer to.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    units: Vec<SurveyUnit>,
    factors: Vec<Factor>,
    areas: Vec<String>,
}

/// Provenance column that readers skip.
pub const RUN_COLUMN: &str = "run";

const SURVEY_COLUMNS: [&str; 5] = ["id", "response", "trials", "weight", "area"];

impl SurveyDataset {
    pub fn new(units: Vec<SurveyUnit>, factors: Vec<Factor>, areas: Vec<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Data("survey dataset is empty".into()));
        }
        let area_set: BTreeSet<&str> = areas.iter().map(String::as_str).collect();
        if area_set.len() != areas.len() {
            return Err(Error::Data("area registry has duplicates".into()));
        }
        for u in &units {
            if u.covariates.len() != factors.len() {
                return Err(Error::Data(format!(
                    "unit `{}` has {} covariates, schema has {}",
                    u.id,
                    u.covariates.len(),
                    factors.len()
                )));
            }
            if u.trials == 0 {
                return Err(Error::Data(format!("unit `{}` has zero trials", u.id)));
            }
            if !(u.weight > 0.0) || !u.weight.is_finite() {
                return Err(Error::Domain(format!(
                    "unit `{}` has nonpositive weight {}",
                    u.id, u.weight
                )));
            }
            if !area_set.contains(u.area.as_str()) {
                return Err(Error::Schema(format!(
                    "unit `{}` is in unknown area `{}`",
                    u.id, u.area
                )));
            }
            for (f, level) in factors.iter().zip(&u.covariates) {
                if f.index_of(level).is_none() {
                    return Err(Error::Schema(format!(
                        "unit `{}` has unknown level `{level}` for `{}`",
                        u.id, f.name
                    )));
                }
            }
        }
        Ok(Self {
            units,
            factors,
            areas,
        })
    }

    /// Build a dataset whose registries are the sorted observed levels and areas.
    pub fn from_units(units: Vec<SurveyUnit>, factor_names: Vec<String>) -> Result<Self> {
        let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); factor_names.len()];
        let mut areas = BTreeSet::new();
        for u in &units {
            areas.insert(u.area.clone());
            for (set, l) in levels.iter_mut().zip(&u.covariates) {
                set.insert(l.clone());
            }
        }
        let factors = factor_names
            .into_iter()
            .zip(levels)
            .map(|(n, l)| Factor::new(n, l.into_iter().collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(units, factors, areas.into_iter().collect())
    }

    /// Parse a survey CSV with header `id,response,trials,weight,area,<covariates…>`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let mut required = [0usize; 5];
        for (slot, name) in required.iter_mut().zip(SURVEY_COLUMNS) {
            *slot = position(name)
                .ok_or_else(|| Error::Data(format!("survey file is missing required column `{name}`")))?;
        }
        let covariate_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| !required.contains(&c) && headers[c].trim() != RUN_COLUMN)
            .collect();
        let factor_names: Vec<String> = covariate_cols.iter().map(|&c| headers[c].trim().to_string()).collect();

        let mut units = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |c: usize, name: &str| -> Result<&str> {
                let v = record.get(c).map(str::trim).unwrap_or("");
                if v.is_empty() {
                    Err(Error::Data(format!("line {line}: missing value for `{name}`")))
                } else {
                    Ok(v)
                }
            };
            let parse_u32 = |c: usize, name: &str| -> Result<u32> {
                field(c, name)?
                    .parse()
                    .map_err(|_| Error::Data(format!("line {line}: `{name}` is not a nonnegative integer")))
            };
            let weight: f64 = field(required[3], "weight")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: `weight` is not a number")))?;
            let covariates = covariate_cols
                .iter()
                .zip(&factor_names)
                .map(|(&c, n)| field(c, n).map(str::to_string))
                .collect::<Result<Vec<_>>>()?;
            let unit = SurveyUnit {
                id: field(required[0], "id")?.to_string(),
                response: parse_u32(required[1], "response")?,
                trials: parse_u32(required[2], "trials")?,
                weight,
                area: field(required[4], "area")?.to_string(),
                covariates,
            };
            if !(unit.weight > 0.0) || !unit.weight.is_finite() {
                return Err(Error::Domain(format!("line {line}: weight must be positive, got {weight}")));
            }
            units.push(unit);
        }
        Self::from_units(units, factor_names)
    }

    /// Inverse of [`read_csv`](Self::read_csv).
    pub fn write_csv<W: std::io::Write>(&self, writer: W, run: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = run.map(|_| RUN_COLUMN).into_iter().collect();
        header.extend(SURVEY_COLUMNS);
        header.extend(self.factors.iter().map(|f| f.name.as_str()));
        w.write_record(&header)?;
        for u in &self.units {
            let mut row: Vec<String> = run.map(str::to_string).into_iter().collect();
            row.extend([
                u.id.clone(),
                u.response.to_string(),
                u.trials.to_string(),
                u.weight.to_string(),
                u.area.clone(),
            ]);
            row.extend(u.covariates.iter().cloned());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Replace the registries with supersets (e.g. taken from a population frame).
    pub fn with_registries(self, factors: Vec<Factor>, areas: Vec<String>) -> Result<Self> {
        let names: Vec<_> = self.factors.iter().map(|f| &f.name).collect();
        let new_names: Vec<_> = factors.iter().map(|f| &f.name).collect();
        if names != new_names {
            return Err(Error::Schema(format!(
                "covariates differ: dataset has {names:?}, registry has {new_names:?}"
            )));
        }
        Self::new(self.units, factors, areas)
    }

    pub fn units(&self) -> &[SurveyUnit] {
        &self.units
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn areas(&self) -> &[String] {
        &self.areas
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn raw_weights(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.weight).collect()
    }

    pub fn scaled_weights(&self) -> Vec<f64> {
        scale_weights(&self.raw_weights()).expect("weights validated at construction")
    }
}

/// Symmetric 0/1 area adjacency over an ordered area list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub areas: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Adjacency {
    pub fn from_edges<S: AsRef<str>>(areas: &[String], edges: &[(S, S)]) -> Result<Self> {
        let index: HashMap<&str, usize> = areas.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let m = areas.len();
        let mut matrix = DMatrix::zeros(m, m);
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let lookup = |x: &str| {
                index
                    .get(x)
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("adjacency references unknown area `{x}`")))
            };
            let (i, j) = (lookup(a)?, lookup(b)?);
            if i == j {
                return Err(Error::Data(format!("self-loop on area `{a}`")));
            }
            matrix[(i, j)] = 1.0;
            matrix[(j, i)] = 1.0;
        }
        Ok(Self {
            areas: areas.to_vec(),
            matrix,
        })
    }

    /// Parse an edge list with header `area_a,area_b`.
    pub fn read_csv<R: Read>(reader: R, areas: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("adjacency file is missing required column `{name}`")))
        };
        let (ca, cb) = (position("area_a")?, position("area_b")?);
        let mut edges = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            match (record.get(ca), record.get(cb)) {
                (Some(a), Some(b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    edges.push((a.trim().to_string(), b.trim().to_string()))
                }
                _ => return Err(Error::Data(format!("line {line}: adjacency rows need two areas"))),
            }
        }
        Self::from_edges(areas, &edges)
    }

    /// Edge list with header `area_a,area_b`, each edge once.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, run: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["area_a", "area_b"];
        if run.is_some() {
            header.insert(0, RUN_COLUMN);
        }
        w.write_record(&header)?;
        let m = self.areas.len();
        for i in 0..m {
            for j in i + 1..m {
                if self.matrix[(i, j)] != 0.0 {
                    let mut row = vec![self.areas[i].as_str(), self.areas[j].as_str()];
                    if let Some(tag) = run {
                        row.insert(0, tag);
                    }
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rectangular `rows × cols` lattice with rook neighbours, areas in row-major order.
    pub fn lattice(areas: &[String], rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != areas.len() {
            return Err(Error::Data(format!(
                "lattice {rows}×{cols} does not match {} areas",
                areas.len()
            )));
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((areas[i].as_str(), areas[i + 1].as_str()));
                }
                if r + 1 < rows {
                    edges.push((areas[i].as_str(), areas[i + cols].as_str()));
                }
            }
        }
        Self::from_edges(areas, &edges)
    }
}

/// Eigenvectors of the `rank` algebraically largest eigenvalues, as columns.
///
/// Columns are orthonormal. Each column's first entry with magnitude above
/// 1e-12 is made positive.
pub fn eigen_basis(adjacency: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let m = adjacency.nrows();
    if adjacency.ncols() != m {
        return Err(Error::Data("adjacency must be square".into()));
    }
    if rank == 0 || rank > m {
        return Err(Error::Domain(format!("basis rank must be in 1..={m}, got {rank}")));
    }
    for i in 0..m {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::Data(format!("adjacency diagonal entry {i} is nonzero")));
        }
        for j in (i + 1)..m {
            if adjacency[(i, j)] != adjacency[(j, i)] {
                return Err(Error::Data(format!("adjacency is asymmetric at ({i}, {j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(adjacency.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(m, rank);
    for (out, &src) in order.iter().take(rank).enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        basis.set_column(out, &col);
    }
    Ok(basis)
}

/// How area membership enters the random-effect design.
#[derive(Debug, Clone)]
pub enum BasisChoice {
    /// No random effects (`r = 0`).
    None,
    /// One-hot indicator per area in the registry.
    AreaIncidence,
    /// Leading adjacency eigenvectors; area order must match the registry.
    Eigenbasis { rank: usize, adjacency: Adjacency },
}

/// Everything needed to encode a new unit or population cell into design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSchema {
    pub factors: Vec<Factor>,
    pub areas: Vec<String>,
    pub column_names: Vec<String>,
    pub basis_kind: String,
    /// One basis row per area, in registry order.
    pub basis_rows: Vec<Vec<f64>>,
}

impl DesignSchema {
    pub fn q(&self) -> usize {
        self.column_names.len()
    }

    pub fn r(&self) -> usize {
        self.basis_rows.first().map_or(0, Vec::len)
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.name.as_str()).collect()
    }

    /// Fixed-effect row: intercept then reference-coded dummies.
    pub fn encode_covariates(&self, levels: &[String]) -> Result<Vec<f64>> {
        if levels.len() != self.factors.len() {
            return Err(Error::Schema(format!(
                "expected {} covariates, got {}",
                self.factors.len(),
                levels.len()
            )));
        }
        let mut row = vec![0.0; self.q()];
        row[0] = 1.0;
        let mut offset = 1;
        for (f, level) in self.factors.iter().zip(levels) {
            let idx = f.index_of(level).ok_or_else(|| {
                Error::Schema(format!("unknown level `{level}` for covariate `{}`", f.name))
            })?;
            if idx > 0 {
                row[offset + idx - 1] = 1.0;
            }
            offset += f.levels.len() - 1;
        }
        Ok(row)
    }

    /// Inverse of [`encode_covariates`](Self::encode_covariates).
    pub fn decode_covariates(&self, row: &[f64]) -> Result<Vec<String>> {
        let mut offset = 1;
        let mut out = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            let k = f.levels.len() - 1;
            let hot: Vec<usize> = (0..k).filter(|&j| row[offset + j] != 0.0).collect();
            let level = match hot.as_slice() {
                [] => &f.levels[0],
                [j] => &f.levels[j + 1],
                _ => return Err(Error::Data(format!("row has several levels set for `{}`", f.name))),
            };
            out.push(level.clone());
            offset += k;
        }
        Ok(out)
    }

    pub fn area_index(&self, area: &str) -> Result<usize> {
        self.areas
            .iter()
            .position(|a| a == area)
            .ok_or_else(|| Error::Schema(format!("unknown area `{area}`")))
    }

    pub fn phi_row(&self, area: &str) -> Result<&[f64]> {
        let i = self.area_index(area)?;
        Ok(self.basis_rows.get(i).map_or(&[][..], Vec::as_slice))
    }

    pub fn encode(&self, levels: &[String], area: &str) -> Result<(DVector<f64>, DVector<f64>)> {
        let x = DVector::from_vec(self.encode_covariates(levels)?);
        let phi = if self.r() == 0 {
            self.area_index(area)?;
            DVector::zeros(0)
        } else {
            DVector::from_column_slice(self.phi_row(area)?)
        };
        Ok((x, phi))
    }
}

/// Design matrices for the sampled units.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub schema: DesignSchema,
    pub x: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub weights: DVector<f64>,
}

pub fn build_design(data: &SurveyDataset, basis: &BasisChoice) -> Result<DesignMatrices> {
    let factors = data.factors().to_vec();
    let areas = data.areas().to_vec();
    let mut column_names = vec!["(intercept)".to_string()];
    for f in &factors {
        for l in &f.levels[1..] {
            column_names.push(format!("{}={}", f.name, l));
        }
    }
    let (basis_kind, basis_rows) = match basis {
        BasisChoice::None => ("none".to_string(), vec![Vec::new(); areas.len()]),
        BasisChoice::AreaIncidence => {
            let rows = (0..areas.len())
                .map(|i| (0..areas.len()).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            ("incidence".to_string(), rows)
        }
        BasisChoice::Eigenbasis { rank, adjacency } => {
            if adjacency.areas != areas {
                return Err(Error::Schema(
                    "adjacency area order does not match the area registry".into(),
                ));
            }
            let b = eigen_basis(&adjacency.matrix, *rank)?;
            let rows = b.row_iter().map(|r| r.iter().copied().collect()).collect();
            (format!("eigen:{rank}"), rows)
        }
    };
    let schema = DesignSchema {
        factors,
        areas,
        column_names,
        basis_kind,
        basis_rows,
    };

    let n = data.len();
    let (q, r) = (schema.q(), schema.r());
    let mut x = DMatrix::zeros(n, q);
    let mut phi = DMatrix::zeros(n, r);
    for (i, u) in data.units().iter().enumerate() {
        let (xr, pr) = schema.encode(&u.covariates, &u.area)?;
        x.set_row(i, &xr.transpose());
        if r > 0 {
            phi.set_row(i, &pr.transpose());
        }
    }
    let collinear = collinear_columns(&x);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            columns: collinear.into_iter().map(|j| schema.column_names[j].clone()).collect(),
        });
    }
    let weights = DVector::from_vec(data.scaled_weights());
    Ok(DesignMatrices {
        schema,
        x,
        phi,
        weights,
    })
}

/// Columns that lie in the span of the preceding columns (Gram–Schmidt).
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).clone_owned();
        let norm = col.norm();
        let mut res = col;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&res);
                res.axpy(-proj, b, 1.0);
            }
        }
        let rn = res.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            bad.push(j);
        } else {
            basis.push(res / rn);
        }
    }
    bad
}

/// One poststratification cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCell {
    pub area: String,
    pub covariates: Vec<String>,
    pub count: u64,
}

/// The full poststratification universe.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFrame {
    pub factor_names: Vec<String>,
    pub cells: Vec<PopulationCell>,
}

impl PopulationFrame {
    pub fn new(factor_names: Vec<String>, cells: Vec<PopulationCell>) -> Result<Self> {
        for c in &cells {
            if c.covariates.len() != factor_names.len() {
                return Err(Error::Data(format!(
                    "cell in area `{}` has {} covariates, expected {}",
                    c.area,
                    c.covariates.len(),
                    factor_names.len()
                )));
            }
        }
        Ok(Self { factor_names, cells })
    }

    /// Parse a population CSV with header `area,<covariates…>,count`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let area_col = position("area")
            .ok_or_else(|| Error::Data("population file is missing required column `area`".into()))?;
        let count_col = position("count")
            .ok_or_else(|| Error::Data("population file is missing required column `count`".into()))?;
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != area_col && c != count_col && headers[c].trim() != RUN_COLUMN)
            .collect();
        let factor_names = cov_cols.iter().map(|&c| headers[c].trim().to_string()).collect();
        let mut cells = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let get = |c: usize| -> Result<String> {
                match record.get(c).map(str::trim) {
                    Some(v) if !v.is_empty() => Ok(v.to_string()),
                    _ => Err(Error::Data(format!("line {line}: missing value in column {}", c + 1))),
                }
            };
            let count = get(count_col)?
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("line {line}: `count` must be a nonnegative integer")))?;
            cells.push(PopulationCell {
                area: get(area_col)?,
                covariates: cov_cols.iter().map(|&c| get(c)).collect::<Result<_>>()?,
                count,
            });
        }
        Self::new(factor_names, cells)
    }

    /// Reorder cell covariates to the schema's factor order, failing with the offending names.
    pub fn aligned_to(&self, schema: &DesignSchema) -> Result<Self> {
        let want = schema.factor_names();
        let missing: Vec<&str> = want.iter().copied().filter(|w| !self.factor_names.iter().any(|f| f == w)).collect();
        let extra: Vec<&str> = self
            .factor_names
            .iter()
            .map(String::as_str)
            .filter(|f| !want.contains(f))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Schema(format!(
                "population covariates do not match the fit; missing: [{}], unexpected: [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let perm: Vec<usize> = want
            .iter()
            .map(|w| self.factor_names.iter().position(|f| f == w).expect("checked above"))
            .collect();
        let cells = self
            .cells
            .iter()
            .map(|c| PopulationCell {
                area: c.area.clone(),
                covariates: perm.iter().map(|&p| c.covariates[p].clone()).collect(),
                count: c.count,
            })
            .collect();
        Ok(Self {
            factor_names: want.iter().map(|s| s.to_string()).collect(),
            cells,
        })
    }

    /// Sorted factor registries and area list observed in the frame.
    pub fn registries(&self) -> Result<(Vec<Factor>, Vec<String>)> {
        let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); self.factor_names.len()];
        let mut areas = BTreeSet::new();
        for c in &self.cells {
            areas.insert(c.area.clone());
            for (s, l) in levels.iter_mut().zip(&c.covariates) {
                s.insert(l.clone());
            }
        }
        let factors = self
            .factor_names
            .iter()
            .zip(levels)
            .map(|(n, l)| Factor::new(n.clone(), l.into_iter().collect()))
            .collect::<Result<_>>()?;
        Ok((factors, areas.into_iter().collect()))
    }

    /// CSV with header `area,<covariates…>,count`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, run: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = run.map(|_| RUN_COLUMN).into_iter().collect();
        header.push("area");
        header.extend(self.factor_names.iter().map(String::as_str));
        header.push("count");
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row: Vec<String> = run.map(str::to_string).into_iter().collect();
            row.push(c.area.clone());
            row.extend(c.covariates.iter().cloned());
            row.push(c.count.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }
}
