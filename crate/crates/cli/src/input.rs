use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, Context};
use fhbench::{validate, BenchmarkSpec, FayHerriotModel, Target};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::failure::{CliResult, Failure};

/// Area-level rows of the input CSV.
#[derive(Debug, Clone)]
pub struct AreaTable {
    pub ids: Vec<String>,
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: Option<DMatrix<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Named(String),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TargetSpec {
    Named(String),
    Fixed { t0: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    q: MatrixSpec,
    target: TargetSpec,
    #[serde(default)]
    w: Option<MatrixSpec>,
}

/// Everything needed to estimate on user data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub ids: Vec<String>,
    pub y: DVector<f64>,
    pub model: FayHerriotModel,
    pub spec: BenchmarkSpec,
}

enum Column {
    Id,
    Y,
    D,
    X(usize),
    W(usize),
}

fn classify(header: &csv::StringRecord) -> CliResult<(Vec<Column>, usize, usize)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    for required in ["area_id", "y", "d"] {
        if !names.contains(&required) {
            return Err(Failure::input(anyhow!(
                "line 1: missing required column '{required}'"
            )));
        }
    }
    let mut cols = Vec::with_capacity(names.len());
    let (mut p, mut m) = (0, 0);
    for (pos, name) in names.iter().enumerate() {
        let col = match *name {
            "area_id" => Column::Id,
            "y" => Column::Y,
            "d" => Column::D,
            other => {
                let (kind, rest) = other.split_at(other.len().min(1));
                let idx: usize = rest
                    .parse()
                    .map_err(|_| Failure::input(anyhow!("line 1: unknown column '{other}'")))?;
                let next = match kind {
                    "x" => &mut p,
                    "w" => &mut m,
                    _ => return Err(Failure::input(anyhow!("line 1: unknown column '{other}'"))),
                };
                if idx != *next + 1 {
                    return Err(Failure::input(anyhow!(
                        "line 1: column '{other}' at position {} out of order (expected {kind}{})",
                        pos + 1,
                        *next + 1
                    )));
                }
                *next = idx;
                if kind == "x" {
                    Column::X(idx - 1)
                } else {
                    Column::W(idx - 1)
                }
            }
        };
        cols.push(col);
    }
    if p == 0 {
        return Err(Failure::input(anyhow!(
            "line 1: missing required column 'x1'"
        )));
    }
    Ok((cols, p, m))
}

pub fn read_areas(path: &Path) -> CliResult<AreaTable> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::input)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let (cols, p, m) = classify(&header)?;
    let mut ids = Vec::new();
    let (mut y, mut d, mut x, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line());
        let mut xr = vec![0.0; p];
        let mut wr = vec![0.0; m];
        for (col, field) in cols.iter().zip(record.iter()) {
            let name = match col {
                Column::Id => {
                    ids.push(field.to_string());
                    continue;
                }
                Column::Y => "y".to_string(),
                Column::D => "d".to_string(),
                Column::X(j) => format!("x{}", j + 1),
                Column::W(j) => format!("w{}", j + 1),
            };
            let v: f64 = field.parse().map_err(|_| {
                Failure::input(anyhow!(
                    "line {line}: column '{name}': cannot parse '{field}' as a number"
                ))
            })?;
            if !v.is_finite() {
                return Err(Failure::input(anyhow!(
                    "line {line}: column '{name}': value must be finite"
                )));
            }
            match col {
                Column::Y => y.push(v),
                Column::D => d.push(v),
                Column::X(j) => xr[*j] = v,
                Column::W(j) => wr[*j] = v,
                Column::Id => unreachable!(),
            }
        }
        x.extend(xr);
        w.extend(wr);
    }
    let k = y.len();
    if k == 0 {
        return Err(Failure::input(anyhow!("{}: no data rows", path.display())));
    }
    Ok(AreaTable {
        ids,
        y: DVector::from_vec(y),
        d: DVector::from_vec(d),
        x: DMatrix::from_row_slice(k, p, &x),
        w: (m > 0).then(|| DMatrix::from_row_slice(k, m, &w)),
    })
}

fn dense(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Failure::input(anyhow!(
            "spec: '{what}' must be a non-empty rectangular array of rows"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn named_matrix(name: &str, what: &str, d: &DVector<f64>) -> CliResult<DMatrix<f64>> {
    let k = d.len();
    match (what, name) {
        ("q", "identity") => Ok(DMatrix::identity(k, k)),
        ("q", "d-inverse") => Ok(DMatrix::from_diagonal(&d.map(|v| 1.0 / v))),
        ("w", "ones") => Ok(DMatrix::from_element(k, 1, 1.0)),
        ("w", "d-inverse") => Ok(DMatrix::from_column_slice(
            k,
            1,
            d.map(|v| 1.0 / v).as_slice(),
        )),
        ("q", other) => Err(Failure::input(anyhow!(
            "spec: unknown q '{other}' (expected identity, d-inverse or a matrix)"
        ))),
        (_, other) => Err(Failure::input(anyhow!(
            "spec: unknown w '{other}' (expected ones, d-inverse or a matrix)"
        ))),
    }
}

fn matrix(spec: &MatrixSpec, what: &str, d: &DVector<f64>) -> CliResult<DMatrix<f64>> {
    match spec {
        MatrixSpec::Named(name) => named_matrix(name, what, d),
        MatrixSpec::Dense(rows) => dense(rows, what),
    }
}

/// Reads the CSV and JSON sidecar and checks the pair is well posed (exit 3 otherwise).
pub fn load_problem(input: &Path, spec_path: &Path) -> CliResult<Problem> {
    let table = read_areas(input)?;
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read {}", spec_path.display()))
        .map_err(Failure::input)?;
    let file: SpecFile = serde_json::from_str(&text)
        .with_context(|| format!("{}: invalid benchmark spec", spec_path.display()))
        .map_err(Failure::input)?;
    let q = matrix(&file.q, "q", &table.d)?;
    let w = match (&table.w, &file.w) {
        (Some(_), Some(_)) => {
            return Err(Failure::input(anyhow!(
                "W given both as CSV columns and in the spec"
            )))
        }
        (Some(w), None) => w.clone(),
        (None, Some(s)) => matrix(s, "w", &table.d)?,
        (None, None) => {
            return Err(Failure::input(anyhow!(
                "no benchmark weights: add w1..wm columns or a 'w' entry to the spec"
            )))
        }
    };
    let target = match file.target {
        TargetSpec::Named(s) if s == "direct" => Target::WeightedDirect,
        TargetSpec::Named(s) => {
            return Err(Failure::input(anyhow!(
                "spec: unknown target '{s}' (expected \"direct\" or {{\"t0\": [...]}})"
            )))
        }
        TargetSpec::Fixed { t0 } => Target::Fixed(t0),
    };
    let model = FayHerriotModel::new(table.x, table.d)?;
    let spec = BenchmarkSpec::new(w, q, target)?;
    let report = validate(&model, &spec);
    if !report.is_valid() {
        let msgs: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(Failure::validation(anyhow!(
            "invalid model: {}",
            msgs.join("; ")
        )));
    }
    Ok(Problem {
        ids: table.ids,
        y: table.y,
        model,
        spec,
    })
}
