use std::path::Path;

use anyhow::anyhow;
use fhbench::conditions::delta_apr;
use fhbench::montecarlo::{Case, Setting};
use fhbench::{BenchmarkSpec, FayHerriotModel};
use serde::Serialize;

use crate::failure::{CliResult, Failure};
use crate::input::load_problem;
use crate::output::{num, write_csv, write_json, Format};
use crate::settings::SettingArgs;

#[derive(Debug, Serialize)]
struct Point {
    lambda: f64,
    delta_apr: f64,
}

/// λ = 0 followed by `points - 1` log-spaced values on `[lo, hi]`.
pub fn lambda_grid(points: usize, lo: f64, hi: f64) -> CliResult<Vec<f64>> {
    if points < 2 || !(lo > 0.0) || !(hi > lo) {
        return Err(Failure::input(anyhow!(
            "need --points >= 2 and 0 < --lambda-min < --lambda-max"
        )));
    }
    let n = points - 1;
    let step = if n > 1 {
        (hi.ln() - lo.ln()) / (n - 1) as f64
    } else {
        0.0
    };
    Ok(std::iter::once(0.0)
        .chain((0..n).map(|i| (lo.ln() + step * i as f64).exp()))
        .collect())
}

pub struct CurveOptions {
    pub points: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub fn cmd_risk_curve(
    data: Option<(&Path, &Path)>,
    settings: &SettingArgs,
    case: Case,
    opts: &CurveOptions,
    out: Option<&Path>,
    format: Format,
) -> CliResult<()> {
    let grid = lambda_grid(opts.points, opts.lambda_min, opts.lambda_max)?;
    let (model, spec): (FayHerriotModel, BenchmarkSpec) = match data {
        Some((input, spec)) => {
            let p = load_problem(input, spec)?;
            (p.model, p.spec)
        }
        None => {
            let (pattern, q) = settings.single()?;
            let setting = Setting::new(&settings.base().with(pattern, q, case))?;
            let spec = setting.spec(case).clone();
            (setting.model, spec)
        }
    };
    let curve = grid
        .iter()
        .map(|&lambda| {
            Ok(Point {
                lambda,
                delta_apr: delta_apr(&model, &spec, lambda)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    match format {
        Format::Json => write_json(out, &curve),
        Format::Csv => {
            let rows: Vec<Vec<String>> = curve
                .iter()
                .map(|p| vec![num(p.lambda), num(p.delta_apr)])
                .collect();
            write_csv(out, &["lambda", "delta_apr"], &rows)
        }
    }
}
