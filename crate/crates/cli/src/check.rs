use std::path::Path;

use fhbench::conditions::{
    condition_table, default_lambda_grid, nr_uncond, sr_explicit, sr_minform, sr_uncond_explicit,
    sr_uncond_minform_with, ConditionReport, ConditionVerdict,
};
use fhbench::montecarlo::{Case, Setting};
use fhbench::{BenchmarkSpec, Error, FayHerriotModel};
use serde::Serialize;

use crate::failure::CliResult;
use crate::input::load_problem;
use crate::output::{num, write_csv, write_json, Format};
use crate::settings::SettingArgs;

#[derive(Debug, Serialize)]
pub struct CellRow {
    pub pattern: String,
    pub q: String,
    pub estimator: &'static str,
    pub condition: &'static str,
    pub form: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub verdict: char,
    pub lambda_at_min: Option<f64>,
}

const CONDITIONS: [&str; 3] = ["SR", "SR^U", "NR^U"];

fn cell(
    pattern: &str,
    q: &str,
    estimator: &'static str,
    condition: &'static str,
    form: &'static str,
    v: &ConditionVerdict,
) -> CellRow {
    CellRow {
        pattern: pattern.to_string(),
        q: q.to_string(),
        estimator,
        condition,
        form,
        lhs: v.lhs,
        rhs: v.rhs,
        margin: v.margin(),
        verdict: v.mark(),
        lambda_at_min: v.lambda_at_min,
    }
}

fn rows_for(pattern: &str, q: &str, report: &ConditionReport, minform: bool) -> Vec<CellRow> {
    let mut rows = Vec::new();
    for (name, e) in report.estimators() {
        for (cond, v) in CONDITIONS.into_iter().zip([&e.sr, &e.sr_u, &e.nr_u]) {
            rows.push(cell(pattern, q, name, cond, "explicit", v));
        }
    }
    if minform {
        for (name, pair) in [("EB", &report.eb_minform), ("CB", &report.cb_minform)] {
            for (cond, v) in CONDITIONS.into_iter().zip(pair) {
                rows.push(cell(pattern, q, name, cond, "min-form", v));
            }
        }
    }
    rows
}

/// EB and CB rows alone, for data where the canonical UC design does not exist.
fn shrinkage_rows(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    grid: &[f64],
    minform: bool,
) -> CliResult<Vec<CellRow>> {
    let mut rows = Vec::new();
    for (name, use_qw) in [("EB", false), ("CB", true)] {
        let explicit = [
            sr_explicit(model, spec, use_qw)?,
            sr_uncond_explicit(model, spec, use_qw)?,
            nr_uncond(model, spec, use_qw)?,
        ];
        for (cond, v) in CONDITIONS.into_iter().zip(&explicit) {
            rows.push(cell("-", "-", name, cond, "explicit", v));
        }
    }
    if minform {
        for (name, use_qw) in [("EB", false), ("CB", true)] {
            let pair = [
                sr_minform(model, spec, grid, use_qw)?,
                sr_uncond_minform_with(model, spec, grid, use_qw)?,
            ];
            for (cond, v) in CONDITIONS.into_iter().zip(&pair) {
                rows.push(cell("-", "-", name, cond, "min-form", v));
            }
        }
    }
    Ok(rows)
}

pub fn cmd_check(
    data: Option<(&Path, &Path)>,
    settings: &SettingArgs,
    minform: bool,
    out: Option<&Path>,
    format: Format,
) -> CliResult<()> {
    let grid = default_lambda_grid();
    let mut rows = Vec::new();
    if let Some((input, spec)) = data {
        let problem = load_problem(input, spec)?;
        match condition_table(&problem.model, &problem.spec, &grid) {
            Ok(report) => rows.extend(rows_for("-", "-", &report, minform)),
            Err(Error::Assumption(reason)) => {
                eprintln!("note: UC conditions skipped: {reason}");
                rows.extend(shrinkage_rows(
                    &problem.model,
                    &problem.spec,
                    &grid,
                    minform,
                )?);
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        let base = settings.base();
        for (pattern, q) in settings.selection()? {
            let setting = Setting::new(&base.with(pattern, q, Case::Case2))?;
            let report = condition_table(&setting.model, setting.spec(Case::Case2), &grid)?;
            rows.extend(rows_for(
                &pattern.to_string(),
                &q.to_string(),
                &report,
                minform,
            ));
        }
    }
    match format {
        Format::Json => write_json(out, &rows),
        Format::Csv => {
            let header = [
                "pattern",
                "q",
                "estimator",
                "condition",
                "form",
                "lhs",
                "rhs",
                "margin",
                "verdict",
                "lambda_at_min",
            ];
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.pattern.clone(),
                        r.q.clone(),
                        r.estimator.to_string(),
                        r.condition.to_string(),
                        r.form.to_string(),
                        num(r.lhs),
                        num(r.rhs),
                        num(r.margin),
                        r.verdict.to_string(),
                        r.lambda_at_min.map(num).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(out, &header, &table)
        }
    }
}
