use std::path::Path;

use fhbench::montecarlo::{risk_row, Case, RiskRow};
use serde::Serialize;

use crate::failure::CliResult;
use crate::output::{num, write_csv, write_json, Format};
use crate::settings::SettingArgs;

#[derive(Debug, Serialize)]
struct Cell {
    pattern: String,
    q: String,
    trace_qd: f64,
    case: String,
    estimator: String,
    mean: f64,
    stderr: f64,
    replications: usize,
}

fn cells(row: &RiskRow, case: Option<Case>) -> impl Iterator<Item = Cell> + '_ {
    row.columns
        .iter()
        .filter(move |c| c.case.is_none() || case.is_none() || c.case == case)
        .map(|c| Cell {
            pattern: row.pattern.to_string(),
            q: row.q.to_string(),
            trace_qd: row.trace_qd,
            case: c.case.map_or("-".to_string(), |c| c.to_string()),
            estimator: c.risk.estimator.clone(),
            mean: c.risk.mean,
            stderr: c.risk.stderr,
            replications: c.risk.replications,
        })
}

pub fn cmd_simulate(
    settings: &SettingArgs,
    case: Option<Case>,
    reps: usize,
    redraw_x: bool,
    out: Option<&Path>,
    format: Format,
) -> CliResult<()> {
    let mut base = settings.base();
    base.replications = reps;
    base.redraw_x = redraw_x;
    let mut table = Vec::new();
    for (pattern, q) in settings.selection()? {
        let row = risk_row(&base.with(pattern, q, Case::Case1))?;
        table.extend(cells(&row, case));
    }
    match format {
        Format::Json => write_json(out, &table),
        Format::Csv => {
            let header = [
                "pattern",
                "q",
                "trace_qd",
                "case",
                "estimator",
                "mean",
                "stderr",
                "replications",
            ];
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|c| {
                    vec![
                        c.pattern.clone(),
                        c.q.clone(),
                        num(c.trace_qd),
                        c.case.clone(),
                        c.estimator.clone(),
                        num(c.mean),
                        num(c.stderr),
                        c.replications.to_string(),
                    ]
                })
                .collect();
            write_csv(out, &header, &rows)
        }
    }
}
