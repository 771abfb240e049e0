use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fhbench::canonical::{build_basis, CanonicalDesign};
use fhbench::{
    eb_estimate, uc1_estimate, uc2_estimate, Benchmarker, EstimateResult, Observation, VarianceFit,
};
use nalgebra::DVector;
use serde::Serialize;
use std::sync::Arc;

use crate::failure::{CliResult, Failure};
use crate::input::{load_problem, Problem};
use crate::output::{num, write_csv, write_json, Format};

#[derive(Debug, Serialize)]
struct AreaRow<'a> {
    area_id: &'a str,
    y: f64,
    d: f64,
    direct: f64,
    eb: f64,
    cm: f64,
    ceb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    uc1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uc2: Option<f64>,
}

#[derive(Debug, Serialize)]
struct UcSummary {
    method: String,
    lambda_hat: f64,
    beta_hat: Vec<f64>,
    residual: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Summary {
    lambda_hat: f64,
    lambda_star: f64,
    converged: bool,
    iterations: u32,
    beta_hat: Vec<f64>,
    residual_cm: Vec<f64>,
    residual_ceb: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uc: Option<UcSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uc_skipped: Option<String>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    areas: Vec<AreaRow<'a>>,
    summary: Summary,
}

pub struct Estimates {
    pub eb: EstimateResult,
    pub cm: EstimateResult,
    pub ceb: EstimateResult,
    pub uc: Result<EstimateResult, String>,
}

fn require_converged(fit: &VarianceFit, what: &str) -> CliResult<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Failure::numerical(anyhow!(
            "{what}: variance solver did not converge after {} iterations (residual {:e})",
            fit.iterations,
            fit.residual
        )))
    }
}

/// Runs every estimator; UC is skipped with a reason when its canonical design is degenerate.
pub fn run(problem: &Problem) -> CliResult<Estimates> {
    let obs = Observation::for_model(&problem.model, problem.y.clone())?;
    let bench = Benchmarker::new(&problem.spec)?;
    let eb = eb_estimate(&problem.model, &obs)?;
    if let Some(fit) = &eb.fit {
        require_converged(fit, "EB")?;
    }
    let cm = bench.cm(&obs)?;
    let ceb = bench.ceb_from(&eb, &obs)?;
    let uc = match build_basis(&problem.spec)
        .and_then(|b| CanonicalDesign::new(&problem.model, &problem.spec, b))
    {
        Ok(design) => {
            let frame = Arc::new(design).frame(&problem.y)?;
            let r = if problem.spec.target().is_fixed() {
                uc2_estimate(&problem.spec, &obs, &frame)
            } else {
                uc1_estimate(&problem.spec, &obs, &frame)
            };
            match r {
                Ok(r) => {
                    if let Some(fit) = &r.fit {
                        require_converged(fit, "UC")?;
                    }
                    Ok(r)
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Err(e) => Err(e.to_string()),
    };
    Ok(Estimates { eb, cm, ceb, uc })
}

fn vec(v: &Option<DVector<f64>>) -> Vec<f64> {
    v.as_ref()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default()
}

fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.csv");
    PathBuf::from(s)
}

pub fn cmd_estimate(
    input: &Path,
    spec: &Path,
    out: Option<&Path>,
    summary_out: Option<&Path>,
    format: Format,
) -> CliResult<()> {
    let problem = load_problem(input, spec)?;
    let est = run(&problem)?;
    let fit = est.eb.fit.expect("EB always carries its variance fit");
    let fixed = problem.spec.target().is_fixed();
    let uc_mu = est.uc.as_ref().ok().map(|r| &r.mu_hat);
    if let Err(reason) = &est.uc {
        eprintln!("note: UC estimator skipped: {reason}");
    }

    let areas: Vec<AreaRow> = (0..problem.model.k())
        .map(|i| {
            let uc = uc_mu.map(|m| m[i]);
            AreaRow {
                area_id: &problem.ids[i],
                y: problem.y[i],
                d: problem.model.d()[i],
                direct: problem.y[i],
                eb: est.eb.mu_hat[i],
                cm: est.cm.mu_hat[i],
                ceb: est.ceb.mu_hat[i],
                uc1: uc.filter(|_| !fixed),
                uc2: uc.filter(|_| fixed),
            }
        })
        .collect();
    let info = Summary {
        lambda_hat: fit.lambda_hat,
        lambda_star: fit.lambda_star,
        converged: fit.converged,
        iterations: fit.iterations,
        beta_hat: vec(&est.eb.beta_hat),
        residual_cm: vec(&est.cm.constraint_residual),
        residual_ceb: vec(&est.ceb.constraint_residual),
        uc: est.uc.as_ref().ok().map(|r| UcSummary {
            method: r.method.to_string(),
            lambda_hat: r.fit.map_or(f64::NAN, |f| f.lambda_hat),
            beta_hat: vec(&r.beta_hat),
            residual: vec(&r.constraint_residual),
        }),
        uc_skipped: est.uc.as_ref().err().cloned(),
    };

    match format {
        Format::Json => write_json(
            out,
            &Report {
                areas,
                summary: info,
            },
        ),
        Format::Csv => {
            let uc_name = if fixed { "uc2" } else { "uc1" };
            let mut header = vec!["area_id", "y", "d", "direct", "eb", "cm", "ceb"];
            if uc_mu.is_some() {
                header.push(uc_name);
            }
            let rows: Vec<Vec<String>> = areas
                .iter()
                .map(|a| {
                    let mut r = vec![
                        a.area_id.to_string(),
                        num(a.y),
                        num(a.d),
                        num(a.direct),
                        num(a.eb),
                        num(a.cm),
                        num(a.ceb),
                    ];
                    if let Some(v) = a.uc1.or(a.uc2) {
                        r.push(num(v));
                    }
                    r
                })
                .collect();
            write_csv(out, &header, &rows)?;
            if let Some(path) = summary_out
                .map(Path::to_path_buf)
                .or_else(|| out.map(summary_path))
            {
                write_csv(Some(&path), &["key", "value"], &summary_rows(&info))?;
            }
            Ok(())
        }
    }
}

fn summary_rows(s: &Summary) -> Vec<Vec<String>> {
    let mut rows = vec![
        vec!["lambda_hat".to_string(), num(s.lambda_hat)],
        vec!["lambda_star".to_string(), num(s.lambda_star)],
        vec!["converged".to_string(), s.converged.to_string()],
        vec!["iterations".to_string(), s.iterations.to_string()],
    ];
    let mut push = |prefix: &str, values: &[f64]| {
        for (j, v) in values.iter().enumerate() {
            rows.push(vec![format!("{prefix}_{}", j + 1), num(*v)]);
        }
    };
    push("beta_hat", &s.beta_hat);
    push("residual_cm", &s.residual_cm);
    push("residual_ceb", &s.residual_ceb);
    if let Some(uc) = &s.uc {
        push(&format!("{}_beta_hat", uc.method), &uc.beta_hat);
        push(&format!("residual_{}", uc.method), &uc.residual);
        rows.push(vec![
            format!("{}_lambda_hat", uc.method),
            num(uc.lambda_hat),
        ]);
    }
    rows
}
