//! Closed-form dominance conditions for the EB, constrained EB and canonical estimators, and
//! the second-order unconditional risk difference `Δ_APR(λ)`.
//!
//! Every condition is an inequality `lhs ≥ rhs`. The explicit forms depend only on
//! `(D, Q, W, k, m, p)`; the min-over-λ forms and the necessary conditions also see `X`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::{build_basis, CanonicalDesign};
use crate::error::Result;
use crate::estimators::a_matrix_general;
use crate::linalg::{psd_sqrt, spd_inverse, sym_eig_max};
use crate::model::{BenchmarkSpec, FayHerriotModel, Projector};

/// Relative slack allowed when comparing `lhs` with `rhs`.
pub const VERDICT_RTOL: f64 = 1e-10;

const GRID_POINTS: usize = 400;
const GRID_LO: f64 = 1e-4;
const GRID_HI: f64 = 1e4;
const GOLDEN_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    SufficientConditional,
    SufficientUnconditionalApprox,
    NecessaryUnconditionalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// Minimizing λ for min-over-λ conditions.
    pub lambda_at_min: Option<f64>,
    pub kind: ConditionKind,
}

impl ConditionVerdict {
    pub fn new(
        name: impl Into<String>,
        lhs: f64,
        rhs: f64,
        kind: ConditionKind,
        lambda_at_min: Option<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: holds(lhs, rhs),
            lambda_at_min,
            kind,
        }
    }

    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }

    /// `'+'` when satisfied, `'-'` otherwise, as in a printed condition table.
    pub fn mark(&self) -> char {
        if self.satisfied {
            '+'
        } else {
            '-'
        }
    }
}

impl fmt::Display for ConditionVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({:.6} vs {:.6})",
            self.name,
            self.mark(),
            self.lhs,
            self.rhs
        )
    }
}

/// `lhs ≥ rhs` up to [`VERDICT_RTOL`].
pub fn holds(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - VERDICT_RTOL * rhs.abs().max(1.0)
}

/// λ = 0 followed by 400 log-spaced points on `[1e-4, 1e4]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi) = (GRID_LO.ln(), GRID_HI.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    std::iter::once(0.0)
        .chain((0..GRID_POINTS).map(|i| (lo + step * i as f64).exp()))
        .collect()
}

fn loss_for(spec: &BenchmarkSpec, use_qw: bool) -> Result<DMatrix<f64>> {
    if use_qw {
        Ok(Projector::new(spec)?.q_w)
    } else {
        Ok(spec.q().clone())
    }
}

/// `diag(a) · L · diag(b)`.
fn scale_both(a: &DVector<f64>, l: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| a[i] * l[(i, j)] * b[j])
}

fn trace_diag_weighted(l: &DMatrix<f64>, w: impl Fn(usize) -> f64) -> f64 {
    (0..l.nrows()).map(|i| w(i) * l[(i, i)]).sum()
}

/// `max{tr[D²L]/(d₁ Chmax(DL)), d_k tr[DL]/Chmax(D²L)}`.
fn explicit_lhs(d: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let d1 = d.max();
    let dk = d.min();
    let root = d.map(f64::sqrt);
    let ch_dl = sym_eig_max(&scale_both(&root, l, &root));
    let ch_d2l = sym_eig_max(&scale_both(d, l, d));
    let tr_dl = trace_diag_weighted(l, |i| d[i]);
    let tr_d2l = trace_diag_weighted(l, |i| d[i] * d[i]);
    (tr_d2l / (d1 * ch_dl)).max(dk * tr_dl / ch_d2l)
}

/// `2k tr[D⁻²]/(tr[D⁻¹])²`.
fn variance_inflation(d: &DVector<f64>, k: usize) -> f64 {
    let s1: f64 = d.iter().map(|v| 1.0 / v).sum();
    let s2: f64 = d.iter().map(|v| 1.0 / (v * v)).sum();
    2.0 * k as f64 * s2 / (s1 * s1)
}

fn tag(base: &str, use_qw: bool) -> String {
    format!("{base}[{}]", if use_qw { "CB" } else { "EB" })
}

/// Explicit sufficient condition for improvement in conditional risk. With `use_qw` the loss
/// matrix is `Q_W` (constrained EB against the constrained direct estimator); without it the
/// loss matrix is `Q` (EB against `y`).
pub fn sr_explicit(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    use_qw: bool,
) -> Result<ConditionVerdict> {
    let l = loss_for(spec, use_qw)?;
    let (k, p) = (model.k() as f64, model.p() as f64);
    let lhs = explicit_lhs(model.d(), &l);
    let rhs = p + 2.0 + (k - p) / 2.0;
    Ok(ConditionVerdict::new(
        tag("SR", use_qw),
        lhs,
        rhs,
        ConditionKind::SufficientConditional,
        None,
    ))
}

/// Explicit sufficient condition for `Δ_APR(λ) ≤ 0` at every λ.
pub fn sr_uncond_explicit(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    use_qw: bool,
) -> Result<ConditionVerdict> {
    let l = loss_for(spec, use_qw)?;
    let lhs = explicit_lhs(model.d(), &l);
    let rhs = model.p() as f64 + variance_inflation(model.d(), model.k());
    Ok(ConditionVerdict::new(
        tag("SR^U", use_qw),
        lhs,
        rhs,
        ConditionKind::SufficientUnconditionalApprox,
        None,
    ))
}

/// Necessary condition for `Δ_APR(λ) ≤ 0`; equivalent to `Δ_APR(0) ≤ 0`.
pub fn nr_uncond(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    use_qw: bool,
) -> Result<ConditionVerdict> {
    let l = loss_for(spec, use_qw)?;
    let d = model.d();
    let x = model.x();
    let dinv = d.map(|v| 1.0 / v);
    let xtdx = x.transpose() * DMatrix::from_diagonal(&dinv) * x;
    let lhs = trace_diag_weighted(&l, |i| d[i]);
    let gls = spd_inverse(&xtdx, "X'D^-1 X")? * (x.transpose() * &l * x);
    let tr_dinv = dinv.sum();
    let rhs = gls.trace()
        + trace_diag_weighted(&l, |i| dinv[i]) * 2.0 * model.k() as f64 / (tr_dinv * tr_dinv);
    Ok(ConditionVerdict::new(
        tag("NR^U", use_qw),
        lhs,
        rhs,
        ConditionKind::NecessaryUnconditionalApprox,
        None,
    ))
}

/// `Δ_APR(λ)` with loss matrix `Q_W`.
pub fn delta_apr(model: &FayHerriotModel, spec: &BenchmarkSpec, lambda: f64) -> Result<f64> {
    delta_apr_with_loss(model, &Projector::new(spec)?.q_w, lambda)
}

/// `Δ_APR(λ) = -tr[CV⁻¹] + tr[(X'V⁻¹X)⁻¹X'V⁻¹CV⁻¹X] + tr[CV⁻³]·2k/(tr V⁻¹)²` with
/// `C = D L D` and `V = D + λI`.
pub fn delta_apr_with_loss(
    model: &FayHerriotModel,
    loss: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let d = model.d();
    let x = model.x();
    let k = model.k() as f64;
    let vinv = model.v_inv_diag(lambda);
    let c = scale_both(d, loss, d);
    let t1 = trace_diag_weighted(&c, |i| vinv[i]);
    let vx = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| vinv[i] * x[(i, j)]);
    let xtvx = x.transpose() * &vx;
    let t2 = (spd_inverse(&xtvx, "X'V^-1 X")? * (vx.transpose() * &c * &vx)).trace();
    let tr_vinv = vinv.sum();
    let t3 = trace_diag_weighted(&c, |i| vinv[i].powi(3)) * 2.0 * k / (tr_vinv * tr_vinv);
    Ok(-t1 + t2 + t3)
}

/// `tr[V⁻²(λ)]/(tr[V⁻¹(λ)])²`.
pub fn inverse_trace_ratio(d: &DVector<f64>, lambda: f64) -> f64 {
    let s1: f64 = d.iter().map(|v| 1.0 / (v + lambda)).sum();
    let s2: f64 = d.iter().map(|v| 1.0 / (v + lambda).powi(2)).sum();
    s2 / (s1 * s1)
}

/// `tr[C M]/Chmax(C M)` for symmetric PSD `C` (passed as its square root) and `M`.
fn trace_over_top(c_half: &DMatrix<f64>, c_trace_with: f64, m: &DMatrix<f64>) -> f64 {
    let top = sym_eig_max(&(c_half * m * c_half));
    if top <= 0.0 {
        f64::INFINITY
    } else {
        c_trace_with / top
    }
}

/// The ratio minimized in the conditional-risk min-form condition,
/// `tr[DLDA(λ)]/Chmax(DLDA(λ))`.
pub fn minform_ratio_a(model: &FayHerriotModel, loss: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let c = scale_both(model.d(), loss, model.d());
    ratio_a(model, &c, &psd_sqrt(&c), lambda)
}

fn ratio_a(
    model: &FayHerriotModel,
    c: &DMatrix<f64>,
    c_half: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let a = a_matrix_general(model.x(), model.d(), lambda)?;
    let tr = c.component_mul(&a).sum();
    Ok(trace_over_top(c_half, tr, &a))
}

/// The ratio minimized in the unconditional min-form condition,
/// `tr[DLDV⁻¹(λ)]/Chmax(DLDV⁻¹(λ))`.
pub fn minform_ratio_v(model: &FayHerriotModel, loss: &DMatrix<f64>, lambda: f64) -> f64 {
    let c = scale_both(model.d(), loss, model.d());
    ratio_v(model, &c, lambda)
}

fn ratio_v(model: &FayHerriotModel, c: &DMatrix<f64>, lambda: f64) -> f64 {
    let vinv = model.v_inv_diag(lambda);
    let half = vinv.map(f64::sqrt);
    let top = sym_eig_max(&scale_both(&half, c, &half));
    let tr = trace_diag_weighted(c, |i| vinv[i]);
    if top <= 0.0 {
        f64::INFINITY
    } else {
        tr / top
    }
}

/// Minimum of `f` over `grid`, refined by golden-section search between the neighbours of
/// the best grid point. Returns `(min, argmin)`.
pub fn minimize_on_grid<F>(grid: &[f64], f: F) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let values: Vec<f64> = grid.par_iter().map(|&l| f(l)).collect::<Result<_>>()?;
    let (best, &best_val) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("lambda grid must be nonempty");
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = sorted.partition_point(|&v| v < grid[best]);
    let lo = sorted[at.saturating_sub(1)];
    let hi = sorted[(at + 1).min(sorted.len() - 1)];
    let (mut min_val, mut arg) = (best_val, grid[best]);
    if hi > lo {
        let (x, v) = golden_section(lo, hi, &f)?;
        if v < min_val {
            min_val = v;
            arg = x;
        }
    }
    Ok((min_val, arg))
}

fn golden_section<F>(mut a: f64, mut b: f64, f: &F) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-12 * b.abs().max(1e-12) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Min-over-λ sufficient condition for improvement of the constrained EB estimator on the
/// constrained direct estimator in conditional risk: `min_λ ratio_A(λ) ≥ (k-p)/2 + 2`.
pub fn sr_ceb_minform(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    lambda_grid: &[f64],
) -> Result<ConditionVerdict> {
    sr_minform(model, spec, lambda_grid, true)
}

/// [`sr_ceb_minform`] with the loss matrix chosen by `use_qw`.
pub fn sr_minform(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    lambda_grid: &[f64],
    use_qw: bool,
) -> Result<ConditionVerdict> {
    let l = loss_for(spec, use_qw)?;
    let c = scale_both(model.d(), &l, model.d());
    let c_half = psd_sqrt(&c);
    let (lhs, arg) = minimize_on_grid(lambda_grid, |lam| ratio_a(model, &c, &c_half, lam))?;
    let rhs = (model.k() - model.p()) as f64 / 2.0 + 2.0;
    Ok(ConditionVerdict::new(
        tag("SR-min", use_qw),
        lhs,
        rhs,
        ConditionKind::SufficientConditional,
        Some(arg),
    ))
}

/// Min-over-λ sufficient condition for `Δ_APR(λ) ≤ 0`: `min_λ ratio_V(λ) ≥ p + 2k tr[D⁻²]/(tr D⁻¹)²`.
pub fn sr_uncond_minform(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    lambda_grid: &[f64],
) -> Result<ConditionVerdict> {
    sr_uncond_minform_with(model, spec, lambda_grid, true)
}

/// [`sr_uncond_minform`] with the loss matrix chosen by `use_qw`.
pub fn sr_uncond_minform_with(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    lambda_grid: &[f64],
    use_qw: bool,
) -> Result<ConditionVerdict> {
    let l = loss_for(spec, use_qw)?;
    let c = scale_both(model.d(), &l, model.d());
    let (lhs, arg) = minimize_on_grid(lambda_grid, |lam| Ok(ratio_v(model, &c, lam)))?;
    let rhs = model.p() as f64 + variance_inflation(model.d(), model.k());
    Ok(ConditionVerdict::new(
        tag("SR^U-min", use_qw),
        lhs,
        rhs,
        ConditionKind::SufficientUnconditionalApprox,
        Some(arg),
    ))
}

/// The three verdicts for a canonical estimator. `regressors` is `X3` for UC1 and `X4` for UC2.
///
/// The left-hand side is `max{tr[V²]/Chmax(V)², Chmin(V) tr[V]/Chmax(V)²}` with `V = V11.2`,
/// which is the constrained-EB explicit form with `D ↦ V11.2` and `Q_W ↦ I`.
pub fn uc_conditions(
    design: &CanonicalDesign,
    regressors: &DMatrix<f64>,
    k: usize,
    _m: usize,
    p: usize,
) -> Result<(ConditionVerdict, ConditionVerdict, ConditionVerdict)> {
    let ev = &design.v11_2_eig.values;
    let (lo, hi) = (ev.min(), ev.max());
    let tr: f64 = ev.sum();
    let tr2: f64 = ev.iter().map(|v| v * v).sum();
    let tri: f64 = ev.iter().map(|v| 1.0 / v).sum();
    let tri2: f64 = ev.iter().map(|v| 1.0 / (v * v)).sum();
    let (kf, pf) = (k as f64, p as f64);

    let lhs = (tr2 / (hi * hi)).max(lo * tr / (hi * hi));
    let sr = ConditionVerdict::new(
        "SR[UC]",
        lhs,
        pf + 2.0 + (kf - pf) / 2.0,
        ConditionKind::SufficientConditional,
        None,
    );
    let sr_u = ConditionVerdict::new(
        "SR^U[UC]",
        lhs,
        pf + 2.0 * kf * tri2 / (tri * tri),
        ConditionKind::SufficientUnconditionalApprox,
        None,
    );

    let vinv = design.v11_2_eig.vectors.clone()
        * DMatrix::from_diagonal(&ev.map(|v| 1.0 / v))
        * design.v11_2_eig.vectors.transpose();
    let xtvx = regressors.transpose() * &vinv * regressors;
    let gls = spd_inverse(&xtvx, "X'V11.2^-1 X")? * (regressors.transpose() * regressors);
    let nr_u = ConditionVerdict::new(
        "NR^U[UC]",
        tr,
        gls.trace() + 2.0 * kf / tri,
        ConditionKind::NecessaryUnconditionalApprox,
        None,
    );
    Ok((sr, sr_u, nr_u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConditions {
    pub sr: ConditionVerdict,
    pub sr_u: ConditionVerdict,
    pub nr_u: ConditionVerdict,
}

impl EstimatorConditions {
    fn from_tuple(
        (sr, sr_u, nr_u): (ConditionVerdict, ConditionVerdict, ConditionVerdict),
    ) -> Self {
        Self { sr, sr_u, nr_u }
    }

    pub fn marks(&self) -> [char; 3] {
        [self.sr.mark(), self.sr_u.mark(), self.nr_u.mark()]
    }
}

/// One row of the condition table: EB, CB, UC1 and UC2 verdicts for a single `(model, spec)`,
/// plus the min-over-λ variants of the EB and CB sufficient conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub eb: EstimatorConditions,
    pub cb: EstimatorConditions,
    pub uc1: EstimatorConditions,
    pub uc2: EstimatorConditions,
    pub eb_minform: [ConditionVerdict; 2],
    pub cb_minform: [ConditionVerdict; 2],
    pub model_fingerprint: String,
    pub spec_fingerprint: String,
}

impl ConditionReport {
    /// Marks in column order EB(SR, SR^U, NR^U), CB(...), UC1(...), UC2(...).
    pub fn marks(&self) -> [char; 12] {
        let mut out = ['?'; 12];
        for (i, e) in [&self.eb, &self.cb, &self.uc1, &self.uc2]
            .into_iter()
            .enumerate()
        {
            out[3 * i..3 * i + 3].copy_from_slice(&e.marks());
        }
        out
    }

    pub fn estimators(&self) -> [(&'static str, &EstimatorConditions); 4] {
        [
            ("EB", &self.eb),
            ("CB", &self.cb),
            ("UC1", &self.uc1),
            ("UC2", &self.uc2),
        ]
    }
}

/// Evaluates every condition for one `(model, spec)` pair.
pub fn condition_table(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    lambda_grid: &[f64],
) -> Result<ConditionReport> {
    let eb = EstimatorConditions {
        sr: sr_explicit(model, spec, false)?,
        sr_u: sr_uncond_explicit(model, spec, false)?,
        nr_u: nr_uncond(model, spec, false)?,
    };
    let cb = EstimatorConditions {
        sr: sr_explicit(model, spec, true)?,
        sr_u: sr_uncond_explicit(model, spec, true)?,
        nr_u: nr_uncond(model, spec, true)?,
    };
    let design = CanonicalDesign::new(model, spec, build_basis(spec)?)?;
    let (k, m, p) = (design.k, design.m, design.p);
    let uc1 = EstimatorConditions::from_tuple(uc_conditions(&design, &design.x3, k, m, p)?);
    let uc2 = EstimatorConditions::from_tuple(uc_conditions(&design, &design.x4, k, m, p)?);
    Ok(ConditionReport {
        eb,
        cb,
        uc1,
        uc2,
        eb_minform: [
            sr_minform(model, spec, lambda_grid, false)?,
            sr_uncond_minform_with(model, spec, lambda_grid, false)?,
        ],
        cb_minform: [
            sr_minform(model, spec, lambda_grid, true)?,
            sr_uncond_minform_with(model, spec, lambda_grid, true)?,
        ],
        model_fingerprint: fingerprint(&[
            model.x(),
            &DMatrix::from_column_slice(model.k(), 1, model.d().as_slice()),
        ]),
        spec_fingerprint: fingerprint(&[spec.w(), spec.q()]),
    })
}

/// SHA-256 over the shapes and little-endian bytes of the given matrices.
pub fn fingerprint(parts: &[&DMatrix<f64>]) -> String {
    let mut h = Sha256::new();
    for m in parts {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
