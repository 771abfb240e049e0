//! Simulation study: design generation, seeded draws of `(mu, y)`, and Monte Carlo estimates
//! of conditional and unconditional risks.
//!
//! Replication `r` of a setting always consumes stream `r` of the setting's key, so results do
//! not depend on how rayon schedules the work. All estimator columns and all three cases share
//! those draws.

mod rng;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::{build_basis, CanonicalDesign};
use crate::conditions::{condition_table, delta_apr, ConditionReport};
use crate::error::{Error, Result};
use crate::estimators::{eb_estimate, uc1_estimate, uc2_estimate, Benchmarker};
use crate::linalg::{numerical_rank, pairwise_sum, spd_inverse};
use crate::model::{weighted_loss, BenchmarkSpec, FayHerriotModel, Observation, Target};

pub use rng::{normals, stream};

const GROUPS: usize = 5;
const MAX_DESIGN_ATTEMPTS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    A,
    B,
    C,
    D,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::A, Pattern::B, Pattern::C, Pattern::D];

    pub fn group_values(self) -> [f64; GROUPS] {
        match self {
            Pattern::A => [0.5, 0.5, 0.4, 0.3, 0.3],
            Pattern::B => [0.7, 0.6, 0.5, 0.4, 0.3],
            Pattern::C => [2.0, 0.6, 0.5, 0.4, 0.2],
            Pattern::D => [4.0, 0.6, 0.5, 0.4, 0.1],
        }
    }

    /// Sampling variances with each group value repeated for `areas_per_group` consecutive areas.
    pub fn variances(self, areas_per_group: usize) -> DVector<f64> {
        let g = self.group_values();
        DVector::from_fn(GROUPS * areas_per_group, |i, _| g[i / areas_per_group])
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pattern::A => 'a',
            Pattern::B => 'b',
            Pattern::C => 'c',
            Pattern::D => 'd',
        };
        write!(f, "{c}")
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Pattern::A),
            "b" => Ok(Pattern::B),
            "c" => Ok(Pattern::C),
            "d" => Ok(Pattern::D),
            other => Err(Error::Invalid(format!(
                "unknown variance pattern '{other}' (expected a, b, c or d)"
            ))),
        }
    }
}

/// Loss weight matrix used in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeight {
    Identity,
    DInverse,
}

impl LossWeight {
    pub const ALL: [LossWeight; 2] = [LossWeight::Identity, LossWeight::DInverse];

    pub fn matrix(self, d: &DVector<f64>) -> DMatrix<f64> {
        match self {
            LossWeight::Identity => DMatrix::identity(d.len(), d.len()),
            LossWeight::DInverse => DMatrix::from_diagonal(&d.map(|v| 1.0 / v)),
        }
    }
}

impl fmt::Display for LossWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossWeight::Identity => "identity",
            LossWeight::DInverse => "d-inverse",
        })
    }
}

impl FromStr for LossWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "I" | "i" => Ok(LossWeight::Identity),
            "d-inverse" | "dinv" | "D^-1" => Ok(LossWeight::DInverse),
            other => Err(Error::Invalid(format!(
                "unknown loss weight '{other}' (expected identity or d-inverse)"
            ))),
        }
    }
}

/// Benchmark target and prior restriction.
///
/// `Case1` benchmarks to `W'y`. `Case2` benchmarks to a fixed `t0` with the usual prior.
/// `Case2Star` also benchmarks to `t0` but draws `mu` conditioned on `W'mu = t0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    Case1,
    Case2,
    Case2Star,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Case1, Case::Case2, Case::Case2Star];

    pub fn fixed_target(self) -> bool {
        !matches!(self, Case::Case1)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Case1 => "1",
            Case::Case2 => "2",
            Case::Case2Star => "2star",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "case1" => Ok(Case::Case1),
            "2" | "case2" => Ok(Case::Case2),
            "2star" | "2*" | "case2star" => Ok(Case::Case2Star),
            other => Err(Error::Invalid(format!(
                "unknown case '{other}' (expected 1, 2 or 2star)"
            ))),
        }
    }
}

/// Estimators compared in the study. `Cb` is the constrained EB estimator and `Cm` the
/// benchmarked direct estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimEstimator {
    Direct,
    Eb,
    Cb,
    Cm,
    Uc1,
    Uc2,
}

impl SimEstimator {
    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::Direct => "y",
            SimEstimator::Eb => "EB",
            SimEstimator::Cb => "CB",
            SimEstimator::Cm => "CM",
            SimEstimator::Uc1 => "UC1",
            SimEstimator::Uc2 => "UC2",
        }
    }

    fn check_case(self, case: Case) -> Result<()> {
        match (self, case) {
            (SimEstimator::Uc1, c) if c.fixed_target() => Err(Error::CaseMismatch {
                estimator: "uc1",
                case: "a fixed target",
            }),
            (SimEstimator::Uc2, Case::Case1) => Err(Error::CaseMismatch {
                estimator: "uc2",
                case: "the weighted-direct target",
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SimEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pattern: Pattern,
    pub q: LossWeight,
    pub case: Case,
    pub seed: u64,
    pub replications: usize,
    pub lambda: f64,
    pub p: usize,
    pub areas_per_group: usize,
    /// `t0 = t0_scale * W'X 1_p`.
    pub t0_scale: f64,
    /// Draw a fresh design matrix for every replication instead of once per seed.
    pub redraw_x: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pattern: Pattern::A,
            q: LossWeight::Identity,
            case: Case::Case1,
            seed: 1,
            replications: 10_000,
            lambda: 1.0,
            p: 2,
            areas_per_group: 3,
            t0_scale: 3.0,
            redraw_x: false,
        }
    }
}

impl SimConfig {
    pub fn k(&self) -> usize {
        GROUPS * self.areas_per_group
    }

    pub fn m(&self) -> usize {
        1
    }

    pub fn with(&self, pattern: Pattern, q: LossWeight, case: Case) -> Self {
        Self {
            pattern,
            q,
            case,
            ..self.clone()
        }
    }

    fn label(&self) -> String {
        format!(
            "{}/{}/k{}/p{}/lambda{}",
            self.pattern,
            self.q,
            self.k(),
            self.p,
            self.lambda.to_bits()
        )
    }
}

/// `k x p` design with rows i.i.d. `N_p(0, 0.8 I + 0.2 J)`, redrawn until it has rank `p`.
pub fn gen_design(seed: u64, k: usize, p: usize) -> Result<DMatrix<f64>> {
    design_from_stream(seed, "design", 0, k, p)
}

fn design_from_stream(
    seed: u64,
    label: &str,
    index: u64,
    k: usize,
    p: usize,
) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.2 });
    let chol = cov
        .cholesky()
        .expect("0.8 I + 0.2 J is positive definite")
        .unpack();
    let mut rng = stream(seed, label, index);
    for _ in 0..MAX_DESIGN_ATTEMPTS {
        let z = DMatrix::from_column_slice(p, k, &normals(&mut rng, k * p));
        let x = (&chol * z).transpose();
        if numerical_rank(&x) == p {
            return Ok(x);
        }
    }
    Err(Error::Assumption(format!(
        "no full-rank {k}x{p} design in {MAX_DESIGN_ATTEMPTS} draws"
    )))
}

/// Regression coefficients `1 + 4u`, `u ~ U(0, 1)` open on both ends.
pub fn gen_beta(seed: u64, p: usize) -> DVector<f64> {
    let mut rng = stream(seed, "beta", 0);
    DVector::from_fn(p, |_, _| 1.0 + 4.0 * rng.sample::<f64, _>(Open01))
}

/// One realized truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub mu: DVector<f64>,
    pub seed: u64,
    pub replication: u64,
    pub case: Case,
}

/// One replication's truth and observation.
#[derive(Debug, Clone)]
pub struct Draw {
    pub mu: DVector<f64>,
    pub y: DVector<f64>,
}

/// Everything fixed within one `(seed, pattern, Q)` setting.
#[derive(Debug, Clone)]
pub struct Setting {
    pub config: SimConfig,
    pub model: FayHerriotModel,
    pub beta: DVector<f64>,
    pub t0: DVector<f64>,
    pub q: DMatrix<f64>,
    direct: Benchmarker,
    fixed: Benchmarker,
    design_direct: Arc<CanonicalDesign>,
    design_fixed: Arc<CanonicalDesign>,
    /// `W (W'W)^{-1}`, used to condition the prior on `W'mu = t0`.
    w_pinv_t: DMatrix<f64>,
    prior_mean: DVector<f64>,
}

impl Setting {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let x = gen_design(config.seed, config.k(), config.p)?;
        Self::with_design(config, x)
    }

    pub fn with_design(config: &SimConfig, x: DMatrix<f64>) -> Result<Self> {
        if !(config.lambda > 0.0) {
            return Err(Error::Invalid(format!(
                "lambda must be positive, got {}",
                config.lambda
            )));
        }
        let d = config.pattern.variances(config.areas_per_group);
        let k = d.len();
        let w = DMatrix::from_column_slice(k, 1, d.map(|v| 1.0 / v).as_slice());
        let q = config.q.matrix(&d);
        let t0 = w.tr_mul(&x) * DVector::from_element(x.ncols(), config.t0_scale);
        let model = FayHerriotModel::new(x, d)?;
        let spec_direct = BenchmarkSpec::new(w.clone(), q.clone(), Target::WeightedDirect)?;
        let spec_fixed = spec_direct.with_target(Target::Fixed(t0.as_slice().to_vec()));
        crate::model::validate(&model, &spec_fixed).into_result()?;
        let beta = gen_beta(config.seed, config.p);
        let prior_mean = model.x() * &beta;
        let w_pinv_t = &w * spd_inverse(&w.tr_mul(&w), "W'W")?;
        Ok(Self {
            config: config.clone(),
            design_direct: Arc::new(CanonicalDesign::new(
                &model,
                &spec_direct,
                build_basis(&spec_direct)?,
            )?),
            design_fixed: Arc::new(CanonicalDesign::new(
                &model,
                &spec_fixed,
                build_basis(&spec_fixed)?,
            )?),
            direct: Benchmarker::new(&spec_direct)?,
            fixed: Benchmarker::new(&spec_fixed)?,
            model,
            beta,
            t0,
            q,
            w_pinv_t,
            prior_mean,
        })
    }

    pub fn spec(&self, case: Case) -> &BenchmarkSpec {
        self.benchmarker(case).spec()
    }

    pub fn benchmarker(&self, case: Case) -> &Benchmarker {
        if case.fixed_target() {
            &self.fixed
        } else {
            &self.direct
        }
    }

    pub fn design(&self, case: Case) -> &Arc<CanonicalDesign> {
        if case.fixed_target() {
            &self.design_fixed
        } else {
            &self.design_direct
        }
    }

    fn key(&self) -> String {
        self.config.label()
    }

    /// Standard normals for replication `rep`: `k` for the prior, then `k` for sampling error.
    fn replication_normals(&self, rep: u64) -> (Vec<f64>, Vec<f64>) {
        let k = self.model.k();
        let mut rng = stream(self.config.seed, &self.key(), rep);
        let a = normals(&mut rng, k);
        let b = normals(&mut rng, k);
        (a, b)
    }

    /// `mu` for replication `rep`. Under `Case2Star` the prior draw is moved onto
    /// `W'mu = t0` by `mu + W(W'W)^{-1}(t0 - W'mu)`, which is exact Gaussian conditioning
    /// for a prior covariance proportional to the identity.
    pub fn draw_mu(&self, rep: u64, case: Case) -> SimTruth {
        let (zm, _) = self.replication_normals(rep);
        SimTruth {
            beta: self.beta.clone(),
            lambda: self.config.lambda,
            mu: self.mu_from(&zm, case),
            seed: self.config.seed,
            replication: rep,
            case,
        }
    }

    fn mu_from(&self, zm: &[f64], case: Case) -> DVector<f64> {
        let s = self.config.lambda.sqrt();
        let mu = &self.prior_mean + DVector::from_column_slice(zm) * s;
        if case == Case::Case2Star {
            let gap = &self.t0 - self.spec(case).w().tr_mul(&mu);
            mu + &self.w_pinv_t * gap
        } else {
            mu
        }
    }

    fn y_from(&self, mu: &DVector<f64>, ze: &[f64]) -> DVector<f64> {
        DVector::from_fn(mu.len(), |i, _| mu[i] + self.model.d()[i].sqrt() * ze[i])
    }

    pub fn draw(&self, rep: u64, case: Case) -> Draw {
        let (zm, ze) = self.replication_normals(rep);
        let mu = self.mu_from(&zm, case);
        let y = self.y_from(&mu, &ze);
        Draw { mu, y }
    }

    /// `y` for replication `rep` around a fixed `mu`.
    pub fn draw_y_given(&self, rep: u64, mu: &DVector<f64>) -> DVector<f64> {
        let (_, ze) = self.replication_normals(rep);
        self.y_from(mu, &ze)
    }

    /// Estimates of all requested estimators from one observation. EB is computed once and
    /// shared by EB and CB.
    pub fn estimates(
        &self,
        case: Case,
        estimators: &[SimEstimator],
        y: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        for e in estimators {
            e.check_case(case)?;
        }
        let obs = Observation::for_model(&self.model, y.clone())?;
        let bench = self.benchmarker(case);
        let needs_eb = estimators
            .iter()
            .any(|e| matches!(e, SimEstimator::Eb | SimEstimator::Cb));
        let eb = if needs_eb {
            Some(eb_estimate(&self.model, &obs)?)
        } else {
            None
        };
        let needs_frame = estimators
            .iter()
            .any(|e| matches!(e, SimEstimator::Uc1 | SimEstimator::Uc2));
        let frame = if needs_frame {
            Some(self.design(case).frame(y)?)
        } else {
            None
        };
        estimators
            .iter()
            .map(|e| {
                Ok(match e {
                    SimEstimator::Direct => y.clone(),
                    SimEstimator::Eb => eb.as_ref().expect("computed above").mu_hat.clone(),
                    SimEstimator::Cb => {
                        bench
                            .ceb_from(eb.as_ref().expect("computed above"), &obs)?
                            .mu_hat
                    }
                    SimEstimator::Cm => bench.cm(&obs)?.mu_hat,
                    SimEstimator::Uc1 => {
                        uc1_estimate(bench.spec(), &obs, frame.as_ref().expect("computed above"))?
                            .mu_hat
                    }
                    SimEstimator::Uc2 => {
                        uc2_estimate(bench.spec(), &obs, frame.as_ref().expect("computed above"))?
                            .mu_hat
                    }
                })
            })
            .collect()
    }

    /// Per-replication losses, indexed `[estimator][replication]`. With `mu_fixed` only `y` is
    /// redrawn.
    pub fn losses(
        &self,
        case: Case,
        estimators: &[SimEstimator],
        replications: usize,
        mu_fixed: Option<&DVector<f64>>,
    ) -> Result<Vec<Vec<f64>>> {
        for e in estimators {
            e.check_case(case)?;
        }
        let per_rep: Vec<Vec<f64>> = (0..replications as u64)
            .into_par_iter()
            .map(|rep| {
                let (mu, y) = match mu_fixed {
                    Some(mu) => (mu.clone(), self.draw_y_given(rep, mu)),
                    None if self.config.redraw_x => {
                        return self.redrawn_losses(case, estimators, rep)
                    }
                    None => {
                        let d = self.draw(rep, case);
                        (d.mu, d.y)
                    }
                };
                self.estimates(case, estimators, &y)?
                    .iter()
                    .map(|est| weighted_loss(est, &mu, &self.q))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok((0..estimators.len())
            .map(|j| per_rep.iter().map(|r| r[j]).collect())
            .collect())
    }

    fn redrawn_losses(
        &self,
        case: Case,
        estimators: &[SimEstimator],
        rep: u64,
    ) -> Result<Vec<f64>> {
        let x = design_from_stream(
            self.config.seed,
            &self.key(),
            rep + (1 << 62),
            self.model.k(),
            self.config.p,
        )?;
        let local = Setting::with_design(&self.config, x)?;
        let (zm, ze) = self.replication_normals(rep);
        let mu = local.mu_from(&zm, case);
        let y = local.y_from(&mu, &ze);
        local
            .estimates(case, estimators, &y)?
            .iter()
            .map(|est| weighted_loss(est, &mu, &local.q))
            .collect()
    }

    /// `tr[QD]`, the exact risk of `y`.
    pub fn direct_risk(&self) -> f64 {
        (0..self.model.k())
            .map(|i| self.q[(i, i)] * self.model.d()[i])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub estimator: String,
    pub mean: f64,
    pub stderr: f64,
    pub replications: usize,
}

impl RiskEstimate {
    /// Mean and `sd / sqrt(n)` with pairwise summation.
    pub fn from_losses(estimator: impl Into<String>, losses: &[f64]) -> Self {
        let n = losses.len();
        let mean = pairwise_sum(losses) / n as f64;
        let sq: Vec<f64> = losses.iter().map(|l| (l - mean) * (l - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&sq) / (n - 1) as f64
        } else {
            f64::NAN
        };
        Self {
            estimator: estimator.into(),
            mean,
            stderr: (var / n as f64).sqrt(),
            replications: n,
        }
    }

    /// Risk difference `a - b` estimated from paired losses.
    pub fn paired_difference(estimator: impl Into<String>, a: &[f64], b: &[f64]) -> Self {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_losses(estimator, &diff)
    }

    /// `sqrt(se_a² + se_b²)`.
    pub fn combined_stderr(&self, other: &RiskEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Monte Carlo unconditional risk: fresh `(mu, y)` every replication.
pub fn unconditional_risk(estimator: SimEstimator, config: &SimConfig) -> Result<RiskEstimate> {
    let setting = Setting::new(config)?;
    let losses = setting.losses(config.case, &[estimator], config.replications, None)?;
    Ok(RiskEstimate::from_losses(estimator.label(), &losses[0]))
}

/// Monte Carlo conditional risk at a fixed `mu`.
pub fn conditional_risk(
    estimator: SimEstimator,
    mu: &DVector<f64>,
    config: &SimConfig,
) -> Result<RiskEstimate> {
    let setting = Setting::new(config)?;
    if mu.len() != setting.model.k() {
        return Err(Error::Dimension(format!(
            "mu has {} entries, k = {}",
            mu.len(),
            setting.model.k()
        )));
    }
    let losses = setting.losses(config.case, &[estimator], config.replications, Some(mu))?;
    Ok(RiskEstimate::from_losses(estimator.label(), &losses[0]))
}

/// Inner estimator whose benchmarked version is checked against the loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerEstimator {
    Direct,
    Eb,
}

/// Largest absolute gap, over `draws` replications, between the loss of the benchmarked
/// estimator and `(muhat - mu)'Q_W(muhat - mu) + (t - W'mu)'(W'Q^{-1}W)^{-1}(t - W'mu)`.
pub fn verify_decomposition(
    config: &SimConfig,
    draws: usize,
    inner: InnerEstimator,
) -> Result<f64> {
    let setting = Setting::new(config)?;
    let case = config.case;
    let bench = setting.benchmarker(case);
    let proj = bench.projector();
    let gaps: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|rep| {
            let Draw { mu, y } = setting.draw(rep, case);
            let obs = Observation::for_model(&setting.model, y.clone())?;
            let base = match inner {
                InnerEstimator::Direct => y.clone(),
                InnerEstimator::Eb => eb_estimate(&setting.model, &obs)?.mu_hat,
            };
            let t = bench.spec().target_value(&y)?;
            let constrained = bench.adjust(&base, &t);
            let loss = weighted_loss(&constrained, &mu, &setting.q)?;
            let r1 = weighted_loss(&base, &mu, &proj.q_w)?;
            let gap = &t - bench.spec().w().tr_mul(&mu);
            let r2 = gap.dot(&(&proj.wqw_inv * &gap));
            Ok((loss - r1 - r2).abs())
        })
        .collect::<Result<_>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// Empirical unconditional risk difference between constrained EB and constrained direct,
/// against the second-order approximation at the true λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaComparison {
    pub k: usize,
    pub empirical: RiskEstimate,
    pub apr: f64,
    /// `|Δ^U/k - Δ_APR/k|`.
    pub gap_per_area: f64,
}

impl DeltaComparison {
    pub fn signs_agree(&self) -> bool {
        self.empirical.mean.signum() == self.apr.signum()
    }
}

pub fn delta_u_vs_apr(config: &SimConfig) -> Result<DeltaComparison> {
    let setting = Setting::new(config)?;
    let losses = setting.losses(
        config.case,
        &[SimEstimator::Cb, SimEstimator::Cm],
        config.replications,
        None,
    )?;
    let empirical = RiskEstimate::paired_difference("CB-CM", &losses[0], &losses[1]);
    let apr = delta_apr(&setting.model, setting.spec(config.case), config.lambda)?;
    let k = setting.model.k();
    let gap_per_area = (empirical.mean - apr).abs() / k as f64;
    Ok(DeltaComparison {
        k,
        empirical,
        apr,
        gap_per_area,
    })
}

/// One estimator column of the risk table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskColumn {
    pub case: Option<Case>,
    pub risk: RiskEstimate,
    #[serde(skip)]
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub pattern: Pattern,
    pub q: LossWeight,
    pub trace_qd: f64,
    /// `y`, `EB`, then `(CB, UC1)` for Case 1, `(CB, UC2)` for Case 2 and for Case 2*.
    pub columns: Vec<RiskColumn>,
}

impl RiskRow {
    pub fn column(&self, case: Option<Case>, estimator: &str) -> Option<&RiskColumn> {
        self.columns
            .iter()
            .find(|c| c.case == case && c.risk.estimator == estimator)
    }
}

/// The eight-setting risk table for one seed.
pub fn risk_table(base: &SimConfig) -> Result<Vec<RiskRow>> {
    let mut rows = Vec::new();
    for q in LossWeight::ALL {
        for pattern in Pattern::ALL {
            rows.push(risk_row(&base.with(pattern, q, Case::Case1))?);
        }
    }
    Ok(rows)
}

pub fn risk_row(config: &SimConfig) -> Result<RiskRow> {
    let setting = Setting::new(config)?;
    let reps = config.replications;
    let mut columns = Vec::with_capacity(8);
    let case1 = [
        SimEstimator::Direct,
        SimEstimator::Eb,
        SimEstimator::Cb,
        SimEstimator::Uc1,
    ];
    for (j, losses) in setting
        .losses(Case::Case1, &case1, reps, None)?
        .into_iter()
        .enumerate()
    {
        let case = if j < 2 { None } else { Some(Case::Case1) };
        columns.push(RiskColumn {
            case,
            risk: RiskEstimate::from_losses(case1[j].label(), &losses),
            losses,
        });
    }
    let fixed = [SimEstimator::Cb, SimEstimator::Uc2];
    for case in [Case::Case2, Case::Case2Star] {
        for (j, losses) in setting
            .losses(case, &fixed, reps, None)?
            .into_iter()
            .enumerate()
        {
            columns.push(RiskColumn {
                case: Some(case),
                risk: RiskEstimate::from_losses(fixed[j].label(), &losses),
                losses,
            });
        }
    }
    Ok(RiskRow {
        pattern: config.pattern,
        q: config.q,
        trace_qd: setting.direct_risk(),
        columns,
    })
}

/// Condition verdicts for one setting of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub pattern: Pattern,
    pub q: LossWeight,
    pub report: ConditionReport,
}

/// Condition table over the eight settings, with the design drawn from `seed`.
pub fn condition_grid(base: &SimConfig, lambda_grid: &[f64]) -> Result<Vec<ConditionRow>> {
    let mut rows = Vec::new();
    for q in LossWeight::ALL {
        for pattern in Pattern::ALL {
            let setting = Setting::new(&base.with(pattern, q, Case::Case2))?;
            let report = condition_table(&setting.model, setting.spec(Case::Case2), lambda_grid)?;
            rows.push(ConditionRow { pattern, q, report });
        }
    }
    Ok(rows)
}

/// Fraction of `draws` independent designs for which each estimator's necessary condition
/// holds, in the order EB, CB, UC1, UC2.
pub fn nr_stability(base: &SimConfig, draws: u64) -> Result<[f64; 4]> {
    let counts = (0..draws)
        .into_par_iter()
        .map(|i| {
            let config = SimConfig {
                seed: base.seed.wrapping_add(i),
                ..base.clone()
            };
            let setting = Setting::new(&config)?;
            let report = condition_table(&setting.model, setting.spec(Case::Case2), &[0.0])?;
            let hits = report
                .estimators()
                .map(|(_, e)| u32::from(e.nr_u.satisfied));
            Ok(hits)
        })
        .collect::<Result<Vec<[u32; 4]>>>()?;
    let mut out = [0.0; 4];
    for c in &counts {
        for j in 0..4 {
            out[j] += f64::from(c[j]);
        }
    }
    Ok(out.map(|v| v / draws as f64))
}
