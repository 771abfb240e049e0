mod common;

use common::{normal_matrix, random_instance, rng, uniform_vector};
use fhbench::canonical::{build_basis, CanonicalDesign};
use fhbench::conditions::{
    condition_table, default_lambda_grid, delta_apr, delta_apr_with_loss, inverse_trace_ratio,
    minform_ratio_a, minform_ratio_v, nr_uncond, sr_ceb_minform, sr_explicit, sr_minform,
    sr_uncond_explicit, sr_uncond_minform, sr_uncond_minform_with, uc_conditions,
};
use fhbench::montecarlo::{Case, LossWeight, Pattern, Setting, SimConfig};
use fhbench::{loss_reduced_qw, BenchmarkSpec, FayHerriotModel, Target};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn setting(pattern: Pattern, q: LossWeight) -> Setting {
    Setting::new(&SimConfig {
        pattern,
        q,
        ..SimConfig::default()
    })
    .unwrap()
}

fn all_settings() -> Vec<Setting> {
    LossWeight::ALL
        .into_iter()
        .flat_map(|q| Pattern::ALL.into_iter().map(move |p| setting(p, q)))
        .collect()
}

fn loss(spec: &BenchmarkSpec, use_qw: bool) -> DMatrix<f64> {
    if use_qw {
        loss_reduced_qw(spec).unwrap()
    } else {
        spec.q().clone()
    }
}

fn check_chain(model: &FayHerriotModel, spec: &BenchmarkSpec) {
    let grid = default_lambda_grid();
    for use_qw in [false, true] {
        let explicit = sr_explicit(model, spec, use_qw).unwrap().lhs;
        let l = loss(spec, use_qw);
        for &lam in grid.iter().step_by(8) {
            let ra = minform_ratio_a(model, &l, lam).unwrap();
            assert!(
                ra >= explicit - model.p() as f64 - 1e-9,
                "ratio_A({lam}) = {ra} < {explicit} - p"
            );
            let rv = minform_ratio_v(model, &l, lam);
            assert!(rv >= explicit - 1e-9, "ratio_V({lam}) = {rv} < {explicit}");
        }
    }
}

fn check_implications(model: &FayHerriotModel, spec: &BenchmarkSpec) {
    let grid = default_lambda_grid();
    for use_qw in [false, true] {
        if sr_explicit(model, spec, use_qw).unwrap().satisfied {
            assert!(sr_minform(model, spec, &grid, use_qw).unwrap().satisfied);
        }
        let sru = sr_uncond_explicit(model, spec, use_qw).unwrap();
        if sru.satisfied {
            assert!(
                sr_uncond_minform_with(model, spec, &grid, use_qw)
                    .unwrap()
                    .satisfied
            );
        }
        let nr = nr_uncond(model, spec, use_qw).unwrap();
        if sru.satisfied {
            assert!(nr.satisfied, "SR^U holds but NR^U fails: {nr}");
        }
        let d0 = delta_apr_with_loss(model, &loss(spec, use_qw), 0.0).unwrap();
        assert_eq!(d0 <= 0.0, nr.satisfied, "delta(0) = {d0}, {nr}");
    }
}

#[test]
fn simulation_grid_invariants() {
    for s in all_settings() {
        let spec = s.spec(Case::Case1);
        check_chain(&s.model, spec);
        check_implications(&s.model, spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_instance_invariants(seed in any::<u64>(), k in 6usize..20, m in 1usize..3) {
        let inst = random_instance(seed, k, 2, m, false);
        check_chain(&inst.model, &inst.spec);
        check_implications(&inst.model, &inst.spec);
    }

    #[test]
    fn inverse_trace_ratio_is_nonincreasing(seed in any::<u64>(), k in 2usize..40) {
        let mut r = rng(seed);
        let d = uniform_vector(&mut r, k, 0.01, 10.0);
        let mut prev = f64::INFINITY;
        for &lam in &default_lambda_grid() {
            let v = inverse_trace_ratio(&d, lam);
            prop_assert!(v <= prev * (1.0 + 1e-12));
            prev = v;
        }
    }

    #[test]
    fn verdict_matches_margin(seed in any::<u64>(), k in 5usize..15) {
        let inst = random_instance(seed, k, 1, 1, false);
        for v in [
            sr_explicit(&inst.model, &inst.spec, true).unwrap(),
            sr_uncond_explicit(&inst.model, &inst.spec, false).unwrap(),
            nr_uncond(&inst.model, &inst.spec, true).unwrap(),
        ] {
            prop_assert_eq!(v.satisfied, v.lhs >= v.rhs - 1e-10 * v.rhs.abs().max(1.0));
        }
    }
}

fn balanced(k: usize, d: f64) -> (FayHerriotModel, BenchmarkSpec) {
    let model = FayHerriotModel::new(
        DMatrix::from_element(k, 1, 1.0),
        DVector::from_element(k, d),
    )
    .unwrap();
    let spec = BenchmarkSpec::new(
        DMatrix::from_element(k, 1, 1.0),
        DMatrix::identity(k, k),
        Target::WeightedDirect,
    )
    .unwrap();
    (model, spec)
}

#[test]
fn balanced_minform_ratio_is_constant() {
    let (model, spec) = balanced(12, 0.6);
    let qw = loss_reduced_qw(&spec).unwrap();
    for lam in [0.0, 0.01, 1.0, 100.0] {
        assert!((minform_ratio_a(&model, &qw, lam).unwrap() - 11.0).abs() < 1e-9);
    }
    let v = sr_ceb_minform(&model, &spec, &default_lambda_grid()).unwrap();
    assert!((v.lhs - 11.0).abs() < 1e-9);
    assert_eq!(v.rhs, 11.0 / 2.0 + 2.0);
    assert!(v.satisfied);
}

#[test]
fn balanced_unconditional_reduction() {
    let mut r = rng(3);
    for (k, m, p) in [(8, 1, 2), (6, 2, 3), (12, 3, 1), (5, 1, 1)] {
        let model =
            FayHerriotModel::new(normal_matrix(&mut r, k, p), DVector::from_element(k, 0.9))
                .unwrap();
        let spec = BenchmarkSpec::new(
            normal_matrix(&mut r, k, m),
            DMatrix::identity(k, k),
            Target::WeightedDirect,
        )
        .unwrap();
        let v = sr_uncond_explicit(&model, &spec, true).unwrap();
        assert!((v.lhs - (k - m) as f64).abs() < 1e-9);
        assert!((v.rhs - (p + 2) as f64).abs() < 1e-12);
        assert_eq!(v.satisfied, k - m >= p + 2);
    }
}

#[test]
fn printed_table_examples() {
    let a_dinv = setting(Pattern::A, LossWeight::DInverse);
    let a_id = setting(Pattern::A, LossWeight::Identity);
    let c_id = setting(Pattern::C, LossWeight::Identity);
    let d_id = setting(Pattern::D, LossWeight::Identity);
    let grid = default_lambda_grid();

    assert!(
        sr_explicit(&a_dinv.model, a_dinv.spec(Case::Case1), false)
            .unwrap()
            .satisfied
    );
    assert!(
        !sr_explicit(&a_id.model, a_id.spec(Case::Case1), false)
            .unwrap()
            .satisfied
    );
    assert!(
        sr_uncond_explicit(&a_id.model, a_id.spec(Case::Case1), false)
            .unwrap()
            .satisfied
    );
    assert!(
        !sr_uncond_explicit(&c_id.model, c_id.spec(Case::Case1), false)
            .unwrap()
            .satisfied
    );
    assert!(
        !sr_ceb_minform(&d_id.model, d_id.spec(Case::Case1), &grid)
            .unwrap()
            .satisfied
    );
    assert!(
        !sr_uncond_minform(&c_id.model, c_id.spec(Case::Case1), &grid)
            .unwrap()
            .satisfied
    );

    let design = a_dinv.design(Case::Case1);
    let (sr, _, _) = uc_conditions(design, &design.x3, 15, 1, 2).unwrap();
    assert!(sr.satisfied);
    let design = c_id.design(Case::Case1);
    let (_, sr_u, _) = uc_conditions(design, &design.x3, 15, 1, 2).unwrap();
    assert!(!sr_u.satisfied);

    for s in all_settings() {
        assert!(
            nr_uncond(&s.model, s.spec(Case::Case1), true)
                .unwrap()
                .satisfied
        );
        assert!(
            nr_uncond(&s.model, s.spec(Case::Case1), false)
                .unwrap()
                .satisfied
        );
    }
}

#[test]
fn balanced_explicit_reduction() {
    let (model, spec) = balanced(15, 0.4);
    let x = normal_matrix(&mut rng(1), 15, 2);
    let model2 = FayHerriotModel::new(x, model.d().clone()).unwrap();
    let v = sr_explicit(&model2, &spec, true).unwrap();
    assert!((v.lhs - 14.0).abs() < 1e-10);
    assert_eq!(v.rhs, 2.0 + 2.0 + 6.5);
    assert!(v.satisfied);
}

#[test]
fn uc_isotropic_case() {
    let k = 10;
    let mut r = rng(2);
    let model =
        FayHerriotModel::new(normal_matrix(&mut r, k, 1), DVector::from_element(k, 1.0)).unwrap();
    let spec = BenchmarkSpec::new(
        normal_matrix(&mut r, k, 2),
        DMatrix::identity(k, k),
        Target::WeightedDirect,
    )
    .unwrap();
    let design = CanonicalDesign::new(&model, &spec, build_basis(&spec).unwrap()).unwrap();
    let (sr, _, _) = uc_conditions(&design, &design.x3, k, 2, 1).unwrap();
    assert!((sr.lhs - 8.0).abs() < 1e-10);
    assert_eq!(sr.satisfied, 8.0 >= 1.0 + 2.0 + 4.5);
}

/// `tr[DQ_W] - tr[(X'D^-1X)^-1 X'Q_W X] - tr[Q_W D^-1] 2k/(tr D^-1)²` from dense matrices.
#[test]
fn nr_direct_trace_oracle() {
    let k = 9;
    let d = 0.7;
    let (model, spec) = balanced(k, d);
    let dm = DMatrix::from_diagonal(model.d());
    let di = dm.clone().try_inverse().unwrap();
    let x = model.x();
    let jj = DMatrix::from_element(k, k, 1.0);
    let qw = DMatrix::identity(k, k) - jj / k as f64;
    let lhs = (&dm * &qw).trace();
    let gls = ((x.transpose() * &di * x).try_inverse().unwrap() * x.transpose() * &qw * x).trace();
    let rhs = gls + (&qw * &di).trace() * 2.0 * k as f64 / di.trace().powi(2);
    let v = nr_uncond(&model, &spec, true).unwrap();
    assert!((v.lhs - lhs).abs() < 1e-12 && (v.rhs - rhs).abs() < 1e-12);
    assert!((lhs - (k - 1) as f64 * d).abs() < 1e-12);
}

#[test]
fn nr_verdict_is_scale_invariant() {
    for pattern in Pattern::ALL {
        let base = setting(pattern, LossWeight::Identity);
        let verdicts: Vec<bool> = [0.1, 1.0, 10.0]
            .iter()
            .map(|c| {
                let d = base.model.d() * *c;
                let model = FayHerriotModel::new(base.model.x().clone(), d.clone()).unwrap();
                let w = DMatrix::from_column_slice(15, 1, d.map(|v| 1.0 / v).as_slice());
                let spec = BenchmarkSpec::new(w, DMatrix::identity(15, 15), Target::WeightedDirect)
                    .unwrap();
                let v = nr_uncond(&model, &spec, true).unwrap();
                let v1 = nr_uncond(&base.model, base.spec(Case::Case1), true).unwrap();
                assert!((v.lhs / v1.lhs - c).abs() < 1e-10 && (v.rhs / v1.rhs - c).abs() < 1e-10);
                v.satisfied
            })
            .collect();
        assert!(verdicts.iter().all(|v| *v == verdicts[0]));
    }
}

#[test]
fn delta_apr_decays_and_respects_sufficient_condition() {
    for s in all_settings() {
        let spec = s.spec(Case::Case1);
        assert!(delta_apr(&s.model, spec, 1e6).unwrap().abs() < 1e-3);
        if sr_uncond_explicit(&s.model, spec, true).unwrap().satisfied {
            for i in 0..=100 {
                let lam = 0.1 * i as f64;
                assert!(delta_apr(&s.model, spec, lam).unwrap() <= 1e-12);
            }
        }
    }
}

#[test]
fn condition_report_is_deterministic() {
    let s = setting(Pattern::B, LossWeight::DInverse);
    let grid = default_lambda_grid();
    let a = condition_table(&s.model, s.spec(Case::Case2), &grid).unwrap();
    let b = condition_table(&s.model, s.spec(Case::Case2), &grid).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.model_fingerprint.len(), 64);
    let other = setting(Pattern::C, LossWeight::DInverse);
    let c = condition_table(&other.model, other.spec(Case::Case2), &grid).unwrap();
    assert_ne!(a.model_fingerprint, c.model_fingerprint);
}
