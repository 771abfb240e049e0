use fhbench::montecarlo::{
    conditional_risk, gen_beta, gen_design, Case, LossWeight, Pattern, RiskEstimate, Setting,
    SimConfig, SimEstimator,
};
use fhbench::{eb_estimate, loss_reduced_qw, weighted_loss, Observation};
use nalgebra::{DMatrix, DVector};

fn setting(pattern: Pattern, q: LossWeight) -> Setting {
    Setting::new(&SimConfig {
        pattern,
        q,
        ..SimConfig::default()
    })
    .unwrap()
}

#[test]
fn design_rows_have_target_moments() {
    let n = 1_000_000;
    let x = gen_design(7, n, 2).unwrap();
    let m0 = x.column(0).mean();
    let m1 = x.column(1).mean();
    let var0 = x.column(0).map(|v| v * v).mean();
    let var1 = x.column(1).map(|v| v * v).mean();
    let cov = x.column(0).component_mul(&x.column(1)).mean();
    let se = 1.0 / (n as f64).sqrt();
    assert!(m0.abs() < 5.0 * se && m1.abs() < 5.0 * se);
    assert!((var0 - 1.0).abs() < 5.0 * se * 2f64.sqrt());
    assert!((var1 - 1.0).abs() < 5.0 * se * 2f64.sqrt());
    assert!((cov - 0.2).abs() < 5.0 * se * 1.04f64.sqrt());
}

#[test]
fn beta_is_uniform_on_one_to_five() {
    let draws: Vec<f64> = (0..20_000u64).map(|s| gen_beta(s, 1)[0]).collect();
    assert!(draws.iter().all(|b| *b > 1.0 && *b < 5.0));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let se = (16.0f64 / 12.0).sqrt() / (draws.len() as f64).sqrt();
    assert!((mean - 3.0).abs() < 4.0 * se, "mean {mean}");
    assert_eq!(gen_beta(3, 2), gen_beta(3, 2));
    assert_ne!(gen_beta(3, 2), gen_beta(4, 2));
}

#[test]
fn prior_draws_have_the_right_moments() {
    let s = setting(Pattern::B, LossWeight::Identity);
    let n = 40_000;
    let k = s.model.k();
    let prior_mean = s.model.x() * &s.beta;
    let w = s.spec(Case::Case2Star).w().clone();
    let mut sum = DVector::zeros(k);
    let mut outer = DMatrix::zeros(k, k);
    for rep in 0..n {
        let mu1 = s.draw_mu(rep, Case::Case1).mu;
        sum += &mu1 - &prior_mean;
        let mu2 = s.draw_mu(rep, Case::Case2Star).mu;
        assert!((w.tr_mul(&mu2) - &s.t0).amax() < 1e-9 * s.t0.amax());
        let c = &mu2 - &prior_mean;
        outer += &c * c.transpose();
    }
    let mean = sum / n as f64;
    let se = (s.config.lambda / n as f64).sqrt();
    assert!(mean.amax() < 4.5 * se, "{}", mean.amax());

    let wtw = (w.transpose() * &w)[(0, 0)];
    let proj = DMatrix::identity(k, k) - &w * w.transpose() / wtw;
    let shift = &w * (&s.t0 - w.tr_mul(&prior_mean)) / wtw;
    let centered = outer / n as f64 - &shift * shift.transpose();
    let expect = proj * s.config.lambda;
    assert!((centered - expect).amax() < 0.05, "covariance mismatch");
}

#[test]
fn direct_and_benchmarked_direct_have_exact_conditional_risk() {
    let s = setting(Pattern::C, LossWeight::DInverse);
    let mu = s.draw_mu(0, Case::Case1).mu;
    let config = SimConfig {
        pattern: Pattern::C,
        q: LossWeight::DInverse,
        replications: 40_000,
        ..SimConfig::default()
    };
    let exact = s.direct_risk();
    for est in [SimEstimator::Direct, SimEstimator::Cm] {
        let r = conditional_risk(est, &mu, &config).unwrap();
        assert!(
            (r.mean - exact).abs() < 4.0 * r.stderr,
            "{est}: {} vs {exact}",
            r.mean
        );
    }
}

#[test]
fn constraint_term_cancels_in_case1_pairs() {
    let s = setting(Pattern::A, LossWeight::Identity);
    let qw = loss_reduced_qw(s.spec(Case::Case1)).unwrap();
    let losses = s
        .losses(
            Case::Case1,
            &[SimEstimator::Cb, SimEstimator::Cm],
            200,
            None,
        )
        .unwrap();
    for rep in 0..200u64 {
        let d = s.draw(rep, Case::Case1);
        let eb = eb_estimate(&s.model, &Observation::new(d.y.clone()).unwrap())
            .unwrap()
            .mu_hat;
        let expect =
            weighted_loss(&eb, &d.mu, &qw).unwrap() - weighted_loss(&d.y, &d.mu, &qw).unwrap();
        let got = losses[0][rep as usize] - losses[1][rep as usize];
        assert!((got - expect).abs() < 1e-9 * (1.0 + expect.abs()));
    }
}

#[test]
fn constraint_term_is_fixed_given_mu_under_fixed_target() {
    let s = setting(Pattern::D, LossWeight::DInverse);
    let qw = loss_reduced_qw(s.spec(Case::Case2)).unwrap();
    let mu = s.draw_mu(3, Case::Case1).mu;
    let losses = s
        .losses(Case::Case2, &[SimEstimator::Cm], 100, Some(&mu))
        .unwrap();
    let mut r2 = Vec::new();
    for rep in 0..100u64 {
        let y = s.draw_y_given(rep, &mu);
        let cm = s
            .estimates(Case::Case2, &[SimEstimator::Direct], &y)
            .unwrap()
            .remove(0);
        r2.push(losses[0][rep as usize] - weighted_loss(&cm, &mu, &qw).unwrap());
    }
    let first = r2[0];
    assert!(first > 0.0);
    assert!(r2.iter().all(|v| (v - first).abs() < 1e-9 * first));
}

#[test]
fn direct_risk_is_calibrated_across_seeds() {
    let reps = 2000;
    let mut inside = 0;
    let mut total = 0;
    for seed in 0..100u64 {
        for q in LossWeight::ALL {
            for pattern in Pattern::ALL {
                let s = Setting::new(&SimConfig {
                    pattern,
                    q,
                    seed,
                    ..SimConfig::default()
                })
                .unwrap();
                let l = s
                    .losses(Case::Case1, &[SimEstimator::Direct], reps, None)
                    .unwrap();
                let r = RiskEstimate::from_losses("y", &l[0]);
                total += 1;
                if (r.mean - s.direct_risk()).abs() <= 3.0 * r.stderr {
                    inside += 1;
                }
            }
        }
    }
    assert!(inside as f64 >= 0.99 * total as f64, "{inside}/{total}");
}

#[test]
fn conditioning_on_the_target_helps_benchmarked_estimators() {
    for q in LossWeight::ALL {
        for pattern in Pattern::ALL {
            let s = Setting::new(&SimConfig {
                pattern,
                q,
                ..SimConfig::default()
            })
            .unwrap();
            let l = s
                .losses(
                    Case::Case2Star,
                    &[SimEstimator::Cb, SimEstimator::Uc2],
                    4000,
                    None,
                )
                .unwrap();
            for losses in &l {
                let r = RiskEstimate::from_losses("", losses);
                assert!(
                    r.mean + 3.0 * r.stderr < s.direct_risk(),
                    "{pattern} {q}: {} vs {}",
                    r.mean,
                    s.direct_risk()
                );
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = setting(Pattern::C, LossWeight::Identity);
    let ests = [
        SimEstimator::Direct,
        SimEstimator::Eb,
        SimEstimator::Cb,
        SimEstimator::Uc1,
    ];
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| s.losses(Case::Case1, &ests, 500, None).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    let ra: Vec<f64> = a
        .iter()
        .map(|l| RiskEstimate::from_losses("", l).mean)
        .collect();
    let rb: Vec<f64> = b
        .iter()
        .map(|l| RiskEstimate::from_losses("", l).mean)
        .collect();
    assert_eq!(ra, rb);
}

#[test]
fn estimator_case_mismatch_is_an_error() {
    let s = setting(Pattern::A, LossWeight::Identity);
    assert!(s
        .losses(Case::Case2, &[SimEstimator::Uc1], 1, None)
        .is_err());
    assert!(s
        .losses(Case::Case1, &[SimEstimator::Uc2], 1, None)
        .is_err());
}

#[test]
fn config_strings_round_trip() {
    for p in Pattern::ALL {
        assert_eq!(p.to_string().parse::<Pattern>().unwrap(), p);
    }
    for q in LossWeight::ALL {
        assert_eq!(q.to_string().parse::<LossWeight>().unwrap(), q);
    }
    for c in Case::ALL {
        assert_eq!(c.to_string().parse::<Case>().unwrap(), c);
    }
    assert!("e".parse::<Pattern>().is_err());
}
