#![allow(dead_code)]

use fhbench::{BenchmarkSpec, FayHerriotModel, Target};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    normal_matrix(rng, n, n).qr().q()
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let u = random_orthogonal(rng, n);
    let ev = uniform_vector(rng, n, lo, hi);
    &u * DMatrix::from_diagonal(&ev) * u.transpose()
}

/// A heteroscedastic instance with general `Q` and random `W`.
pub struct Instance {
    pub model: FayHerriotModel,
    pub spec: BenchmarkSpec,
    pub y: DVector<f64>,
}

pub fn random_instance(seed: u64, k: usize, p: usize, m: usize, fixed_target: bool) -> Instance {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, k, p);
    let d = uniform_vector(&mut r, k, 0.1, 3.0);
    let w = normal_matrix(&mut r, k, m);
    let q = random_spd(&mut r, k, 0.3, 3.0);
    let beta = normal_vector(&mut r, p) * 2.0;
    let lambda = r.random_range(0.2..3.0);
    let mu = &x * &beta + normal_vector(&mut r, k) * f64::sqrt(lambda);
    let y = DVector::from_fn(k, |i, _| {
        mu[i] + d[i].sqrt() * r.sample::<f64, _>(StandardNormal)
    });
    let target = if fixed_target {
        Target::Fixed((w.transpose() * &mu).as_slice().to_vec())
    } else {
        Target::WeightedDirect
    };
    Instance {
        model: FayHerriotModel::new(x, d).unwrap(),
        spec: BenchmarkSpec::new(w, q, target).unwrap(),
        y,
    }
}

/// Verdict line printed by every acceptance test.
pub fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion} ({title}): {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
