#![allow(dead_code)]

pub mod stationary;
pub mod suites;

use nalgebra::DMatrix;
use normalblock::sim::{self, KappaSpec, Scenario, Structure};
use normalblock::{ClusterAssignment, Dataset, NoiseKind};

/// A small simulated problem derived from one seed.
pub struct Instance {
    pub data: Dataset,
    pub truth: sim::Truth,
    pub lambda: f64,
}

pub fn structure_for(seed: u64) -> Structure {
    match seed % 3 {
        0 => Structure::erdos_renyi(),
        1 => Structure::preferential_attachment(),
        _ => Structure::community(),
    }
}

/// Sizes, noise kind and penalty all vary with the seed.
pub fn instance(seed: u64, max_q: usize, zero_mean: Option<f64>) -> Instance {
    let p = 4 + (seed % 9) as usize;
    let q = 1 + (seed / 9 % max_q as u64) as usize;
    let n = 15 + (seed.wrapping_mul(7) % 30) as usize;
    let mut scenario = Scenario::new(structure_for(seed), n, p, q.min(p));
    if seed % 4 == 1 && zero_mean.is_none() {
        scenario.noise = NoiseKind::Spherical;
    }
    scenario.kappa = zero_mean.map(KappaSpec::with_mean);
    let (data, truth) = sim::generate(&scenario, seed).expect("simulation");
    let lambda = [0.0, 0.02, 0.1][(seed % 3) as usize];
    Instance { data, truth, lambda }
}

pub fn assert_non_decreasing(trace: &[f64], what: &str) {
    assert!(!trace.is_empty(), "{what}: empty trace");
    for (i, w) in trace.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 1e-8, "{what}: step {i} went {} -> {}", w[0], w[1]);
    }
}

/// Central difference of `f` along one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub fn all_assignments(p: usize, q: usize) -> Vec<ClusterAssignment> {
    let total = q.pow(p as u32);
    (0..total)
        .map(|mut code| {
            let labels = (0..p)
                .map(|_| {
                    let l = code % q;
                    code /= q;
                    l
                })
                .collect();
            ClusterAssignment::new(labels, q).expect("labels in range")
        })
        .collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (k, &pk) in perm.iter().enumerate() {
        out.set_column(pk, &m.column(k));
    }
    out
}

pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}
