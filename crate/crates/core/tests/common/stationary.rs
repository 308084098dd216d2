//! Every closed-form update is a stationary point of the objective it
//! maximises, checked against central finite differences. Failures panic.

use super::*;
use nalgebra::{DMatrix, DVector};
use normalblock::em;
use normalblock::glasso::GlassoConfig;
use normalblock::rng;
use normalblock::vem;
use normalblock::zi::{self, ZiMasks};
use normalblock::{Dataset, ModelParams, Noise, VariationalState};

const STEP: f64 = 1e-6;
/// Allowed slope per observation.
const TOL: f64 = 1e-5;

fn assert_flat(slope: f64, n: usize, what: &str) {
    assert!(slope.abs() / n as f64 <= TOL, "{what}: slope {slope} over {n} rows");
}

fn with_b(params: &ModelParams, i: usize, j: usize, h: f64) -> ModelParams {
    let mut out = params.clone();
    out.b[(i, j)] += h;
    out
}

fn with_noise(params: &ModelParams, j: usize, h: f64) -> ModelParams {
    let mut out = params.clone();
    out.noise = match &params.noise {
        Noise::Diagonal(d) => {
            let mut d = d.clone();
            d[j] += h;
            Noise::Diagonal(d)
        }
        Noise::Spherical(v) => Noise::Spherical(v + h),
    };
    out
}

fn with_omega(params: &ModelParams, a: usize, b: usize, h: f64) -> ModelParams {
    let mut omega = params.omega().clone();
    omega[(a, b)] += h;
    if a != b {
        omega[(b, a)] += h;
    }
    let mut out = params.clone();
    out.set_omega(omega).unwrap();
    out
}

fn with_alpha(params: &ModelParams, a: usize, b: usize, h: f64) -> ModelParams {
    let mut alpha = params.alpha.clone().unwrap();
    alpha[a] += h;
    alpha[b] -= h;
    params.clone().with_alpha(alpha).unwrap()
}

/// Checks the slope of `f` in every parameter block that an M-step sets.
fn check_parameters(params: &ModelParams, data: &Dataset, what: &str, f: impl Fn(&ModelParams) -> f64) {
    let n = data.n();
    let q = params.q();
    for j in 0..data.p() {
        let g = central_difference(|h| f(&with_b(params, 0, j, h)), STEP);
        assert_flat(g, n, &format!("{what} B[0,{j}]"));
    }
    let noise_coords = if matches!(params.noise, Noise::Spherical(_)) { 1 } else { data.p() };
    for j in 0..noise_coords {
        let g = central_difference(|h| f(&with_noise(params, j, h)), STEP);
        assert_flat(g, n, &format!("{what} noise[{j}]"));
    }
    for a in 0..q {
        for b in a..q {
            let g = central_difference(|h| f(&with_omega(params, a, b, h)), STEP);
            assert_flat(g, n, &format!("{what} omega[{a},{b}]"));
        }
    }
    if params.alpha.is_some() {
        for a in 1..q {
            let g = central_difference(|h| f(&with_alpha(params, 0, a, h)), STEP);
            assert_flat(g, n, &format!("{what} alpha[0]-alpha[{a}]"));
        }
    }
}

/// Soft starting memberships so every coordinate can be perturbed.
fn soft_state(n: usize, p: usize, q: usize, seed: u64) -> VariationalState {
    let mut g = rng::seeded(seed);
    let raw = rng::standard_normal_matrix(&mut g, p, q).map(|v| (0.5 * v).exp());
    let mut tau = raw.clone();
    for j in 0..p {
        let total: f64 = raw.row(j).sum();
        for k in 0..q {
            tau[(j, k)] = raw[(j, k)] / total;
        }
    }
    VariationalState {
        m: rng::standard_normal_matrix(&mut g, n, q) * 0.1,
        s: DMatrix::from_element(n, q, 0.5),
        tau,
    }
}

fn check_state(state: &VariationalState, n: usize, what: &str, f: impl Fn(&VariationalState) -> f64) {
    let bump = |field: usize, i: usize, k: usize, h: f64| {
        let mut s = state.clone();
        match field {
            0 => s.m[(i, k)] += h,
            _ => s.s[(i, k)] += h,
        }
        f(&s)
    };
    for i in (0..state.m.nrows()).step_by(3) {
        for k in 0..state.m.ncols() {
            assert_flat(central_difference(|h| bump(0, i, k, h), STEP), n, &format!("{what} M[{i},{k}]"));
            assert_flat(central_difference(|h| bump(1, i, k, h), STEP * 0.1), n, &format!("{what} S[{i},{k}]"));
        }
    }
}

/// Slope along `tau_j,a - tau_j,b` for rows where both entries are interior.
fn check_memberships(state: &VariationalState, n: usize, what: &str, f: impl Fn(&VariationalState) -> f64) -> usize {
    let mut checked = 0;
    let (p, q) = state.tau.shape();
    for j in 0..p {
        for a in 0..q {
            for b in (a + 1)..q {
                if state.tau[(j, a)].min(state.tau[(j, b)]) < 1e-3 {
                    continue;
                }
                let g = central_difference(
                    |h| {
                        let mut s = state.clone();
                        s.tau[(j, a)] += h;
                        s.tau[(j, b)] -= h;
                        f(&s)
                    },
                    STEP * 1e-2,
                );
                assert_flat(g, n, &format!("{what} tau[{j}] {a}-{b}"));
                checked += 1;
            }
        }
    }
    checked
}

fn noisy_instance(seed: u64, max_q: usize, zero_mean: Option<f64>) -> Instance {
    let mut inst = instance(seed, max_q, zero_mean);
    inst.lambda = 0.0;
    inst
}

pub fn observed_em_updates_are_stationary() {
    for seed in 0..24u64 {
        let inst = noisy_instance(seed, 4, None);
        let (c, data) = (&inst.truth.clustering, &inst.data);
        let kind = inst.truth.params.noise.kind();
        let moments = em::e_step(&inst.truth.params, c, data).unwrap();
        // Posterior means maximise J at the parameters that produced them.
        let j_of_mu = |i: usize, k: usize, h: f64| {
            let mut m = moments.clone();
            m.mu[(i, k)] += h;
            em::em_objective(&inst.truth.params, c, data, &m).unwrap()
        };
        for i in (0..data.n()).step_by(4) {
            for k in 0..c.q() {
                assert_flat(central_difference(|h| j_of_mu(i, k, h), STEP), data.n(), "em mu");
            }
        }
        let updated = em::m_step(&moments, c, data, kind, 0.0, &GlassoConfig::default()).unwrap();
        check_parameters(&updated, data, "em", |p| em::em_objective(p, c, data, &moments).unwrap());
    }
}

pub fn variational_updates_are_stationary() {
    let mut memberships_checked = 0;
    for seed in 0..24u64 {
        let inst = noisy_instance(seed, 4, None);
        let data = &inst.data;
        let q = inst.truth.clustering.q();
        let kind = inst.truth.params.noise.kind();
        let params = inst
            .truth
            .params
            .clone()
            .with_alpha(DVector::from_element(q, 1.0 / q as f64))
            .unwrap();
        let start = soft_state(data.n(), data.p(), q, seed);
        let elbo = |p: &ModelParams, s: &VariationalState| vem::elbo(p, s, data).unwrap();

        let tau = vem::update_tau(&params, &start, data).unwrap();
        let after_tau = VariationalState { tau, ..start.clone() };
        memberships_checked += check_memberships(&after_tau, data.n(), "vem", |s| elbo(&params, s));

        let (m, s) = vem::update_gaussian(&params, &after_tau.tau, data).unwrap();
        let after_gauss = VariationalState { m, s, tau: after_tau.tau.clone() };
        check_state(&after_gauss, data.n(), "vem", |s| elbo(&params, s));

        let updated = vem::m_step(&after_gauss, data, kind, 0.0, &GlassoConfig::default()).unwrap();
        check_parameters(&updated, data, "vem", |p| elbo(p, &after_gauss));
    }
    assert!(memberships_checked > 0, "no interior memberships were exercised");
}

pub fn zero_inflated_observed_updates_are_stationary() {
    let mut seed = 0;
    let mut done = 0;
    while done < 15 {
        seed += 1;
        let inst = noisy_instance(seed, 4, Some(0.25));
        let Ok(masks) = ZiMasks::new(&inst.data) else { continue };
        let (c, data) = (&inst.truth.clustering, &inst.data);
        let params = inst.truth.params.clone();
        let moments = zi::zi_e_step_observed(&params, c, data, &masks).unwrap();
        let updated = zi::zi_m_step_observed(&moments, &masks, c, data, 0.0, &GlassoConfig::default()).unwrap();
        check_parameters(&updated, data, "zi em", |p| zi::zi_em_objective(p, c, data, &masks, &moments).unwrap());
        done += 1;
    }
}

pub fn zero_inflated_variational_updates_are_stationary() {
    let mut seed = 0;
    let mut done = 0;
    let mut memberships_checked = 0;
    while done < 15 {
        seed += 1;
        let inst = noisy_instance(seed, 4, Some(0.25));
        let Ok(masks) = ZiMasks::new(&inst.data) else { continue };
        let data = &inst.data;
        let q = inst.truth.clustering.q();
        let params = inst
            .truth
            .params
            .clone()
            .with_alpha(DVector::from_element(q, 1.0 / q as f64))
            .unwrap();
        let elbo = |p: &ModelParams, s: &VariationalState| zi::zi_elbo(p, s, data, &masks).unwrap();
        let start = soft_state(data.n(), data.p(), q, seed);

        let tau = zi::zi_update_tau(&params, &start, data, &masks).unwrap();
        let after_tau = VariationalState { tau, ..start.clone() };
        memberships_checked += check_memberships(&after_tau, data.n(), "zi vem", |s| elbo(&params, s));

        let (m, s) = zi::zi_update_gaussian(&params, &after_tau.tau, data, &masks).unwrap();
        let after_gauss = VariationalState { m, s, tau: after_tau.tau.clone() };
        check_state(&after_gauss, data.n(), "zi vem", |s| elbo(&params, s));
        let grad = zi::gradient_m(&params, &after_gauss.m, &after_gauss.tau, data, &masks);
        assert!(grad.amax() / data.n() as f64 <= TOL, "gradient in M at its solve");

        let updated = zi::zi_m_step(&after_gauss, data, &masks, 0.0, &GlassoConfig::default()).unwrap();
        check_parameters(&updated, data, "zi vem", |p| elbo(p, &after_gauss));
        let latent_fit = &after_gauss.m * after_gauss.tau.transpose();
        let d = updated.noise.variances(data.p());
        let grad = zi::gradient_b(data, &updated.b, &latent_fit, &d, &masks);
        assert!(grad.amax() / data.n() as f64 <= TOL, "gradient in B at its solve");
        done += 1;
    }
    assert!(memberships_checked > 0);
}

pub fn analytic_gradients_match_finite_differences() {
    let mut seed = 0;
    let mut done = 0;
    while done < 10 {
        seed += 1;
        let inst = noisy_instance(seed, 4, Some(0.3));
        let Ok(masks) = ZiMasks::new(&inst.data) else { continue };
        let data = &inst.data;
        let q = inst.truth.clustering.q();
        let state = soft_state(data.n(), data.p(), q, seed);
        let params = &inst.truth.params;
        let d = params.noise.variances(data.p());
        let latent_fit = &state.m * state.tau.transpose();
        let mut g = rng::seeded(seed);
        let b = rng::standard_normal_matrix(&mut g, 1, data.p());

        let analytic = zi::gradient_b(data, &b, &latent_fit, &d, &masks);
        for j in 0..data.p() {
            let numeric = central_difference(
                |h| {
                    let mut bb = b.clone();
                    bb[(0, j)] += h;
                    zi::objective_b(data, &bb, &latent_fit, &d, &masks)
                },
                STEP,
            );
            assert!((numeric - analytic[(0, j)]).abs() <= TOL * (1.0 + analytic[(0, j)].abs()));
        }
        let analytic = zi::gradient_m(params, &state.m, &state.tau, data, &masks);
        for i in 0..data.n() {
            for k in 0..q {
                let numeric = central_difference(
                    |h| {
                        let mut m = state.m.clone();
                        m[(i, k)] += h;
                        zi::objective_m(params, &m, &state.tau, data, &masks)
                    },
                    STEP,
                );
                assert!((numeric - analytic[(i, k)]).abs() <= TOL * (1.0 + analytic[(i, k)].abs()));
            }
        }
        done += 1;
    }
}
