//! Property checks shared by the proptest suites and the acceptance run.
//! Each returns a description of the first violation.

use nalgebra::{DMatrix, DVector};
use normalblock::em;
use normalblock::glasso::{self, GlassoConfig};
use normalblock::rng;
use normalblock::selection;
use normalblock::sim::{self, Scenario};
use normalblock::vem;
use normalblock::zi;
use normalblock::{Dataset, FitOptions, FitResult, ModelParams, NoiseKind, VariationalState};

use super::*;

pub type Check = Result<(), String>;

pub fn opts(seed: u64) -> FitOptions {
    FitOptions {
        max_iter: 200,
        seed,
        ..FitOptions::default()
    }
}

fn non_decreasing(trace: &[f64], what: &str) -> Check {
    if trace.is_empty() {
        return Err(format!("{what}: empty trace"));
    }
    for (i, w) in trace.windows(2).enumerate() {
        if w[1] < w[0] - 1e-8 {
            return Err(format!("{what}: step {i} went {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

/// EM and VEM traces, plus both zero-inflated fits when the draw allows them.
pub fn monotone_traces(seed: u64) -> Check {
    let inst = instance(seed, 4, None);
    let (c, kind) = (&inst.truth.clustering, inst.truth.params.noise.kind());
    let o = opts(seed);
    let fit = em::fit_em_observed(&inst.data, c, kind, inst.lambda, None, &o).map_err(|e| e.to_string())?;
    non_decreasing(&fit.objective_trace, "em")?;
    let fit = vem::fit_vem(&inst.data, c.q(), kind, inst.lambda, None, &o).map_err(|e| e.to_string())?;
    non_decreasing(&fit.objective_trace, "vem")?;

    let inst = instance(seed, 3, Some(0.2));
    // Rows or columns without any nonzero entry are rejected up front.
    if zi::ZiMasks::new(&inst.data).is_err() {
        return Ok(());
    }
    let c = &inst.truth.clustering;
    let fit = zi::fit_zi_em_observed(&inst.data, c, inst.lambda, None, &o).map_err(|e| e.to_string())?;
    non_decreasing(&fit.objective_trace, "zi em")?;
    let fit = zi::fit_zi_vem(&inst.data, c.q(), inst.lambda, None, &o).map_err(|e| e.to_string())?;
    non_decreasing(&fit.objective_trace, "zi vem")
}

/// Random sample covariance and penalty, with or without a diagonal penalty.
pub fn glasso_kkt(seed: u64) -> Check {
    let dim = 2 + (seed % 7) as usize;
    let rows = 3 + (seed / 7 % 37) as usize;
    let frac = 0.01 + (seed / 259 % 100) as f64 / 80.0;
    let diag = seed % 2 == 1;
    let mut g = rng::seeded(seed);
    let z = rng::standard_normal_matrix(&mut g, rows, dim);
    let s = (z.transpose() * &z) / rows as f64 + DMatrix::identity(dim, dim) * 1e-3;
    let lambda = frac * glasso::lambda_max(&s).max(1e-3);
    let cfg = GlassoConfig {
        penalize_diagonal: diag,
        ..GlassoConfig::default()
    };
    let fit = glasso::glasso(&s, lambda, &cfg).map_err(|e| e.to_string())?;
    let r = glasso::kkt_residual(&s, &fit.omega, &fit.sigma, lambda, diag);
    if r <= cfg.tol {
        Ok(())
    } else {
        Err(format!("seed {seed}: KKT residual {r}"))
    }
}

/// Posterior moments against dense conditioning of the joint law of
/// `(W, Y)`, on problems with at most six variables.
pub fn block_inversion(seed: u64) -> Check {
    let p = 2 + (seed % 5) as usize;
    let q = 1 + (seed / 5 % p.min(3) as u64) as usize;
    let mut scenario = Scenario::new(structure_for(seed), 5 + (seed % 20) as usize, p, q);
    if seed % 2 == 1 {
        scenario.noise = NoiseKind::Spherical;
    }
    let (data, truth) = sim::generate(&scenario, seed).map_err(|e| e.to_string())?;
    let (params, c) = (&truth.params, &truth.clustering);
    let cm = c.one_hot();
    let sigma = params.sigma();
    let cov_y = &cm * sigma * cm.transpose() + DMatrix::from_diagonal(&params.noise.variances(p));
    let cov_wy = sigma * cm.transpose();
    let inv = cov_y.try_inverse().ok_or("singular marginal covariance")?;
    let gamma = sigma - &cov_wy * &inv * cov_wy.transpose();
    let mu = data.residuals(&params.b) * &inv * cov_wy.transpose();
    let moments = em::e_step(params, c, &data).map_err(|e| e.to_string())?;
    let err = (&moments.gamma - &gamma).amax().max((&moments.mu - &mu).amax());
    if err <= 1e-10 {
        Ok(())
    } else {
        Err(format!("seed {seed}: moment error {err}"))
    }
}

fn permute_fit(fit: &FitResult, perm: &[usize]) -> Result<FitResult, String> {
    let mut out = fit.clone();
    out.params = fit.params.permuted(perm);
    out.clustering = fit.clustering.permuted(perm).map_err(|e| e.to_string())?;
    out.varstate = fit.varstate.as_ref().map(|vs| VariationalState {
        m: permute_columns(&vs.m, perm),
        s: permute_columns(&vs.s, perm),
        tau: permute_columns(&vs.tau, perm),
    });
    out.network = normalblock::extract_network(out.params.omega(), fit.lambda, FitOptions::default().zero_tol)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs())
}

/// `J` and every criterion are unchanged by renaming clusters.
pub fn label_permutation(seed: u64) -> Check {
    let inst = instance(seed, 4, None);
    let c = &inst.truth.clustering;
    let q = c.q();
    let shift = 1 + (seed % 3) as usize;
    let perm: Vec<usize> = (0..q).map(|k| (k + shift) % q).collect();
    let params = &inst.truth.params;
    let pc = c.permuted(&perm).map_err(|e| e.to_string())?;
    let pp = params.permuted(&perm);
    let e = |r: normalblock::Result<f64>| r.map_err(|e| e.to_string());
    let moments = em::e_step(params, c, &inst.data).map_err(|e| e.to_string())?;
    let pm = em::e_step(&pp, &pc, &inst.data).map_err(|e| e.to_string())?;
    let j = e(em::em_objective(params, c, &inst.data, &moments))?;
    let pj = e(em::em_objective(&pp, &pc, &inst.data, &pm))?;
    if !close(j, pj, 1e-9) {
        return Err(format!("seed {seed}: J {j} vs {pj}"));
    }
    let fit = vem::fit_vem(&inst.data, q, params.noise.kind(), inst.lambda, None, &opts(seed)).map_err(|e| e.to_string())?;
    let permuted = permute_fit(&fit, &perm)?;
    let (a, b) = (selection::criteria(&fit, &inst.data), selection::criteria(&permuted, &inst.data));
    let pairs = [(a.bic, b.bic), (a.ebic, b.ebic), (a.icl, b.icl), (a.log_like_bound, b.log_like_bound)];
    if pairs.iter().all(|&(x, y)| close(x, y, 1e-8)) && a.n_params == b.n_params {
        Ok(())
    } else {
        Err(format!("seed {seed}: criteria {a:?} vs {b:?}"))
    }
}

/// Marginal likelihood with memberships summed out, at fixed parameters.
pub fn enumerated_log_likelihood(params: &ModelParams, data: &Dataset, q: usize) -> Result<f64, String> {
    let alpha = params.alpha.clone().unwrap_or_else(|| DVector::from_element(q, 1.0 / q as f64));
    let mut terms = Vec::new();
    for c in all_assignments(data.p(), q) {
        let prior: f64 = c.labels().iter().map(|&k| alpha[k].ln()).sum();
        terms.push(prior + em::log_likelihood(params, &c, data).map_err(|e| e.to_string())?);
    }
    Ok(log_sum_exp(&terms))
}

/// The converged ELBO never exceeds the enumerated marginal likelihood
/// (`p <= 4`, two clusters).
pub fn enumeration_bound(seed: u64) -> Check {
    let p = 2 + (seed % 3) as usize;
    let mut scenario = Scenario::new(structure_for(seed), 6 + (seed % 10) as usize, p, 2);
    scenario.noise_range = (0.3, 1.5);
    let (data, _) = sim::generate(&scenario, seed).map_err(|e| e.to_string())?;
    let fit = vem::fit_vem(&data, 2, NoiseKind::Diagonal, 0.0, None, &opts(seed)).map_err(|e| e.to_string())?;
    let vs = fit.varstate.as_ref().ok_or("no variational state")?;
    let bound = vem::elbo(&fit.params, vs, &data).map_err(|e| e.to_string())?;
    let exact = enumerated_log_likelihood(&fit.params, &data, 2)?;
    if bound <= exact + 1e-8 * (1.0 + exact.abs()) {
        Ok(())
    } else {
        Err(format!("seed {seed}: elbo {bound} > log p(Y) {exact}"))
    }
}

/// First failure over `count` seeds.
pub fn over_seeds(count: u64, check: impl Fn(u64) -> Check) -> Check {
    (0..count).try_for_each(|s| check(rng::derive_seed(0x5eed, s)))
}
