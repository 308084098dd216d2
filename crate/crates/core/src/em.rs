//! EM for the observed-clusters model, diagonal or spherical noise, with an
//! optional off-diagonal ℓ1 penalty on Ω solved by the graphical lasso.
//!
//! The penalty is expressed on the per-observation scale used by
//! [`crate::glasso::glasso`]: the penalised criterion is
//! `J - (n/2) λ ||Ω||_1,off`, so the Ω update is exactly `glasso(Σ̂, λ)`.
//!
//! The recorded trace is the penalised marginal log-likelihood
//! `log p(Y) - (n/2) λ ||Ω||_1,off`, i.e. `J` plus the entropy of the exact
//! Gaussian posterior. EM guarantees this quantity never decreases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glasso;
use crate::linalg::{self, Design, LN_2PI};
use crate::selection;
use crate::twostep;
use crate::types::{
    extract_network, ClusterAssignment, Dataset, FitMethod, FitOptions, FitResult, ModelKind,
    ModelParams, Noise, NoiseKind, VariationalState,
};

/// Posterior `W_i | Y_i ~ N(mu_i, gamma)`; the covariance is shared by all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mu: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl PosteriorMoments {
    /// `R_μ = Y - X B - μ Cᵀ`
    pub fn residuals(&self, params: &ModelParams, assignment: &ClusterAssignment, data: &Dataset) -> DMatrix<f64> {
        data.residuals(&params.b) - &self.mu * assignment.one_hot().transpose()
    }
}

pub(crate) fn check_shapes(params: &ModelParams, assignment: &ClusterAssignment, data: &Dataset) -> Result<()> {
    if params.b.shape() != (data.d_cov(), data.p()) {
        return Err(Error::Shape(format!(
            "B is {:?}, expected ({}, {})",
            params.b.shape(),
            data.d_cov(),
            data.p()
        )));
    }
    if assignment.p() != data.p() || assignment.q() != params.q() {
        return Err(Error::Shape("clustering does not match data/parameters".into()));
    }
    if let Noise::Diagonal(d) = &params.noise {
        if d.len() != data.p() {
            return Err(Error::Shape("noise vector length differs from p".into()));
        }
    }
    Ok(())
}

/// `(Cᵀ D⁻¹ C)` as a vector of per-cluster precision sums.
fn cluster_precision(dinv: &DVector<f64>, assignment: &ClusterAssignment) -> DVector<f64> {
    let mut out = DVector::zeros(assignment.q());
    for (j, &k) in assignment.labels().iter().enumerate() {
        out[k] += dinv[j];
    }
    out
}

pub fn e_step(params: &ModelParams, assignment: &ClusterAssignment, data: &Dataset) -> Result<PosteriorMoments> {
    check_shapes(params, assignment, data)?;
    let p = data.p();
    let q = assignment.q();
    let dinv = params.noise.variances(p).map(|v| 1.0 / v);
    let mut prec = params.omega().clone();
    let cp = cluster_precision(&dinv, assignment);
    for k in 0..q {
        prec[(k, k)] += cp[k];
    }
    let gamma = linalg::spd_inverse(&prec, "C^T D^-1 C + Omega")?;
    let r = data.residuals(&params.b);
    // R D⁻¹ C, accumulated column by column.
    let mut rdc = DMatrix::zeros(data.n(), q);
    for (j, &k) in assignment.labels().iter().enumerate() {
        let mut col = rdc.column_mut(k);
        col.axpy(dinv[j], &r.column(j), 1.0);
    }
    Ok(PosteriorMoments {
        mu: rdc * &gamma,
        gamma,
    })
}

/// The EM criterion `J(θ)` at fixed posterior moments.
pub fn em_objective(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    data: &Dataset,
    moments: &PosteriorMoments,
) -> Result<f64> {
    check_shapes(params, assignment, data)?;
    let (n, p, q) = (data.n() as f64, data.p(), assignment.q() as f64);
    let d = params.noise.variances(p);
    let r_mu = moments.residuals(params, assignment, data);
    let mut quad = 0.0;
    for (j, &k) in assignment.labels().iter().enumerate() {
        let ss = r_mu.column(j).norm_squared();
        quad += (ss + n * moments.gamma[(k, k)]) / d[j];
    }
    let logdet_omega = linalg::logdet_spd(params.omega(), "omega")?;
    let omega_term = linalg::trace_product(
        params.omega(),
        &(&moments.gamma * n + moments.mu.transpose() * &moments.mu),
    );
    Ok(-0.5 * n * p as f64 * LN_2PI - 0.5 * n * d.iter().map(|v| v.ln()).sum::<f64>() - 0.5 * quad
        - 0.5 * n * q * LN_2PI
        + 0.5 * n * logdet_omega
        - 0.5 * omega_term)
}

/// `J - (n/2) λ ||Ω||_1,off`.
pub fn penalized_em_objective(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    data: &Dataset,
    moments: &PosteriorMoments,
    lambda: f64,
) -> Result<f64> {
    Ok(em_objective(params, assignment, data, moments)? - penalty(params.omega(), data.n(), lambda))
}

pub(crate) fn penalty(omega: &DMatrix<f64>, n: usize, lambda: f64) -> f64 {
    0.5 * n as f64 * lambda * linalg::l1_off(omega)
}

/// Entropy of the n Gaussian posteriors.
pub fn posterior_entropy(moments: &PosteriorMoments) -> Result<f64> {
    let n = moments.mu.nrows() as f64;
    let q = moments.gamma.nrows() as f64;
    let logdet = linalg::logdet_spd(&moments.gamma, "gamma")?;
    Ok(0.5 * n * (q * (LN_2PI + 1.0) + logdet))
}

/// Exact marginal log-likelihood `Σ_i log N(Y_i; Bᵀ X_i, D + C Σ Cᵀ)`,
/// evaluated through the posterior (Woodbury) identity.
pub fn log_likelihood(params: &ModelParams, assignment: &ClusterAssignment, data: &Dataset) -> Result<f64> {
    let moments = e_step(params, assignment, data)?;
    Ok(em_objective(params, assignment, data, &moments)? + posterior_entropy(&moments)?)
}

/// Closed-form M-step. `kind` selects diagonal (`d̂`) or spherical (`ξ̂`) noise.
pub fn m_step(
    moments: &PosteriorMoments,
    assignment: &ClusterAssignment,
    data: &Dataset,
    kind: NoiseKind,
    lambda: f64,
    cfg: &glasso::GlassoConfig,
) -> Result<ModelParams> {
    let design = Design::new(data.x())?;
    m_step_with(moments, assignment, data, kind, lambda, cfg, &design)
}

fn m_step_with(
    moments: &PosteriorMoments,
    assignment: &ClusterAssignment,
    data: &Dataset,
    kind: NoiseKind,
    lambda: f64,
    cfg: &glasso::GlassoConfig,
    design: &Design,
) -> Result<ModelParams> {
    let n = data.n() as f64;
    let c = assignment.one_hot();
    let mu_ct = &moments.mu * c.transpose();
    let b = design.solve(&(data.y() - &mu_ct));
    let r_mu = data.y() - data.x() * &b - mu_ct;
    let d = DVector::from_fn(data.p(), |j, _| {
        r_mu.column(j).norm_squared() / n + moments.gamma[(assignment.labels()[j], assignment.labels()[j])]
    });
    let sigma_hat = linalg::symmetrize(&(moments.mu.transpose() * &moments.mu / n + &moments.gamma));
    let (omega, sigma) = glasso::precision_step(&sigma_hat, lambda, cfg)?;
    let mut params = ModelParams::new(b, DMatrix::identity(1, 1), Noise::from_variances(kind, d))?;
    params.set_omega_sigma(omega, sigma);
    Ok(params)
}

/// Ω-dependent part of the penalised criterion for a fixed `Σ̂`.
pub(crate) fn omega_part(omega: &DMatrix<f64>, sigma_hat: &DMatrix<f64>, n: usize, lambda: f64) -> f64 {
    match linalg::logdet_spd(omega, "omega") {
        Ok(ld) => {
            0.5 * n as f64 * (ld - linalg::trace_product(sigma_hat, omega) - lambda * linalg::l1_off(omega))
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Keep the previous precision when the solver's answer does not improve
/// the criterion (only possible through solver tolerance).
pub(crate) fn guard_omega(
    new: &mut ModelParams,
    prev: &ModelParams,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    lambda: f64,
) {
    if lambda > 0.0
        && omega_part(prev.omega(), sigma_hat, n, lambda) > omega_part(new.omega(), sigma_hat, n, lambda)
    {
        new.set_omega_sigma(prev.omega().clone(), prev.sigma().clone());
    }
}

/// EM with a fixed clustering. Without `init`, starts from the two-step
/// estimates for this clustering.
pub fn fit_em_observed(
    data: &Dataset,
    assignment: &ClusterAssignment,
    kind: NoiseKind,
    lambda: f64,
    init: Option<ModelParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    let design = Design::new(data.x())?;
    let mut params = match init {
        Some(p) => p,
        None => twostep::initial_params(data, assignment, kind)?,
    };
    if params.noise.kind() != kind {
        let d = params.noise.variances(data.p());
        params.noise = Noise::from_variances(kind, d);
    }
    let n = data.n();
    let mut moments = e_step(&params, assignment, data)?;
    let mut obj = penalized_em_objective(&params, assignment, data, &moments, lambda)? + posterior_entropy(&moments)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut next = m_step_with(&moments, assignment, data, kind, lambda, &opts.glasso, &design)?;
        let sigma_hat = linalg::symmetrize(&(moments.mu.transpose() * &moments.mu / n as f64 + &moments.gamma));
        guard_omega(&mut next, &params, &sigma_hat, n, lambda);
        params = next;
        moments = e_step(&params, assignment, data)?;
        let new_obj =
            penalized_em_objective(&params, assignment, data, &moments, lambda)? + posterior_entropy(&moments)?;
        trace.push(new_obj);
        let delta = (new_obj - obj).abs();
        obj = new_obj;
        if delta <= opts.tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("observed-cluster EM stopped after {iterations} iterations without converging");
    }
    let kind_info = ModelKind {
        method: FitMethod::ObservedEm,
        zero_inflated: false,
    };
    let network = extract_network(params.omega(), lambda, opts.zero_tol)?;
    let loglik = obj + penalty(params.omega(), n, lambda);
    let criteria = selection::criteria_for(kind_info, &params, assignment.q(), data, loglik, 0.0, &network);
    let varstate = VariationalState {
        s: DMatrix::from_fn(n, assignment.q(), |_, k| moments.gamma[(k, k)]),
        m: moments.mu,
        tau: assignment.one_hot(),
    };
    Ok(FitResult {
        kind: kind_info,
        lambda,
        params,
        varstate: Some(varstate),
        clustering: assignment.clone(),
        objective_trace: trace,
        criteria,
        network,
        converged,
        iterations,
    })
}
