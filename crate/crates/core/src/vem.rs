//! Variational EM for latent clusters. The posterior over `(W, C)` is
//! approximated by independent Gaussians on the rows of `W` (means `M`,
//! diagonal variances `S`) and independent categoricals on the variables
//! (memberships `tau`).
//!
//! Every update is the exact maximiser of the ELBO in its block, so the
//! recorded (penalised) ELBO never decreases.

use nalgebra::{DMatrix, DVector};

use crate::em::{guard_omega, penalty};
use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig};
use crate::linalg::{self, Design, LN_2PI};
use crate::selection;
use crate::twostep;
use crate::types::{
    extract_network, ClusterAssignment, Dataset, FitMethod, FitOptions, FitResult, ModelKind,
    ModelParams, Noise, NoiseKind, VariationalState,
};

/// Lower bound on membership probabilities.
pub const TAU_FLOOR: f64 = 1e-12;

/// Starting point for [`fit_vem`].
#[derive(Debug, Clone, PartialEq)]
pub struct VemInit {
    pub clustering: ClusterAssignment,
    /// Defaults to the two-step estimates at `clustering`.
    pub params: Option<ModelParams>,
}

fn check(params: &ModelParams, vs: &VariationalState, data: &Dataset) -> Result<()> {
    let (n, p, q) = (data.n(), data.p(), params.q());
    if vs.m.shape() != (n, q) || vs.s.shape() != (n, q) || vs.tau.shape() != (p, q) {
        return Err(Error::Shape("variational state does not match data and q".into()));
    }
    if params.b.shape() != (data.d_cov(), p) {
        return Err(Error::Shape("B does not match data".into()));
    }
    Ok(())
}

/// Mixing weights, uniform when the parameters carry none.
pub(crate) fn alpha_or_uniform(params: &ModelParams, q: usize) -> DVector<f64> {
    params
        .alpha
        .clone()
        .unwrap_or_else(|| DVector::from_element(q, 1.0 / q as f64))
}

/// `A = R² - 2 R∘(M τᵀ) + (M² + S) τᵀ`, evaluated as a squared error plus a
/// nonnegative variance so it stays nonnegative in floating point.
pub(crate) fn expected_sq_residuals(r: &DMatrix<f64>, vs: &VariationalState) -> DMatrix<f64> {
    let fitted = &vs.m * vs.tau.transpose();
    let second = (vs.m.component_mul(&vs.m) + &vs.s) * vs.tau.transpose();
    let mut a = (r - &fitted).map(|v| v * v);
    a.zip_zip_apply(&second, &fitted, |x, s, f| *x += (s - f * f).max(0.0));
    a
}

/// The ELBO (no penalty).
pub fn elbo(params: &ModelParams, vs: &VariationalState, data: &Dataset) -> Result<f64> {
    check(params, vs, data)?;
    let (n, p, q) = (data.n() as f64, data.p(), params.q());
    let d = params.noise.variances(p);
    let a = expected_sq_residuals(&data.residuals(&params.b), vs);
    let mut quad = 0.0;
    for j in 0..p {
        quad += a.column(j).sum() / d[j];
    }
    let s_colsum = DVector::from_fn(q, |k, _| vs.s.column(k).sum());
    let omega = params.omega();
    let omega_term = linalg::trace_product(omega, &(vs.m.transpose() * &vs.m))
        + (0..q).map(|k| omega[(k, k)] * s_colsum[k]).sum::<f64>();
    let alpha = alpha_or_uniform(params, q);
    let mut membership = 0.0;
    for j in 0..p {
        for k in 0..q {
            membership += linalg::xlogy(vs.tau[(j, k)], alpha[k]) - linalg::xlogx(vs.tau[(j, k)]);
        }
    }
    Ok(-0.5 * n * p as f64 * LN_2PI - 0.5 * n * d.iter().map(|v| v.ln()).sum::<f64>() - 0.5 * quad
        + 0.5 * n * linalg::logdet_spd(omega, "omega")?
        - 0.5 * omega_term
        + 0.5 * n * q as f64
        + 0.5 * vs.s.iter().map(|v| v.ln()).sum::<f64>()
        + membership)
}

pub fn penalized_elbo(params: &ModelParams, vs: &VariationalState, data: &Dataset, lambda: f64) -> Result<f64> {
    Ok(elbo(params, vs, data)? - penalty(params.omega(), data.n(), lambda))
}

/// Maximiser of `Σ_k t_k η_k - Σ_k t_k log t_k` over the simplex with every
/// `t_k >= floor`: `t_k = max(floor, exp(η_k - ν))` with `ν` set by water-filling.
pub(crate) fn floored_softmax(eta: &[f64], floor: f64) -> Vec<f64> {
    let q = eta.len();
    if q == 1 {
        return vec![1.0];
    }
    let top = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|&e| (e - top).exp()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
    // Floor the `m` smallest weights; the rest share the remaining mass.
    let mut tail: f64 = w.iter().sum();
    for m in 0..q {
        let scale = (1.0 - m as f64 * floor) / tail;
        if w[order[m]] * scale >= floor {
            let mut t = vec![floor; q];
            for &k in &order[m..] {
                t[k] = w[k] * scale;
            }
            return t;
        }
        tail -= w[order[m]];
    }
    unreachable!("the largest weight always clears the floor")
}

/// Membership update given `(M, S)` and the parameters.
pub fn update_tau(params: &ModelParams, vs: &VariationalState, data: &Dataset) -> Result<DMatrix<f64>> {
    check(params, vs, data)?;
    let (p, q) = (data.p(), params.q());
    let d = params.noise.variances(p);
    let rm = data.residuals(&params.b).transpose() * &vs.m;
    let second = DVector::from_fn(q, |k, _| {
        vs.m.column(k).norm_squared() + vs.s.column(k).sum()
    });
    let la = alpha_or_uniform(params, q).map(f64::ln);
    let mut tau = DMatrix::zeros(p, q);
    for j in 0..p {
        let eta: Vec<f64> = (0..q).map(|k| (rm[(j, k)] - 0.5 * second[k]) / d[j] + la[k]).collect();
        for (k, t) in floored_softmax(&eta, TAU_FLOOR).into_iter().enumerate() {
            tau[(j, k)] = t;
        }
    }
    Ok(tau)
}

/// Gaussian block given memberships: `M = R D⁻¹ τ Γ̃` with
/// `Γ̃ = (Ω + Diag(τᵀ d⁻¹))⁻¹`, and `S_ik = 1 / (Ω_kk + Σ_j τ_jk / d_j)`.
pub fn update_gaussian(
    params: &ModelParams,
    tau: &DMatrix<f64>,
    data: &Dataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, q) = (data.n(), data.p(), params.q());
    if tau.shape() != (p, q) {
        return Err(Error::Shape("tau must be p x q".into()));
    }
    let dinv = params.noise.variances(p).map(|v| 1.0 / v);
    let precision_sums = tau.transpose() * &dinv;
    let mut prec = params.omega().clone();
    for k in 0..q {
        prec[(k, k)] += precision_sums[k];
    }
    let gamma = linalg::spd_inverse(&prec, "omega + Diag(tau^T d^-1)")?;
    let mut scaled = data.residuals(&params.b);
    for j in 0..p {
        let mut c = scaled.column_mut(j);
        c *= dinv[j];
    }
    let m = scaled * tau * gamma;
    let s = DMatrix::from_fn(n, q, |_, k| 1.0 / prec[(k, k)]);
    Ok((m, s))
}

/// Memberships first, then the Gaussian block.
pub fn ve_step(params: &ModelParams, vs: &VariationalState, data: &Dataset) -> Result<VariationalState> {
    let tau = update_tau(params, vs, data)?;
    let (m, s) = update_gaussian(params, &tau, data)?;
    Ok(VariationalState { m, s, tau })
}

/// `Σ̂ = (MᵀM + Diag(colsum S)) / n`
pub(crate) fn sigma_hat(vs: &VariationalState) -> DMatrix<f64> {
    let n = vs.m.nrows() as f64;
    let mut s = vs.m.transpose() * &vs.m;
    for k in 0..s.nrows() {
        s[(k, k)] += vs.s.column(k).sum();
    }
    linalg::symmetrize(&(s / n))
}

/// Closed-form parameter updates in the order B, noise, Ω, α.
pub fn m_step(
    vs: &VariationalState,
    data: &Dataset,
    kind: NoiseKind,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<ModelParams> {
    m_step_with(vs, data, kind, lambda, cfg, &Design::new(data.x())?)
}

fn m_step_with(
    vs: &VariationalState,
    data: &Dataset,
    kind: NoiseKind,
    lambda: f64,
    cfg: &GlassoConfig,
    design: &Design,
) -> Result<ModelParams> {
    let n = data.n() as f64;
    let b = design.solve(&(data.y() - &vs.m * vs.tau.transpose()));
    let a = expected_sq_residuals(&data.residuals(&b), vs);
    let d = DVector::from_fn(data.p(), |j, _| a.column(j).sum() / n);
    let noise = Noise::from_variances(kind, d);
    if let Some(j) = noise.variances(data.p()).iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateColumn(j));
    }
    let (omega, sigma) = glasso::precision_step(&sigma_hat(vs), lambda, cfg)?;
    let alpha = DVector::from_fn(vs.tau.ncols(), |k, _| vs.tau.column(k).mean());
    let alpha = &alpha / alpha.sum();
    let mut params = ModelParams::new(b, DMatrix::identity(1, 1), noise)?.with_alpha(alpha)?;
    params.set_omega_sigma(omega, sigma);
    Ok(params)
}

/// One-hot memberships pushed onto the floored simplex.
pub(crate) fn floored_one_hot(assignment: &ClusterAssignment) -> DMatrix<f64> {
    let q = assignment.q();
    if q == 1 {
        return assignment.one_hot();
    }
    assignment
        .one_hot()
        .map(|v| if v > 0.5 { 1.0 - (q - 1) as f64 * TAU_FLOOR } else { TAU_FLOOR })
}

/// Default start: two-step with residual k-means.
pub(crate) fn default_init(data: &Dataset, q: usize, kind: NoiseKind, seed: u64) -> Result<VemInit> {
    if q == 0 || q > data.p() {
        return Err(Error::InvalidParameter(format!("q must lie in [1, {}]", data.p())));
    }
    let mlr = twostep::mlr_fit(data)?;
    let clustering = twostep::kmeans_columns(&mlr.residuals, q, seed, twostep::KMEANS_RESTARTS)?;
    let params = twostep::params_from_pieces(mlr.b, &mlr.gamma, &mlr.gamma.diagonal(), &clustering, kind)?;
    Ok(VemInit {
        clustering,
        params: Some(params),
    })
}

pub(crate) fn with_cluster_proportions(params: ModelParams, assignment: &ClusterAssignment) -> Result<ModelParams> {
    let p = assignment.p() as f64;
    let q = assignment.q();
    let sizes = assignment.sizes();
    let raw = DVector::from_fn(q, |k, _| (sizes[k] as f64 / p).max(TAU_FLOOR));
    let total = raw.sum();
    params.with_alpha(raw / total)
}

/// Variational EM with `q` latent clusters.
pub fn fit_vem(
    data: &Dataset,
    q: usize,
    kind: NoiseKind,
    lambda: f64,
    init: Option<VemInit>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    let init = match init {
        Some(i) => i,
        None => default_init(data, q, kind, opts.seed)?,
    };
    if init.clustering.q() != q || init.clustering.p() != data.p() {
        return Err(Error::Shape("initial clustering does not match q and p".into()));
    }
    let design = Design::new(data.x())?;
    let mut params = match init.params {
        Some(p) => p,
        None => twostep::initial_params(data, &init.clustering, kind)?,
    };
    if params.noise.kind() != kind {
        params.noise = Noise::from_variances(kind, params.noise.variances(data.p()));
    }
    if params.alpha.is_none() {
        params = with_cluster_proportions(params, &init.clustering)?;
    }
    let tau = floored_one_hot(&init.clustering);
    let (m, s) = update_gaussian(&params, &tau, data)?;
    let mut vs = VariationalState { m, s, tau };

    let n = data.n();
    let mut obj = penalized_elbo(&params, &vs, data, lambda)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        vs = ve_step(&params, &vs, data)?;
        let mut next = m_step_with(&vs, data, kind, lambda, &opts.glasso, &design)?;
        guard_omega(&mut next, &params, &sigma_hat(&vs), n, lambda);
        params = next;
        let new_obj = penalized_elbo(&params, &vs, data, lambda)?;
        trace.push(new_obj);
        let delta = (new_obj - obj).abs();
        obj = new_obj;
        if delta <= opts.tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("VEM (q = {q}) stopped after {iterations} iterations without converging");
    }
    let kind_info = ModelKind {
        method: FitMethod::LatentVem,
        zero_inflated: false,
    };
    let clustering = vs.hard_clustering()?;
    let network = extract_network(params.omega(), lambda, opts.zero_tol)?;
    let bound = obj + penalty(params.omega(), n, lambda);
    let criteria = selection::criteria_for(kind_info, &params, q, data, bound, vs.membership_entropy(), &network);
    Ok(FitResult {
        kind: kind_info,
        lambda,
        params,
        varstate: Some(vs),
        clustering,
        objective_trace: trace,
        criteria,
        network,
        converged,
        iterations,
    })
}
