//! Zero-inflated variants. Each entry is an exact zero with a per-variable
//! probability `kappa_j`, otherwise drawn from the Gaussian model. Since the
//! Gaussian puts no mass on zero, every exact zero is attributed to the
//! inflation layer and the remaining entries are observed Gaussians.
//!
//! The log-density of the point mass at its atom is taken as 0, so these
//! objectives are only comparable between fits of the same zero pattern.
//!
//! Inner updates for `B` and `M` maximise concave quadratics and are solved
//! exactly (per-column weighted least squares, per-row linear systems).
//! [`objective_b`], [`gradient_b`], [`objective_m`] and [`gradient_m`]
//! expose those sub-problems for checking.

use nalgebra::{DMatrix, DVector};

use crate::em::{guard_omega, penalty};
use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig};
use crate::linalg::{self, LN_2PI};
use crate::selection;
use crate::twostep;
use crate::types::{
    extract_network, ClusterAssignment, Dataset, FitMethod, FitOptions, FitResult, ModelKind,
    ModelParams, Noise, NoiseKind, VariationalState,
};
use crate::vem::{self, VemInit};

/// Which entries are observed (nonzero) and per-column counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ZiMasks {
    ones: DMatrix<bool>,
    n_nonzero: Vec<usize>,
    total_nonzero: usize,
}

impl ZiMasks {
    /// Fails on a row or column without any nonzero entry.
    pub fn new(data: &Dataset) -> Result<Self> {
        let y = data.y();
        let ones = y.map(|v| v != 0.0);
        if let Some(i) = (0..data.n()).find(|&i| !ones.row(i).iter().any(|&b| b)) {
            return Err(Error::DegenerateRow(i));
        }
        let n_nonzero: Vec<usize> = (0..data.p()).map(|j| ones.column(j).iter().filter(|&&b| b).count()).collect();
        if let Some(j) = n_nonzero.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateColumn(j));
        }
        let total_nonzero = n_nonzero.iter().sum();
        Ok(Self {
            ones,
            n_nonzero,
            total_nonzero,
        })
    }

    pub fn ones(&self) -> &DMatrix<bool> {
        &self.ones
    }

    pub fn n_nonzero(&self) -> &[usize] {
        &self.n_nonzero
    }

    pub fn total_nonzero(&self) -> usize {
        self.total_nonzero
    }

    pub fn ones_f64(&self) -> DMatrix<f64> {
        self.ones.map(|b| if b { 1.0 } else { 0.0 })
    }

    /// Per-column zero frequency.
    pub fn kappa(&self) -> DVector<f64> {
        let n = self.ones.nrows() as f64;
        DVector::from_fn(self.n_nonzero.len(), |j, _| 1.0 - self.n_nonzero[j] as f64 / n)
    }

    /// Mean of squared (already masked) residuals over the nonzero rows.
    pub(crate) fn nonzero_variances(&self, masked_residuals: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_nonzero.len(), |j, _| {
            masked_residuals.column(j).norm_squared() / self.n_nonzero[j] as f64
        })
    }

    /// `Σ_ij 0_ij log κ_j + 1_ij log(1 - κ_j)`
    fn inflation_term(&self, kappa: &DVector<f64>) -> f64 {
        let n = self.ones.nrows();
        (0..self.n_nonzero.len())
            .map(|j| {
                let zeros = (n - self.n_nonzero[j]) as f64;
                linalg::xlogy(zeros, kappa[j]) + linalg::xlogy(self.n_nonzero[j] as f64, 1.0 - kappa[j])
            })
            .sum()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.ones.shape() != (data.n(), data.p()) {
            return Err(Error::Shape("masks do not match data".into()));
        }
        Ok(())
    }
}

fn kappa_of(params: &ModelParams, masks: &ZiMasks) -> DVector<f64> {
    params.kappa.clone().unwrap_or_else(|| masks.kappa())
}

fn diagonal_noise(params: &ModelParams, p: usize) -> Result<DVector<f64>> {
    match params.noise.kind() {
        NoiseKind::Diagonal => Ok(params.noise.variances(p)),
        NoiseKind::Spherical => Err(Error::InvalidParameter(
            "zero-inflated models use diagonal noise".into(),
        )),
    }
}

/// Per-row posterior moments: row `i` has mean `mu[i]` and covariance `gammas[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZiMoments {
    pub mu: DMatrix<f64>,
    pub gammas: Vec<DMatrix<f64>>,
}

impl ZiMoments {
    pub fn gamma_sum(&self) -> DMatrix<f64> {
        let q = self.mu.ncols();
        self.gammas.iter().fold(DMatrix::zeros(q, q), |acc, g| acc + g)
    }
}

/// Posterior of `W_i` given the nonzero coordinates of `Y_i`.
pub fn zi_e_step_observed(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    data: &Dataset,
    masks: &ZiMasks,
) -> Result<ZiMoments> {
    crate::em::check_shapes(params, assignment, data)?;
    masks.check(data)?;
    let (n, q) = (data.n(), assignment.q());
    let d = diagonal_noise(params, data.p())?;
    let r = data.residuals(&params.b);
    let mut mu = DMatrix::zeros(n, q);
    let mut gammas = Vec::with_capacity(n);
    for i in 0..n {
        let mut prec = params.omega().clone();
        let mut rhs = DVector::zeros(q);
        for (j, &k) in assignment.labels().iter().enumerate() {
            if masks.ones[(i, j)] {
                prec[(k, k)] += 1.0 / d[j];
                rhs[k] += r[(i, j)] / d[j];
            }
        }
        let gamma = linalg::spd_inverse(&prec, "per-row posterior precision")?;
        mu.set_row(i, &(&gamma * rhs).transpose());
        gammas.push(gamma);
    }
    Ok(ZiMoments { mu, gammas })
}

/// Zero-inflated EM criterion at fixed per-row moments.
pub fn zi_em_objective(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    data: &Dataset,
    masks: &ZiMasks,
    moments: &ZiMoments,
) -> Result<f64> {
    let (n, p, q) = (data.n(), data.p(), assignment.q());
    let d = diagonal_noise(params, p)?;
    let r_mu = data.residuals(&params.b) - &moments.mu * assignment.one_hot().transpose();
    let mut gauss = 0.0;
    for i in 0..n {
        for (j, &k) in assignment.labels().iter().enumerate() {
            if masks.ones[(i, j)] {
                gauss += -0.5 * (LN_2PI + d[j].ln()) - 0.5 * (r_mu[(i, j)].powi(2) + moments.gammas[i][(k, k)]) / d[j];
            }
        }
    }
    let second = moments.mu.transpose() * &moments.mu + moments.gamma_sum();
    let latent = -0.5 * (n * q) as f64 * LN_2PI + 0.5 * n as f64 * linalg::logdet_spd(params.omega(), "omega")?
        - 0.5 * linalg::trace_product(params.omega(), &second);
    Ok(masks.inflation_term(&kappa_of(params, masks)) + gauss + latent)
}

fn zi_posterior_entropy(moments: &ZiMoments) -> Result<f64> {
    let q = moments.mu.ncols() as f64;
    let mut h = 0.0;
    for g in &moments.gammas {
        h += 0.5 * (q * (LN_2PI + 1.0) + linalg::logdet_spd(g, "gamma")?);
    }
    Ok(h)
}

/// Exact log-likelihood of the observed-clusters zero-inflated model.
pub fn zi_log_likelihood(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    data: &Dataset,
    masks: &ZiMasks,
) -> Result<f64> {
    let moments = zi_e_step_observed(params, assignment, data, masks)?;
    Ok(zi_em_objective(params, assignment, data, masks, &moments)? + zi_posterior_entropy(&moments)?)
}

/// `F(B) = -½ Σ_ij 1_ij (Y - XB - L)_ij² / d_j` where `L` is the latent fit.
pub fn objective_b(data: &Dataset, b: &DMatrix<f64>, latent_fit: &DMatrix<f64>, d: &DVector<f64>, masks: &ZiMasks) -> f64 {
    let r = data.residuals(b) - latent_fit;
    let mut f = 0.0;
    for j in 0..data.p() {
        for i in 0..data.n() {
            if masks.ones[(i, j)] {
                f -= 0.5 * r[(i, j)].powi(2) / d[j];
            }
        }
    }
    f
}

/// `∇_B F = Xᵀ ((R D⁻¹) ∘ 1_Y)`
pub fn gradient_b(data: &Dataset, b: &DMatrix<f64>, latent_fit: &DMatrix<f64>, d: &DVector<f64>, masks: &ZiMasks) -> DMatrix<f64> {
    let mut r = data.residuals(b) - latent_fit;
    for j in 0..data.p() {
        for i in 0..data.n() {
            r[(i, j)] = if masks.ones[(i, j)] { r[(i, j)] / d[j] } else { 0.0 };
        }
    }
    data.x().transpose() * r
}

/// The part of the ZI ELBO that depends on `M`:
/// `Σ_ij 1_ij/d_j (R_ij (Mτᵀ)_ij - ½ Σ_k τ_jk M_ik²) - ½ tr(M Ω Mᵀ)`.
pub fn objective_m(params: &ModelParams, m: &DMatrix<f64>, tau: &DMatrix<f64>, data: &Dataset, masks: &ZiMasks) -> f64 {
    let d = params.noise.variances(data.p());
    let r = data.residuals(&params.b);
    let fit = m * tau.transpose();
    let sq = m.component_mul(m) * tau.transpose();
    let mut f = 0.0;
    for j in 0..data.p() {
        for i in 0..data.n() {
            if masks.ones[(i, j)] {
                f += (r[(i, j)] * fit[(i, j)] - 0.5 * sq[(i, j)]) / d[j];
            }
        }
    }
    f - 0.5 * linalg::trace_product(params.omega(), &(m.transpose() * m))
}

/// `∇_M F = (1_Y D⁻¹ ∘ R) τ - (1_Y D⁻¹ τ) ∘ M - M Ω`
pub fn gradient_m(params: &ModelParams, m: &DMatrix<f64>, tau: &DMatrix<f64>, data: &Dataset, masks: &ZiMasks) -> DMatrix<f64> {
    let d = params.noise.variances(data.p());
    let r = data.residuals(&params.b);
    let w = DMatrix::from_fn(data.n(), data.p(), |i, j| if masks.ones[(i, j)] { 1.0 / d[j] } else { 0.0 });
    w.component_mul(&r) * tau - (&w * tau).component_mul(m) - m * params.omega()
}

/// Observed-clusters M-step. B solves its weighted least-squares problem
/// exactly; `κ̂` is the empirical zero frequency.
pub fn zi_m_step_observed(
    moments: &ZiMoments,
    masks: &ZiMasks,
    assignment: &ClusterAssignment,
    data: &Dataset,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<ModelParams> {
    masks.check(data)?;
    let n = data.n() as f64;
    let labels = assignment.labels();
    let latent_fit = &moments.mu * assignment.one_hot().transpose();
    let ones = masks.ones_f64();
    let b = linalg::masked_column_ols(data.x(), &(data.y() - &latent_fit), &ones)?;
    let r_mu = data.residuals(&b) - latent_fit;
    let d = DVector::from_fn(data.p(), |j, _| {
        let mut acc = 0.0;
        for i in 0..data.n() {
            if masks.ones[(i, j)] {
                acc += r_mu[(i, j)].powi(2) + moments.gammas[i][(labels[j], labels[j])];
            }
        }
        acc / masks.n_nonzero[j] as f64
    });
    if let Some(j) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateColumn(j));
    }
    let sigma_hat = linalg::symmetrize(&((moments.mu.transpose() * &moments.mu + moments.gamma_sum()) / n));
    let (omega, sigma) = glasso::precision_step(&sigma_hat, lambda, cfg)?;
    let mut params = ModelParams::new(b, DMatrix::identity(1, 1), Noise::Diagonal(d))?.with_kappa(masks.kappa())?;
    params.set_omega_sigma(omega, sigma);
    Ok(params)
}

/// Starting values from the zero-inflated two-step pipeline at `assignment`.
pub(crate) fn zi_initial_params(data: &Dataset, assignment: &ClusterAssignment, masks: &ZiMasks) -> Result<ModelParams> {
    let (b, residuals, gamma) = zi_regression(data, masks)?;
    twostep::params_from_pieces(b, &gamma, &masks.nonzero_variances(&residuals), assignment, NoiseKind::Diagonal)?
        .with_kappa(masks.kappa())
}

/// Weighted OLS on nonzero rows; residuals zeroed where `Y` is zero.
fn zi_regression(data: &Dataset, masks: &ZiMasks) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let ones = masks.ones_f64();
    let b = linalg::masked_column_ols(data.x(), data.y(), &ones)?;
    let residuals = data.residuals(&b).component_mul(&ones);
    let gamma = linalg::symmetrize(&(residuals.transpose() * &residuals / data.n() as f64));
    Ok((b, residuals, gamma))
}

/// EM for the zero-inflated model with observed clusters.
pub fn fit_zi_em_observed(
    data: &Dataset,
    assignment: &ClusterAssignment,
    lambda: f64,
    init: Option<ModelParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    let masks = ZiMasks::new(data)?;
    let mut params = match init {
        Some(p) => p,
        None => zi_initial_params(data, assignment, &masks)?,
    };
    if params.kappa.is_none() {
        params.kappa = Some(masks.kappa());
    }
    let n = data.n();
    let score = |params: &ModelParams, moments: &ZiMoments| -> Result<f64> {
        Ok(zi_em_objective(params, assignment, data, &masks, moments)? + zi_posterior_entropy(moments)?
            - penalty(params.omega(), n, lambda))
    };
    let mut moments = zi_e_step_observed(&params, assignment, data, &masks)?;
    let mut obj = score(&params, &moments)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut next = zi_m_step_observed(&moments, &masks, assignment, data, lambda, &opts.glasso)?;
        let sigma_hat = linalg::symmetrize(&((moments.mu.transpose() * &moments.mu + moments.gamma_sum()) / n as f64));
        guard_omega(&mut next, &params, &sigma_hat, n, lambda);
        params = next;
        moments = zi_e_step_observed(&params, assignment, data, &masks)?;
        let new_obj = score(&params, &moments)?;
        trace.push(new_obj);
        let delta = (new_obj - obj).abs();
        obj = new_obj;
        if delta <= opts.tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("zero-inflated EM stopped after {iterations} iterations without converging");
    }
    let kind = ModelKind {
        method: FitMethod::ObservedEm,
        zero_inflated: true,
    };
    let network = extract_network(params.omega(), lambda, opts.zero_tol)?;
    let loglik = obj + penalty(params.omega(), n, lambda);
    let criteria = selection::criteria_for(kind, &params, assignment.q(), data, loglik, 0.0, &network);
    let varstate = VariationalState {
        s: DMatrix::from_fn(n, assignment.q(), |i, k| moments.gammas[i][(k, k)]),
        m: moments.mu,
        tau: assignment.one_hot(),
    };
    Ok(FitResult {
        kind,
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

/// ELBO of the zero-inflated latent-cluster model (no penalty).
pub fn zi_elbo(params: &ModelParams, vs: &VariationalState, data: &Dataset, masks: &ZiMasks) -> Result<f64> {
    masks.check(data)?;
    let (n, p, q) = (data.n(), data.p(), params.q());
    let d = diagonal_noise(params, p)?;
    let a = vem::expected_sq_residuals(&data.residuals(&params.b), vs);
    let mut gauss = 0.0;
    for j in 0..p {
        for i in 0..n {
            if masks.ones[(i, j)] {
                gauss += -0.5 * (LN_2PI + d[j].ln()) - 0.5 * a[(i, j)] / d[j];
            }
        }
    }
    let omega = params.omega();
    let omega_term = linalg::trace_product(omega, &vem::sigma_hat(vs)) * n as f64;
    let alpha = vem::alpha_or_uniform(params, q);
    let mut membership = 0.0;
    for j in 0..p {
        for k in 0..q {
            membership += linalg::xlogy(vs.tau[(j, k)], alpha[k]) - linalg::xlogx(vs.tau[(j, k)]);
        }
    }
    Ok(masks.inflation_term(&kappa_of(params, masks)) + gauss
        + 0.5 * n as f64 * linalg::logdet_spd(omega, "omega")?
        - 0.5 * omega_term
        + 0.5 * (n * q) as f64
        + 0.5 * vs.s.iter().map(|v| v.ln()).sum::<f64>()
        + membership)
}

/// Memberships then the Gaussian block, each restricted to nonzero entries.
pub fn zi_ve_step(params: &ModelParams, vs: &VariationalState, data: &Dataset, masks: &ZiMasks) -> Result<VariationalState> {
    let tau = zi_update_tau(params, vs, data, masks)?;
    let (m, s) = zi_update_gaussian(params, &tau, data, masks)?;
    Ok(VariationalState { m, s, tau })
}

pub fn zi_update_tau(params: &ModelParams, vs: &VariationalState, data: &Dataset, masks: &ZiMasks) -> Result<DMatrix<f64>> {
    masks.check(data)?;
    let (n, p, q) = (data.n(), data.p(), params.q());
    let d = diagonal_noise(params, p)?;
    let r = data.residuals(&params.b);
    let second = vs.m.component_mul(&vs.m) + &vs.s;
    let la = vem::alpha_or_uniform(params, q).map(f64::ln);
    let mut tau = DMatrix::zeros(p, q);
    for j in 0..p {
        let mut eta = vec![0.0; q];
        for i in (0..n).filter(|&i| masks.ones[(i, j)]) {
            for k in 0..q {
                eta[k] += r[(i, j)] * vs.m[(i, k)] - 0.5 * second[(i, k)];
            }
        }
        for k in 0..q {
            eta[k] = eta[k] / d[j] + la[k];
        }
        for (k, t) in vem::floored_softmax(&eta, vem::TAU_FLOOR).into_iter().enumerate() {
            tau[(j, k)] = t;
        }
    }
    Ok(tau)
}

/// Row-wise exact maximiser of the Gaussian block:
/// `M_i = (Σ_j 1_ij R_ij / d_j τ_j)(Ω + Diag(Σ_j 1_ij τ_j / d_j))⁻¹`,
/// `S_ik = 1 / (Σ_j 1_ij τ_jk / d_j + Ω_kk)`.
pub fn zi_update_gaussian(
    params: &ModelParams,
    tau: &DMatrix<f64>,
    data: &Dataset,
    masks: &ZiMasks,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, q) = (data.n(), data.p(), params.q());
    let d = diagonal_noise(params, p)?;
    let r = data.residuals(&params.b);
    let w = DMatrix::from_fn(n, p, |i, j| if masks.ones[(i, j)] { 1.0 / d[j] } else { 0.0 });
    let rhs = w.component_mul(&r) * tau;
    let weight = &w * tau;
    let mut m = DMatrix::zeros(n, q);
    let mut s = DMatrix::zeros(n, q);
    for i in 0..n {
        let mut prec = params.omega().clone();
        for k in 0..q {
            prec[(k, k)] += weight[(i, k)];
            s[(i, k)] = 1.0 / prec[(k, k)];
        }
        let chol = linalg::cholesky(&prec, "per-row variational precision")?;
        m.set_row(i, &chol.solve(&rhs.row(i).transpose()).transpose());
    }
    Ok((m, s))
}

/// Latent-cluster M-step: B by weighted least squares, then d, Ω, α, κ.
pub fn zi_m_step(
    vs: &VariationalState,
    data: &Dataset,
    masks: &ZiMasks,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<ModelParams> {
    masks.check(data)?;
    let ones = masks.ones_f64();
    let b = linalg::masked_column_ols(data.x(), &(data.y() - &vs.m * vs.tau.transpose()), &ones)?;
    let a = vem::expected_sq_residuals(&data.residuals(&b), vs).component_mul(&ones);
    let d = DVector::from_fn(data.p(), |j, _| a.column(j).sum() / masks.n_nonzero[j] as f64);
    if let Some(j) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateColumn(j));
    }
    let (omega, sigma) = glasso::precision_step(&vem::sigma_hat(vs), lambda, cfg)?;
    let alpha = DVector::from_fn(vs.tau.ncols(), |k, _| vs.tau.column(k).mean());
    let alpha = &alpha / alpha.sum();
    let mut params = ModelParams::new(b, DMatrix::identity(1, 1), Noise::Diagonal(d))?
        .with_alpha(alpha)?
        .with_kappa(masks.kappa())?;
    params.set_omega_sigma(omega, sigma);
    Ok(params)
}

/// Variational EM for the zero-inflated model with `q` latent clusters.
/// Without `init`, starts from the zero-inflated two-step pipeline.
pub fn fit_zi_vem(
    data: &Dataset,
    q: usize,
    lambda: f64,
    init: Option<VemInit>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
    }
    if q == 0 || q > data.p() {
        return Err(Error::InvalidParameter(format!("q must lie in [1, {}]", data.p())));
    }
    let masks = ZiMasks::new(data)?;
    let init = match init {
        Some(i) => i,
        None => {
            let (b, residuals, gamma) = zi_regression(data, &masks)?;
            let clustering = twostep::kmeans_columns(&residuals, q, opts.seed, twostep::KMEANS_RESTARTS)?;
            let params = twostep::params_from_pieces(
                b,
                &gamma,
                &masks.nonzero_variances(&residuals),
                &clustering,
                NoiseKind::Diagonal,
            )?;
            VemInit {
                clustering,
                params: Some(params),
            }
        }
    };
    if init.clustering.q() != q || init.clustering.p() != data.p() {
        return Err(Error::Shape("initial clustering does not match q and p".into()));
    }
    let mut params = match init.params {
        Some(p) => p,
        None => zi_initial_params(data, &init.clustering, &masks)?,
    };
    if params.alpha.is_none() {
        params = vem::with_cluster_proportions(params, &init.clustering)?;
    }
    params.kappa = Some(masks.kappa());
    let tau = vem::floored_one_hot(&init.clustering);
    let (m, s) = zi_update_gaussian(&params, &tau, data, &masks)?;
    let mut vs = VariationalState { m, s, tau };

    let n = data.n();
    let score = |params: &ModelParams, vs: &VariationalState| -> Result<f64> {
        Ok(zi_elbo(params, vs, data, &masks)? - penalty(params.omega(), n, lambda))
    };
    let mut obj = score(&params, &vs)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        vs = zi_ve_step(&params, &vs, data, &masks)?;
        let mut next = zi_m_step(&vs, data, &masks, lambda, &opts.glasso)?;
        guard_omega(&mut next, &params, &vem::sigma_hat(&vs), n, lambda);
        params = next;
        let new_obj = score(&params, &vs)?;
        trace.push(new_obj);
        let delta = (new_obj - obj).abs();
        obj = new_obj;
        if delta <= opts.tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("zero-inflated VEM (q = {q}) stopped after {iterations} iterations without converging");
    }
    let kind = ModelKind {
        method: FitMethod::LatentVem,
        zero_inflated: true,
    };
    let clustering = vs.hard_clustering()?;
    let network = extract_network(params.omega(), lambda, opts.zero_tol)?;
    let bound = obj + penalty(params.omega(), n, lambda);
    let criteria = selection::criteria_for(kind, &params, q, data, bound, vs.membership_entropy(), &network);
    Ok(FitResult {
        kind,
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
