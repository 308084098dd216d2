//! Two-step baseline: regress out covariates, cluster the variables from the
//! residuals, average the residual covariance within cluster pairs and run
//! the graphical lasso on the result. Also provides EM/VEM starting values.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glasso;
use crate::linalg::{self, Design};
use crate::rng;
use crate::selection;
use crate::types::{
    extract_network, ClusterAssignment, Dataset, FitMethod, FitOptions, FitResult, ModelKind,
    ModelParams, Noise, NoiseKind,
};
use crate::zi;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

/// Multivariate OLS: coefficients, residuals and residual covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrFit {
    pub b: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn mlr_fit(data: &Dataset) -> Result<MlrFit> {
    let design = Design::new(data.x())?;
    let b = design.solve(data.y());
    let residuals = data.residuals(&b);
    let gamma = linalg::symmetrize(&(residuals.transpose() * &residuals / data.n() as f64));
    Ok(MlrFit { b, residuals, gamma })
}

/// How the two-step pipeline obtains its clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusteringMethod {
    /// k-means on the residual columns.
    ResidualKmeans,
    /// Spectral clustering of the absolute residual covariance.
    CovarianceSpectral,
}

/// Either a number of clusters to estimate or a clustering to use as is.
#[derive(Debug, Clone, PartialEq)]
pub enum Clusters {
    Count(usize),
    Given(ClusterAssignment),
}

/// Lloyd's algorithm on the columns of `points` (each column one point),
/// seeded by k-means++. Returns labels and the within-cluster sum of squares.
fn lloyd(points: &DMatrix<f64>, k: usize, rng: &mut rng::Rng, max_iter: usize) -> (Vec<usize>, f64) {
    let m = points.ncols();
    let dist2 = |a: usize, c: &DMatrix<f64>, l: usize| (points.column(a) - c.column(l)).norm_squared();

    // k-means++ seeding
    let mut centers = DMatrix::zeros(points.nrows(), k);
    centers.set_column(0, &points.column(rng.random_range(0..m)));
    let mut best_d: Vec<f64> = (0..m).map(|a| dist2(a, &centers, 0)).collect();
    for l in 1..k {
        let total: f64 = best_d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (a, &d) in best_d.iter().enumerate() {
                if u < d {
                    idx = a;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centers.set_column(l, &points.column(pick));
        for a in 0..m {
            best_d[a] = best_d[a].min(dist2(a, &centers, l));
        }
    }

    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter {
        let mut changed = false;
        for a in 0..m {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for l in 0..k {
                let d = dist2(a, &centers, l);
                if d < bd {
                    bd = d;
                    best = l;
                }
            }
            if labels[a] != best {
                labels[a] = best;
                changed = true;
            }
        }
        // Re-seed empty clusters from the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            for &l in &labels {
                counts[l] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..m)
                .filter(|&a| counts[labels[a]] > 1)
                .max_by(|&a, &b| dist2(a, &centers, labels[a]).total_cmp(&dist2(b, &centers, labels[b])))
                .expect("k <= number of points");
            centers.set_column(empty, &points.column(far));
            labels[far] = empty;
            changed = true;
        }
        centers.fill(0.0);
        let mut counts = vec![0usize; k];
        for a in 0..m {
            let mut c = centers.column_mut(labels[a]);
            c += points.column(a);
            counts[labels[a]] += 1;
        }
        for l in 0..k {
            let mut c = centers.column_mut(l);
            c /= counts[l] as f64;
        }
        if !changed {
            break;
        }
    }
    let wss = (0..m).map(|a| dist2(a, &centers, labels[a])).sum();
    (labels, wss)
}

/// Relabel so clusters are numbered by first appearance.
fn canonical(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

fn kmeans_points(points: &DMatrix<f64>, q: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let m = points.ncols();
    if q == 0 || q > m {
        return Err(Error::InvalidParameter(format!("need 1 <= q <= {m}, got {q}")));
    }
    if restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be >= 1".into()));
    }
    let runs: Vec<(Vec<usize>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::seeded(rng::derive_seed(seed, r as u64));
            lloyd(points, q, &mut g, KMEANS_MAX_ITER)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.1 < runs[best].1 {
            best = r;
        }
    }
    ClusterAssignment::new(canonical(&runs[best].0, q), q)
}

/// k-means on the `p` columns of `residuals`, best of `restarts` runs.
pub fn kmeans_columns(residuals: &DMatrix<f64>, q: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    kmeans_points(residuals, q, seed, restarts)
}

/// Spectral clustering of `|gamma|`: top-`q` eigenvectors, rows scaled to
/// unit length, then k-means.
pub fn spectral_cluster_covariance(gamma: &DMatrix<f64>, q: usize, seed: u64) -> Result<ClusterAssignment> {
    let p = gamma.nrows();
    if !gamma.is_square() {
        return Err(Error::Shape("covariance must be square".into()));
    }
    if q == 0 || q > p {
        return Err(Error::InvalidParameter(format!("need 1 <= q <= {p}, got {q}")));
    }
    let eig = SymmetricEigen::new(linalg::symmetrize(&gamma.abs()));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // Embedding stored with one column per variable.
    let mut emb = DMatrix::from_fn(q, p, |l, j| eig.eigenvectors[(j, order[l])]);
    for j in 0..p {
        let norm = emb.column(j).norm();
        if norm > 0.0 {
            let mut c = emb.column_mut(j);
            c /= norm;
        }
    }
    kmeans_points(&emb, q, seed, KMEANS_RESTARTS)
}

/// Cluster-pair averages `Σ̃_kl = (Cᵀ Γ C)_kl / (|k| |l|)`.
pub fn aggregate_covariance(gamma: &DMatrix<f64>, assignment: &ClusterAssignment) -> Result<DMatrix<f64>> {
    if gamma.shape() != (assignment.p(), assignment.p()) {
        return Err(Error::Shape("covariance size differs from clustering length".into()));
    }
    if let Some(k) = assignment.first_empty_cluster() {
        return Err(Error::EmptyCluster(k));
    }
    let c = assignment.one_hot();
    let sizes = assignment.sizes();
    let sums = c.transpose() * gamma * &c;
    Ok(DMatrix::from_fn(assignment.q(), assignment.q(), |k, l| {
        sums[(k, l)] / (sizes[k] * sizes[l]) as f64
    }))
}

/// Noise left over once the cluster-level variance is removed, floored at a
/// small fraction of the raw variance.
fn residual_noise(gamma_diag: &DVector<f64>, sigma_tilde: &DMatrix<f64>, assignment: &ClusterAssignment) -> DVector<f64> {
    DVector::from_fn(gamma_diag.len(), |j, _| {
        let k = assignment.labels()[j];
        let raw = gamma_diag[j];
        (raw - sigma_tilde[(k, k)]).max(1e-3 * raw).max(f64::MIN_POSITIVE)
    })
}

fn resolve_clusters(
    clusters: &Clusters,
    method: ClusteringMethod,
    residuals: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    seed: u64,
) -> Result<ClusterAssignment> {
    match clusters {
        Clusters::Given(a) => {
            if a.p() != residuals.ncols() {
                return Err(Error::Shape("clustering length differs from p".into()));
            }
            Ok(a.clone())
        }
        Clusters::Count(q) => match method {
            ClusteringMethod::ResidualKmeans => kmeans_columns(residuals, *q, seed, KMEANS_RESTARTS),
            ClusteringMethod::CovarianceSpectral => spectral_cluster_covariance(gamma, *q, seed),
        },
    }
}

/// Starting values for EM/VEM at a given clustering: OLS coefficients,
/// ridge-stabilised inverse of the aggregated covariance, residual noise.
pub fn initial_params(data: &Dataset, assignment: &ClusterAssignment, kind: NoiseKind) -> Result<ModelParams> {
    let mlr = mlr_fit(data)?;
    params_from_pieces(mlr.b, &mlr.gamma, &mlr.gamma.diagonal(), assignment, kind)
}

pub(crate) fn params_from_pieces(
    b: DMatrix<f64>,
    gamma: &DMatrix<f64>,
    gamma_diag: &DVector<f64>,
    assignment: &ClusterAssignment,
    kind: NoiseKind,
) -> Result<ModelParams> {
    let sigma_tilde = aggregate_covariance(gamma, assignment)?;
    let q = assignment.q();
    let omega = linalg::spd_inverse(&(&sigma_tilde + DMatrix::identity(q, q) * 1e-3), "ridged covariance")?;
    let d = residual_noise(gamma_diag, &sigma_tilde, assignment);
    ModelParams::new(b, omega, Noise::from_variances(kind, d))
}

/// The full two-step pipeline. The noise variances are not identified here;
/// they are set to the residual variance left after the cluster term.
pub fn two_step_fit(
    data: &Dataset,
    clusters: &Clusters,
    method: ClusteringMethod,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let mlr = mlr_fit(data)?;
    let assignment = resolve_clusters(clusters, method, &mlr.residuals, &mlr.gamma, opts.seed)?;
    let sigma_tilde = aggregate_covariance(&mlr.gamma, &assignment)?;
    let (omega, sigma) = glasso::precision_step(&linalg::symmetrize(&sigma_tilde), lambda, &opts.glasso)?;
    let d = residual_noise(&mlr.gamma.diagonal(), &sigma_tilde, &assignment);
    let mut params = ModelParams::new(mlr.b, omega.clone(), Noise::Diagonal(d))?;
    params.set_omega_sigma(omega, sigma);
    let loglik = crate::em::log_likelihood(&params, &assignment, data)?;
    finish(data, assignment, params, lambda, loglik, false, opts)
}

/// Two-step pipeline for zero-inflated data: per-column OLS on the nonzero
/// rows, zeros contribute nothing to the residual covariance.
pub fn zi_two_step_fit(
    data: &Dataset,
    clusters: &Clusters,
    method: ClusteringMethod,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let masks = zi::ZiMasks::new(data)?;
    let ones = masks.ones_f64();
    let b = linalg::masked_column_ols(data.x(), data.y(), &ones)?;
    let residuals = data.residuals(&b).component_mul(&ones);
    let gamma = linalg::symmetrize(&(residuals.transpose() * &residuals / data.n() as f64));
    let assignment = resolve_clusters(clusters, method, &residuals, &gamma, opts.seed)?;
    let sigma_tilde = aggregate_covariance(&gamma, &assignment)?;
    let (omega, sigma) = glasso::precision_step(&sigma_tilde, lambda, &opts.glasso)?;
    let d = residual_noise(&masks.nonzero_variances(&residuals), &sigma_tilde, &assignment);
    let mut params = ModelParams::new(b, omega.clone(), Noise::Diagonal(d))?.with_kappa(masks.kappa())?;
    params.set_omega_sigma(omega, sigma);
    let loglik = zi::zi_log_likelihood(&params, &assignment, data, &masks)?;
    finish(data, assignment, params, lambda, loglik, true, opts)
}

fn finish(
    data: &Dataset,
    assignment: ClusterAssignment,
    params: ModelParams,
    lambda: f64,
    loglik: f64,
    zero_inflated: bool,
    opts: &FitOptions,
) -> Result<FitResult> {
    let kind = ModelKind {
        method: FitMethod::TwoStep,
        zero_inflated,
    };
    let network = extract_network(params.omega(), lambda, opts.zero_tol)?;
    let criteria = selection::criteria_for(kind, &params, assignment.q(), data, loglik, 0.0, &network);
    Ok(FitResult {
        kind,
        lambda,
        params,
        varstate: None,
        clustering: assignment,
        objective_trace: vec![loglik],
        criteria,
        network,
        converged: true,
        iterations: 1,
    })
}
