//! Domain types shared by every estimator, plus clustering-matrix utilities
//! and network extraction from a precision matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default threshold below which a precision entry counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// Observations `Y` (n x p) and covariates `X` (n x d_cov).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.nrows() < 2 || y.ncols() < 2 {
            return Err(Error::Shape(format!(
                "Y must be at least 2 x 2, got {} x {}",
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "Y has {} rows but X has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Shape("X needs at least one column".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Y and X must be finite".into()));
        }
        Ok(Self { y, x })
    }

    /// Intercept-only design.
    pub fn with_intercept(y: DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        Self::new(y, DMatrix::from_element(n, 1, 1.0))
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn d_cov(&self) -> usize {
        self.x.ncols()
    }

    /// Residuals `Y - X B`.
    pub fn residuals(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        &self.y - &self.x * b
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.y.select_rows(rows), self.x.select_rows(rows))
    }

    pub fn has_zeros(&self) -> bool {
        self.y.iter().any(|&v| v == 0.0)
    }
}

/// Hard assignment of the p variables to q clusters. Labels are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    q: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidAssignment("q must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidAssignment("no labels".into()));
        }
        if q > labels.len() {
            return Err(Error::InvalidAssignment(format!(
                "q = {q} exceeds the number of variables {}",
                labels.len()
            )));
        }
        if let Some((j, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= q) {
            return Err(Error::InvalidAssignment(format!(
                "label {l} of variable {j} is outside [0, {q})"
            )));
        }
        Ok(Self { labels, q })
    }

    /// Build from 1-based labels, as found in files.
    pub fn from_one_based(labels: &[usize], q: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidAssignment("1-based labels cannot be 0".into()));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), q)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    /// Row-wise argmax of a membership matrix; ties go to the lowest index.
    pub fn from_memberships(tau: &DMatrix<f64>) -> Result<Self> {
        let labels = (0..tau.nrows())
            .map(|j| {
                let mut best = 0;
                for k in 1..tau.ncols() {
                    if tau[(j, k)] > tau[(j, best)] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Self::new(labels, tau.ncols())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.q];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn first_empty_cluster(&self) -> Option<usize> {
        self.sizes().iter().position(|&s| s == 0)
    }

    /// The p x q clustering matrix C.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.labels.len(), self.q);
        for (j, &l) in self.labels.iter().enumerate() {
            c[(j, l)] = 1.0;
        }
        c
    }

    /// Relabel clusters: old label `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.q {
            return Err(Error::InvalidAssignment("permutation length differs from q".into()));
        }
        Self::new(self.labels.iter().map(|&l| perm[l]).collect(), self.q)
    }
}

/// Validate-and-build for the checked `one_hot` entry point.
pub fn one_hot(labels: &[usize], q: usize) -> Result<DMatrix<f64>> {
    ClusterAssignment::new(labels.to_vec(), q).map(|a| a.one_hot())
}

/// Individual noise: per-variable variances or one shared variance.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Diagonal(DVector<f64>),
    Spherical(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Diagonal,
    Spherical,
}

impl Noise {
    pub fn kind(&self) -> NoiseKind {
        match self {
            Noise::Diagonal(_) => NoiseKind::Diagonal,
            Noise::Spherical(_) => NoiseKind::Spherical,
        }
    }

    /// Per-variable variances, expanded to length `p`.
    pub fn variances(&self, p: usize) -> DVector<f64> {
        match self {
            Noise::Diagonal(d) => d.clone(),
            Noise::Spherical(xi) => DVector::from_element(p, *xi),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Noise::Diagonal(d) => d.len(),
            Noise::Spherical(_) => 1,
        }
    }

    pub(crate) fn from_variances(kind: NoiseKind, d: DVector<f64>) -> Self {
        match kind {
            NoiseKind::Diagonal => Noise::Diagonal(d),
            NoiseKind::Spherical => Noise::Spherical(d.mean()),
        }
    }
}

/// Model parameters. `sigma` is always the inverse of `omega`; it is only
/// refreshed through [`ModelParams::set_omega`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub b: DMatrix<f64>,
    omega: DMatrix<f64>,
    sigma: DMatrix<f64>,
    pub noise: Noise,
    pub alpha: Option<DVector<f64>>,
    pub kappa: Option<DVector<f64>>,
}

impl ModelParams {
    pub fn new(b: DMatrix<f64>, omega: DMatrix<f64>, noise: Noise) -> Result<Self> {
        let sigma = linalg::spd_inverse(&omega, "omega")?;
        let params = Self {
            b,
            omega: linalg::symmetrize(&omega),
            sigma,
            noise,
            alpha: None,
            kappa: None,
        };
        params.check_noise()?;
        Ok(params)
    }

    /// Build from a covariance instead of a precision.
    pub fn from_sigma(b: DMatrix<f64>, sigma: DMatrix<f64>, noise: Noise) -> Result<Self> {
        let omega = linalg::spd_inverse(&sigma, "sigma")?;
        let mut params = Self::new(b, omega, noise)?;
        params.sigma = linalg::symmetrize(&sigma);
        Ok(params)
    }

    pub fn with_alpha(mut self, alpha: DVector<f64>) -> Result<Self> {
        if alpha.iter().any(|&a| !(a > 0.0)) || (alpha.sum() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(
                "alpha must be a positive probability vector".into(),
            ));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn with_kappa(mut self, kappa: DVector<f64>) -> Result<Self> {
        if kappa.iter().any(|&k| !(0.0..1.0).contains(&k)) {
            return Err(Error::InvalidParameter("kappa entries must lie in [0, 1)".into()));
        }
        self.kappa = Some(kappa);
        Ok(self)
    }

    fn check_noise(&self) -> Result<()> {
        let ok = match &self.noise {
            Noise::Diagonal(d) => d.iter().all(|&v| v > 0.0 && v.is_finite()),
            Noise::Spherical(xi) => *xi > 0.0 && xi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("noise variances must be positive".into()))
        }
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn q(&self) -> usize {
        self.omega.nrows()
    }

    pub fn set_omega(&mut self, omega: DMatrix<f64>) -> Result<()> {
        self.sigma = linalg::spd_inverse(&omega, "omega")?;
        self.omega = linalg::symmetrize(&omega);
        Ok(())
    }

    /// Set both halves when the caller already holds a matched pair.
    pub(crate) fn set_omega_sigma(&mut self, omega: DMatrix<f64>, sigma: DMatrix<f64>) {
        self.omega = linalg::symmetrize(&omega);
        self.sigma = linalg::symmetrize(&sigma);
    }

    /// Apply a cluster relabelling (old `k` becomes `perm[k]`) to Ω, Σ, α.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let q = self.q();
        let mut inv = vec![0; q];
        for (k, &pk) in perm.iter().enumerate() {
            inv[pk] = k;
        }
        let omega = DMatrix::from_fn(q, q, |a, b| self.omega[(inv[a], inv[b])]);
        let sigma = DMatrix::from_fn(q, q, |a, b| self.sigma[(inv[a], inv[b])]);
        let alpha = self
            .alpha
            .as_ref()
            .map(|al| DVector::from_fn(q, |a, _| al[inv[a]]));
        Self {
            b: self.b.clone(),
            omega,
            sigma,
            noise: self.noise.clone(),
            alpha,
            kappa: self.kappa.clone(),
        }
    }
}

/// Mean-field posterior parameters: means `m` (n x q), diagonal variances
/// `s` (n x q) and soft memberships `tau` (p x q).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub m: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub tau: DMatrix<f64>,
}

impl VariationalState {
    pub fn validate(&self) -> Result<()> {
        if self.s.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("S must be strictly positive".into()));
        }
        for j in 0..self.tau.nrows() {
            let row = self.tau.row(j);
            if row.iter().any(|&t| t < 0.0) || (row.sum() - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!("tau row {j} is not on the simplex")));
            }
        }
        Ok(())
    }

    /// Entropy of the membership distribution, `-sum tau log tau`.
    pub fn membership_entropy(&self) -> f64 {
        -self.tau.iter().map(|&t| linalg::xlogx(t)).sum::<f64>()
    }

    pub fn hard_clustering(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_memberships(&self.tau)
    }
}

/// Cluster-level association network read off a precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEstimate {
    pub support: DMatrix<bool>,
    pub partial_corr: DMatrix<f64>,
    pub lambda: f64,
}

impl NetworkEstimate {
    pub fn q(&self) -> usize {
        self.support.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Edges `(a, b, partial correlation)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let q = self.q();
        let mut out = Vec::new();
        for a in 0..q {
            for b in (a + 1)..q {
                if self.support[(a, b)] {
                    out.push((a, b, self.partial_corr[(a, b)]));
                }
            }
        }
        out
    }
}

/// `-omega_kl / sqrt(omega_kk omega_ll)` off the diagonal, 1 on it.
pub fn partial_correlations(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !omega.is_square() {
        return Err(Error::Shape("omega must be square".into()));
    }
    let q = omega.nrows();
    if let Some(k) = (0..q).find(|&k| !(omega[(k, k)] > 0.0)) {
        return Err(Error::NotSpd(format!("diagonal entry {k} is not positive")));
    }
    Ok(DMatrix::from_fn(q, q, |k, l| {
        if k == l {
            1.0
        } else {
            let v = -omega[(k, l)] / (omega[(k, k)] * omega[(l, l)]).sqrt();
            v.clamp(-1.0, 1.0)
        }
    }))
}

pub fn extract_network(omega: &DMatrix<f64>, lambda: f64, zero_tol: f64) -> Result<NetworkEstimate> {
    if zero_tol < 0.0 {
        return Err(Error::InvalidParameter("zero_tol must be nonnegative".into()));
    }
    if !linalg::is_spd(omega) {
        return Err(Error::NotSpd("omega".into()));
    }
    let mut partial_corr = partial_correlations(omega)?;
    let q = omega.nrows();
    let mut support = DMatrix::from_element(q, q, false);
    for k in 0..q {
        for l in (k + 1)..q {
            let on = omega[(k, l)].abs().max(omega[(l, k)].abs()) > zero_tol;
            support[(k, l)] = on;
            support[(l, k)] = on;
            if !on {
                partial_corr[(k, l)] = 0.0;
                partial_corr[(l, k)] = 0.0;
            }
        }
    }
    Ok(NetworkEstimate {
        support,
        partial_corr,
        lambda,
    })
}

/// Iteration controls shared by the EM-type fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Relative tolerance on the objective: stop when |ΔJ| <= tol (1 + |J|).
    pub tol: f64,
    pub max_iter: usize,
    pub glasso: crate::glasso::GlassoConfig,
    /// Seed for the k-means initialisation.
    pub seed: u64,
    pub zero_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            glasso: crate::glasso::GlassoConfig::default(),
            seed: 0,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

/// Model-selection criteria, all in "higher is better" orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub log_like_bound: f64,
    pub bic: f64,
    pub ebic: f64,
    pub icl: f64,
    pub n_params: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    /// EM with an observed clustering.
    ObservedEm,
    /// Variational EM with latent clusters.
    LatentVem,
    /// Two-step baseline.
    TwoStep,
}

/// Which model a fit belongs to; drives parameter counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelKind {
    pub method: FitMethod,
    pub zero_inflated: bool,
}

impl ModelKind {
    pub fn latent(&self) -> bool {
        self.method == FitMethod::LatentVem
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: ModelKind,
    pub lambda: f64,
    pub params: ModelParams,
    pub varstate: Option<VariationalState>,
    pub clustering: ClusterAssignment,
    pub objective_trace: Vec<f64>,
    pub criteria: Criteria,
    pub network: NetworkEstimate,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }

    /// Posterior mean of `Y`: `X B + M tau^T`, or `X B` when no posterior is held.
    pub fn fitted(&self, data: &Dataset) -> DMatrix<f64> {
        let xb = data.x() * &self.params.b;
        match &self.varstate {
            Some(vs) => xb + &vs.m * vs.tau.transpose(),
            None => xb,
        }
    }
}
