//! Graphical lasso: sparse precision estimation by block coordinate descent
//! over columns, each column solved as a lasso by cyclic soft-thresholding.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub penalize_diagonal: bool,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            penalize_diagonal: false,
        }
    }
}

impl GlassoConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("glasso needs tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoFit {
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub iterations: usize,
}

/// `log det Ω - tr(SΩ) - λ ||Ω||_1,off` (diagonal included when penalized).
pub fn penalized_objective(
    s: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    let logdet = linalg::logdet_spd(omega, "omega")?;
    let mut pen = linalg::l1_off(omega);
    if penalize_diagonal {
        pen += omega.diagonal().abs().sum();
    }
    Ok(logdet - linalg::trace_product(s, omega) - lambda * pen)
}

/// Largest violation of the stationarity conditions
/// `S - Σ̂ + λ Z = 0`, `Z ∈ ∂||Ω||_1`.
pub fn kkt_residual(
    s: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> f64 {
    let m = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..m {
        for i in 0..m {
            let g = s[(i, j)] - sigma[(i, j)];
            let r = if i == j {
                if penalize_diagonal {
                    (g + lambda).abs()
                } else {
                    g.abs()
                }
            } else if omega[(i, j)] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * omega[(i, j)].signum()).abs()
            };
            worst = worst.max(r);
        }
    }
    worst
}

fn validate_input(s: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(Error::Shape("covariance must be square and nonempty".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let m = s.nrows();
    for j in 0..m {
        if !(s[(j, j)] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "covariance diagonal entry {j} must be positive"
            )));
        }
        for i in 0..j {
            let (a, b) = (s[(i, j)], s[(j, i)]);
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidParameter("covariance is not symmetric".into()));
            }
        }
    }
    Ok(())
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Sparse precision estimate for covariance `s` at penalty `lambda`.
pub fn glasso(s: &DMatrix<f64>, lambda: f64, cfg: &GlassoConfig) -> Result<GlassoFit> {
    glasso_warm(s, lambda, cfg, None)
}

/// Same as [`glasso`], starting from a previous solution when given.
pub fn glasso_warm(
    s: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
    warm: Option<&GlassoFit>,
) -> Result<GlassoFit> {
    cfg.validate()?;
    validate_input(s, lambda)?;
    let s = linalg::symmetrize(s);
    let m = s.nrows();
    let diag_pen = if cfg.penalize_diagonal { lambda } else { 0.0 };

    if m == 1 {
        let w = s[(0, 0)] + diag_pen;
        return Ok(GlassoFit {
            omega: DMatrix::from_element(1, 1, 1.0 / w),
            sigma: DMatrix::from_element(1, 1, w),
            iterations: 0,
        });
    }
    if lambda == 0.0 {
        let (omega, _) = linalg::spd_inverse_logdet(&s, "covariance")
            .map_err(|_| Error::Singular("covariance is not invertible and lambda = 0".into()))?;
        return Ok(GlassoFit {
            omega,
            sigma: s,
            iterations: 0,
        });
    }

    // W is the running covariance estimate; column j of `beta` holds the
    // lasso coefficients of variable j on the others (entry j unused).
    let mut w = s.clone();
    let mut beta = DMatrix::<f64>::zeros(m, m);
    if let Some(prev) = warm.filter(|f| f.omega.nrows() == m) {
        w = prev.sigma.clone();
        for j in 0..m {
            let ojj = prev.omega[(j, j)];
            for k in 0..m {
                if k != j {
                    beta[(k, j)] = -prev.omega[(k, j)] / ojj;
                }
            }
        }
    }
    for j in 0..m {
        w[(j, j)] = s[(j, j)] + diag_pen;
    }

    let scale = s.diagonal().abs().mean();
    let inner_tol = cfg.tol * 1e-4 * scale;
    let mut last = None;
    for iter in 1..=cfg.max_iter {
        let w_prev = w.clone();
        for j in 0..m {
            lasso_column(&mut w, &s, &mut beta, j, lambda, inner_tol);
        }
        let change = (&w - &w_prev).abs().mean();
        if change > cfg.tol * scale && iter < cfg.max_iter {
            continue;
        }
        let omega = precision_from_betas(&w, &beta);
        let sigma = match linalg::spd_inverse(&omega, "omega") {
            Ok(sig) => sig,
            Err(_) => continue,
        };
        let kkt = kkt_residual(&s, &omega, &sigma, lambda, cfg.penalize_diagonal);
        if kkt <= cfg.tol {
            return Ok(GlassoFit {
                omega,
                sigma,
                iterations: iter,
            });
        }
        last = Some((omega, sigma));
    }
    let (omega, sigma) = last.unwrap_or_else(|| {
        let omega = precision_from_betas(&w, &beta);
        (omega, w.clone())
    });
    Err(Error::GlassoNotConverged {
        iterations: cfg.max_iter,
        omega: Box::new(omega),
        sigma: Box::new(sigma),
    })
}

/// One block update: solve `min ½ βᵀ W₁₁ β - s₁₂ᵀ β + λ|β|₁` for column `j`
/// and write `W₁₁ β` back into row/column `j` of `w`.
fn lasso_column(
    w: &mut DMatrix<f64>,
    s: &DMatrix<f64>,
    beta: &mut DMatrix<f64>,
    j: usize,
    lambda: f64,
    tol: f64,
) {
    let m = w.nrows();
    // wb[k] = sum_{l != j} W[k, l] beta[l]
    let mut wb = vec![0.0; m];
    for l in (0..m).filter(|&l| l != j) {
        let bl = beta[(l, j)];
        if bl != 0.0 {
            for k in 0..m {
                wb[k] += w[(k, l)] * bl;
            }
        }
    }
    for _ in 0..10_000 {
        let mut max_delta = 0.0f64;
        for k in (0..m).filter(|&k| k != j) {
            let wkk = w[(k, k)];
            let old = beta[(k, j)];
            let partial = s[(k, j)] - (wb[k] - wkk * old);
            let new = soft_threshold(partial, lambda) / wkk;
            let delta = new - old;
            if delta != 0.0 {
                beta[(k, j)] = new;
                for l in 0..m {
                    wb[l] += w[(l, k)] * delta;
                }
                max_delta = max_delta.max(delta.abs() * wkk);
            }
        }
        if max_delta <= tol {
            break;
        }
    }
    for k in (0..m).filter(|&k| k != j) {
        w[(k, j)] = wb[k];
        w[(j, k)] = wb[k];
    }
}

fn precision_from_betas(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w.nrows();
    let mut omega = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut acc = w[(j, j)];
        for k in (0..m).filter(|&k| k != j) {
            acc -= w[(k, j)] * beta[(k, j)];
        }
        let ojj = 1.0 / acc;
        omega[(j, j)] = ojj;
        for k in (0..m).filter(|&k| k != j) {
            omega[(k, j)] = -beta[(k, j)] * ojj;
        }
    }
    linalg::symmetrize(&omega)
}

/// Warm-started solutions along a strictly decreasing penalty sequence.
pub fn glasso_path(
    s: &DMatrix<f64>,
    lambdas: &[f64],
    cfg: &GlassoConfig,
) -> Result<Vec<(f64, GlassoFit)>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty penalty path".into()));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0)) || lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "penalties must be nonnegative and strictly decreasing".into(),
        ));
    }
    let mut out: Vec<(f64, GlassoFit)> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = out.last().map(|(_, f)| f);
        let fit = glasso_warm(s, lambda, cfg, warm).map_err(|e| Error::PathFailure {
            lambda,
            source: Box::new(e),
        })?;
        out.push((lambda, fit));
    }
    Ok(out)
}

/// Ω update used by the EM-type fits: plain inversion when `lambda == 0`,
/// otherwise the graphical lasso. A solver that runs out of iterations still
/// hands back its last iterate.
pub(crate) fn precision_step(
    sigma_hat: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if lambda == 0.0 {
        let omega = linalg::spd_inverse(sigma_hat, "covariance estimate")?;
        return Ok((omega, sigma_hat.clone()));
    }
    match glasso(sigma_hat, lambda, cfg) {
        Ok(fit) => Ok((fit.omega, fit.sigma)),
        Err(Error::GlassoNotConverged { iterations, omega, sigma }) => {
            log::warn!("glasso hit its iteration cap ({iterations}); using last iterate");
            Ok((*omega, *sigma))
        }
        Err(e) => Err(e),
    }
}

/// Smallest penalty that makes every off-diagonal precision entry zero.
pub fn lambda_max(s: &DMatrix<f64>) -> f64 {
    let m = s.nrows();
    let mut best = 0.0f64;
    for j in 0..m {
        for i in 0..m {
            if i != j {
                best = best.max(s[(i, j)].abs());
            }
        }
    }
    best
}
