//! Small dense helpers shared by the estimators. All matrices here are tiny
//! (q x q or d_cov x d_cov) except where noted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotSpd(what.to_string()))
}

/// Inverse and log-determinant of an SPD matrix.
pub(crate) fn spd_inverse_logdet(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let chol = cholesky(m, what)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((symmetrize(&chol.inverse()), logdet))
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spd_inverse_logdet(m, what).map(|(inv, _)| inv)
}

pub(crate) fn logdet_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub(crate) fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && Cholesky::new(symmetrize(m)).is_some()
}

/// Sum of absolute off-diagonal entries.
pub(crate) fn l1_off(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)].abs();
            }
        }
    }
    acc
}

pub(crate) fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// `0 * ln 0 = 0` convention.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub(crate) fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Least-squares solver for a fixed design, shared by every B update.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    x: DMatrix<f64>,
    xtx: Cholesky<f64, Dyn>,
}

impl Design {
    pub(crate) fn new(x: &DMatrix<f64>) -> Result<Self> {
        let xtx = x.transpose() * x;
        let chol = Cholesky::new(xtx).ok_or(Error::RankDeficientDesign)?;
        let min_pivot = chol.l_dirty().diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
        let max_pivot = chol.l_dirty().diagonal().iter().cloned().fold(0.0, f64::max);
        if !(min_pivot > 1e-10 * max_pivot) {
            return Err(Error::RankDeficientDesign);
        }
        Ok(Self { x: x.clone(), xtx: chol })
    }

    /// `(X^T X)^{-1} X^T target`
    pub(crate) fn solve(&self, target: &DMatrix<f64>) -> DMatrix<f64> {
        self.xtx.solve(&(self.x.transpose() * target))
    }
}

/// Column-wise weighted least squares: column `j` of the result solves the
/// normal equations restricted to rows where `weights[(i, j)] != 0`.
pub(crate) fn masked_column_ols(
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    mask: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    let p = target.ncols();
    let mut b = DMatrix::zeros(d, p);
    for j in 0..p {
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        let mut xty = DVector::<f64>::zeros(d);
        for i in 0..n {
            let w = mask[(i, j)];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                let xa = x[(i, a)] * w;
                xty[a] += xa * target[(i, j)];
                for c in 0..d {
                    xtx[(a, c)] += xa * x[(i, c)];
                }
            }
        }
        let chol = Cholesky::new(xtx).ok_or(Error::RankDeficientDesign)?;
        b.set_column(j, &chol.solve(&xty));
    }
    Ok(b)
}
