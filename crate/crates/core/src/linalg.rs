//! Small symmetric linear-algebra helpers used by the regression steps.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue cutoff for dropping degenerate covariate directions.
pub(crate) const EIGEN_DROP_SCALE: f64 = 1e-10;

/// Solve G x = b for symmetric positive-semidefinite G by
/// eigendecomposition, zeroing directions whose eigenvalue falls below
/// `EIGEN_DROP_SCALE * trace(G)`. Constant or collinear covariate columns
/// land in dropped directions and contribute nothing to the solution.
///
/// Returns the solution and the number of dropped directions.
pub(crate) fn sym_pinv_solve(g: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let p = g.nrows();
    if p == 0 {
        return (DVector::zeros(0), 0);
    }
    let trace: f64 = g.diagonal().iter().sum();
    let threshold = EIGEN_DROP_SCALE * trace.max(f64::MIN_POSITIVE);
    let eig = g.clone().symmetric_eigen();
    let mut x = DVector::zeros(p);
    let mut dropped = 0usize;
    for k in 0..p {
        let lambda = eig.eigenvalues[k];
        if lambda <= threshold {
            dropped += 1;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let coef = v.dot(b) / lambda;
        x += v * coef;
    }
    (x, dropped)
}

/// v' M v for symmetric M.
pub(crate) fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * v).dot(v)
}

/// Sample covariance of the rows (divisor n - 1), centered at the column
/// means. Rows come from a row-major matrix accessor.
pub(crate) fn sample_covariance<'a, I>(rows: I, n: usize, p: usize) -> DMatrix<f64>
where
    I: Fn(usize) -> &'a [f64],
{
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (k, v) in rows(i).iter().enumerate() {
            mean[k] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        let r = rows(i);
        for a in 0..p {
            let da = r[a] - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}
