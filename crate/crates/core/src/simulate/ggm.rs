//! Gaussian graphical model design: partial-regression t-statistics for
//! every pair of coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision matrix `Omega` of the sampled Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OmegaSpec {
    Identity,
    /// Unit diagonal with `off` on the first off-diagonals.
    Tridiagonal {
        off: f64,
    },
    Dense {
        matrix: Vec<Vec<f64>>,
    },
}

impl OmegaSpec {
    pub fn matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        let omega = match self {
            OmegaSpec::Identity => DMatrix::identity(d, d),
            OmegaSpec::Tridiagonal { off } => DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    *off
                } else {
                    0.0
                }
            }),
            OmegaSpec::Dense { matrix } => {
                if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::arg(format!("precision matrix must be {d} x {d}")));
                }
                DMatrix::from_fn(d, d, |i, j| matrix[i][j])
            }
        };
        for i in 0..d {
            for j in 0..i {
                if omega[(i, j)] != omega[(j, i)] {
                    return Err(Error::arg("precision matrix must be symmetric"));
                }
            }
        }
        Ok(omega)
    }
}

/// `n` rows drawn from `N(0, Omega^{-1})`.
pub fn sample_ggm<R: Rng + ?Sized>(
    omega: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = omega.nrows();
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::arg("precision matrix is not positive definite"))?;
    // Omega = L L^T, so X = L^{-T} Z has covariance Omega^{-1}
    let lt = chol.l().transpose();
    let z = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(rng));
    let x = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Fit("triangular solve failed".into()))?;
    Ok(x.transpose())
}

/// t-statistic of `X_i` in the regression of `X_j` on an intercept and all
/// other coordinates, for every pair `i < j`, in lexicographic order.
/// Degrees of freedom are `n - d`.
pub fn pairwise_t_statistics(x: &DMatrix<f64>) -> Result<Vec<(usize, usize, f64)>> {
    let (n, d) = x.shape();
    if d < 2 || n <= d {
        return Err(Error::arg(format!("need 2 <= d < n, got d = {d}, n = {n}")));
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let gram = centered.transpose() * &centered;
    let p = gram
        .cholesky()
        .ok_or_else(|| Error::Fit("sample cross-product matrix is singular".into()))?
        .inverse();
    let dof = (n - d) as f64;
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            // beta = -P_ij / P_jj, RSS = 1 / P_jj, Var(beta) / sigma^2 = P_ii - P_ij^2 / P_jj
            let denom = p[(i, i)] * p[(j, j)] - p[(i, j)] * p[(i, j)];
            out.push((i, j, -p[(i, j)] * dof.sqrt() / denom.sqrt()));
        }
    }
    Ok(out)
}

/// The same statistic from an explicit least-squares fit of column `j` on
/// an intercept and the remaining columns.
pub fn regression_t(x: &DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    let (n, d) = x.shape();
    if i == j || i >= d || j >= d || n <= d {
        return Err(Error::arg("invalid pair or too few rows"));
    }
    let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let design = DMatrix::from_fn(
        n,
        d,
        |r, c| if c == 0 { 1.0 } else { x[(r, others[c - 1])] },
    );
    let y: DVector<f64> = x.column(j).into_owned();
    let xtx = design.transpose() * &design;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Fit("normal equations are singular".into()))?;
    let beta = &inv * design.transpose() * &y;
    let resid = &y - &design * &beta;
    let sigma2 = resid.norm_squared() / (n - d) as f64;
    let c = 1 + others.iter().position(|&k| k == i).unwrap();
    Ok(beta[c] / (sigma2 * inv[(c, c)]).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn precision_closed_form_matches_explicit_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = OmegaSpec::Tridiagonal { off: 0.4 }.matrix(5).unwrap();
        let x = sample_ggm(&omega, 40, &mut rng).unwrap();
        for (i, j, t) in pairwise_t_statistics(&x).unwrap() {
            let a = regression_t(&x, i, j).unwrap();
            let b = regression_t(&x, j, i).unwrap();
            assert!((t - a).abs() < 1e-9 * (1.0 + t.abs()), "{t} vs {a}");
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn sample_covariance_inverts_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let omega = OmegaSpec::Tridiagonal { off: 0.45 }.matrix(3).unwrap();
        let x = sample_ggm(&omega, 200_000, &mut rng).unwrap();
        let cov = x.transpose() * &x / 200_000.0;
        let target = omega.try_inverse().unwrap();
        assert!((cov - target).amax() < 0.02);
    }

    #[test]
    fn rejects_bad_omega() {
        assert!(OmegaSpec::Tridiagonal { off: 0.9 }.matrix(4).is_ok());
        let bad = OmegaSpec::Tridiagonal { off: 0.9 }.matrix(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_ggm(&bad, 10, &mut rng).is_err());
        let asym = OmegaSpec::Dense {
            matrix: vec![vec![1.0, 0.1], vec![0.2, 1.0]],
        };
        assert!(asym.matrix(2).is_err());
    }
}
