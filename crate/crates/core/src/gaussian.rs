//! Multivariate normal densities and the small dense linear algebra they need.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// `log(sum(exp(v)))`, returning `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Projects a symmetric matrix onto `{S : lo <= eig(S) <= hi}` by clamping
/// its spectrum.
pub fn clamp_eigenvalues(m: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    // Re-symmetrize to remove rounding from the reconstruction.
    for i in 0..out.nrows() {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Validates a covariance matrix: square, of dimension `dim`, symmetric within
/// 1e-12 and positive definite.
pub fn check_covariance(cov: &DMatrix<f64>, dim: usize) -> Result<()> {
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::input(format!(
            "covariance is {}x{}, expected {dim}x{dim}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("covariance has non-finite entries"));
    }
    let asym = asymmetry(cov);
    if asym > 1e-12 {
        return Err(Error::input(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let (lo, _) = eigen_range(cov);
    if lo <= 0.0 {
        return Err(Error::input(format!(
            "covariance is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::input("matrix rows must form a square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// A normal distribution `N(mean, cov)` with its Cholesky factor cached.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor, row-major, `dim * dim`.
    chol: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::input("gaussian mean must be non-empty"));
        }
        check_covariance(&cov, d)?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::input("covariance Cholesky factorization failed"))?;
        let l = chol.l();
        let mut flat = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        let log_norm = -0.5 * d as f64 * LN_2PI - log_det_half;
        Ok(Gaussian {
            mean,
            cov,
            chol: flat,
            log_norm,
        })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Gaussian::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        if d == 1 {
            let z = (x[0] - self.mean[0]) / self.chol[0];
            return z * z;
        }
        if d == 2 {
            let z0 = (x[0] - self.mean[0]) / self.chol[0];
            let z1 = (x[1] - self.mean[1] - self.chol[2] * z0) / self.chol[3];
            return z0 * z0 + z1 * z1;
        }
        let mut y = vec![0.0; d];
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                s -= self.chol[i * d + j] * yj;
            }
            y[i] = s / self.chol[i * d + i];
            acc += y[i] * y[i];
        }
        acc
    }

    #[inline]
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    #[inline]
    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut v = self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                v += self.chol[i * d + j] * zj;
            }
            out[i] = v;
        }
    }

    /// Per-axis marginal standard deviations.
    pub fn marginal_sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.cov[(i, i)].sqrt()).collect()
    }

    /// Square root of the smallest covariance eigenvalue.
    pub fn min_sd(&self) -> f64 {
        eigen_range(&self.cov).0.sqrt()
    }
}
