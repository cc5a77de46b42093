use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::diffcore::{cholesky, solve_lower, Matrix};
use crate::error::{Error, Result};

pub const SIGNIFICANCE: f64 = 0.01;

/// Mardia's multivariate skewness and kurtosis tests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MardiaReport {
    /// `b_{1,d}`.
    pub skewness: f64,
    /// `b_{2,d}`.
    pub kurtosis: f64,
    /// `n b_1 / 6`, chi-square with `d(d+1)(d+2)/6` degrees of freedom.
    pub skewness_statistic: f64,
    /// `(b_2 - d(d+2)) / sqrt(8 d (d+2) / n)`, standard normal.
    pub kurtosis_statistic: f64,
    pub skewness_threshold: f64,
    pub kurtosis_threshold: f64,
    pub skewness_p: f64,
    pub kurtosis_p: f64,
}

impl MardiaReport {
    pub fn skewness_rejected(&self) -> bool {
        self.skewness_statistic > self.skewness_threshold
    }

    pub fn kurtosis_rejected(&self) -> bool {
        self.kurtosis_statistic.abs() > self.kurtosis_threshold
    }

    /// Neither test rejects at the 1% level.
    pub fn passes(&self) -> bool {
        !self.skewness_rejected() && !self.kurtosis_rejected()
    }
}

/// Mardia statistics of the rows of `codes`, using the maximum-likelihood
/// (divide by `n`) covariance.
pub fn gaussianity(codes: &Matrix) -> Result<MardiaReport> {
    let (n, d) = codes.shape();
    if n <= d {
        return Err(Error::contract(format!("Mardia test needs n > d, got n = {n}, d = {d}")));
    }
    codes.ensure_finite("Mardia input")?;
    let mean = codes.column_means();
    let centred = codes.add_row_broadcast(&Matrix::row_vector(&mean).scale(-1.0))?;
    let cov = centred.t_matmul(&centred)?.scale(1.0 / n as f64).symmetrize();
    let l = cholesky(&cov).map_err(|e| Error::Singular(format!("sample covariance: {e}")))?;
    // rows of y are L^{-1}(x_i - mean), so y_i . y_j is the Mahalanobis product
    let y = solve_lower(&l, &centred.transpose())?.transpose();
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for i in 0..n {
        let yi = y.row(i);
        let dii: f64 = yi.iter().map(|v| v * v).sum();
        b2 += dii * dii;
        b1 += dii.powi(3);
        for j in i + 1..n {
            let dij: f64 = yi.iter().zip(y.row(j)).map(|(a, b)| a * b).sum();
            b1 += 2.0 * dij.powi(3);
        }
    }
    let nf = n as f64;
    let df = (d * (d + 1) * (d + 2)) as f64 / 6.0;
    let b1 = b1 / (nf * nf);
    let b2 = b2 / nf;
    let dd = (d * (d + 2)) as f64;
    let skew_stat = nf * b1 / 6.0;
    let kurt_stat = (b2 - dd) / (8.0 * dd / nf).sqrt();
    let chi = ChiSquared::new(df).map_err(|e| Error::contract(format!("chi-square: {e}")))?;
    let normal = Normal::standard();
    Ok(MardiaReport {
        skewness: b1,
        kurtosis: b2,
        skewness_statistic: skew_stat,
        kurtosis_statistic: kurt_stat,
        skewness_threshold: chi.inverse_cdf(1.0 - SIGNIFICANCE),
        kurtosis_threshold: normal.inverse_cdf(1.0 - SIGNIFICANCE / 2.0),
        skewness_p: chi.sf(skew_stat),
        kurtosis_p: 2.0 * normal.sf(kurt_stat.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn standard_normal_sample_passes() {
        let mut r = rng::stream(1, 0);
        let x = rng::normal_matrix(&mut r, 5000, 3, 1.0);
        let rep = gaussianity(&x).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert!((rep.kurtosis - 15.0).abs() < 1.0);
    }

    #[test]
    fn exponential_marginals_fail_skewness() {
        let mut r = rng::stream(2, 0);
        let x = Matrix::from_fn(5000, 3, |_, _| -(1.0 - r.random::<f64>()).ln());
        assert!(gaussianity(&x).unwrap().skewness_rejected());
    }

    /// Rejection rate under the null over repeated draws stays near 1%
    /// per test.
    #[test]
    fn calibration_under_the_null() {
        let mut r = rng::stream(3, 0);
        let mut rejections = 0;
        for _ in 0..200 {
            let x = rng::normal_matrix(&mut r, 500, 2, 1.0);
            rejections += usize::from(gaussianity(&x).unwrap().skewness_rejected());
        }
        assert!(rejections <= 8, "{rejections} of 200");
    }

    #[test]
    fn affine_invariance() {
        let mut r = rng::stream(4, 0);
        let x = rng::normal_matrix(&mut r, 800, 3, 1.0);
        let a = Matrix::from_rows(&[[2.0, 0.5, 0.0], [0.1, 1.0, -0.7], [0.0, 0.3, 3.0]]).unwrap();
        let y = x.matmul_t(&a).unwrap().add_row_broadcast(&Matrix::row_vector(&[5.0, -1.0, 2.0])).unwrap();
        let (p, q) = (gaussianity(&x).unwrap(), gaussianity(&y).unwrap());
        assert!((p.skewness - q.skewness).abs() < 1e-8);
        assert!((p.kurtosis - q.kurtosis).abs() < 1e-8);
    }

    #[test]
    fn too_few_points_and_singular_covariance() {
        assert!(gaussianity(&Matrix::zeros(3, 3)).is_err());
        let degenerate = Matrix::from_fn(50, 2, |i, k| if k == 0 { i as f64 } else { 2.0 * i as f64 });
        assert!(matches!(gaussianity(&degenerate), Err(Error::Singular(_))));
    }
}
