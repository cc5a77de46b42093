//! Dense factorizations: Cholesky, LU with partial pivoting and cyclic
//! Jacobi for symmetric eigenproblems.

use super::Matrix;
use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

fn require_square(m: &Matrix, op: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(op, "square matrix", format!("{}x{}", m.rows(), m.cols())));
    }
    Ok(())
}

/// Sum of `log|m_ii|` for a triangular matrix, which is `log|det m|`.
pub fn logdet_triangular(m: &Matrix) -> Result<f64> {
    require_square(m, "logdet_triangular")?;
    let n = m.rows();
    let upper = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == 0.0));
    let lower = (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == 0.0));
    if !upper && !lower {
        return Err(Error::contract("logdet_triangular needs a triangular matrix"));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let d = m[(i, i)];
        if d == 0.0 {
            return Err(Error::Singular(format!("zero diagonal entry at {i}")));
        }
        acc += d.abs().ln();
    }
    Ok(acc)
}

/// Lower-triangular `L` with `a = L L^T`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    require_square(a, "cholesky")?;
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Decomposition(format!(
                "matrix is not positive definite (pivot {j} = {d:e})"
            )));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`, column by column.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    if l.rows() != b.rows() {
        return Err(Error::dim("solve_lower", l.rows(), b.rows()));
    }
    let (n, m) = (l.rows(), b.cols());
    let mut y = b.clone();
    for c in 0..m {
        for i in 0..n {
            let mut s = y[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(y)
}

/// Solves `L^T x = y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, y: &Matrix) -> Result<Matrix> {
    if l.rows() != y.rows() {
        return Err(Error::dim("solve_lower_transpose", l.rows(), y.rows()));
    }
    let (n, m) = (l.rows(), y.cols());
    let mut x = y.clone();
    for c in 0..m {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_symmetric(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let l = cholesky(a)?;
    let y = solve_lower(&l, b)?;
    solve_lower_transpose(&l, &y)
}

/// `log det a` for symmetric positive definite `a`.
pub fn logdet_spd(a: &Matrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix> {
    Ok(solve_symmetric(a, &Matrix::identity(a.rows()))?.symmetrize())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the second matrix.
pub fn eig_symmetric(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    require_square(a, "eig_symmetric")?;
    a.ensure_finite("eig_symmetric input")?;
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.select_columns(&order)?;
    Ok((values, vectors))
}

/// Symmetric inverse square root `a^{-1/2}` of an SPD matrix.
pub fn inverse_sqrt_spd(a: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = eig_symmetric(a)?;
    if let Some(bad) = vals.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Decomposition(format!("eigenvalue {bad:e} is not positive")));
    }
    let scaled = Matrix::from_fn(a.rows(), a.cols(), |i, j| vecs[(i, j)] / vals[j].sqrt());
    Ok(scaled.matmul_t(&vecs)?.symmetrize())
}

/// LU factorization with partial pivoting, `P a = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Lu> {
        require_square(a, "lu")?;
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (piv, max) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if max == 0.0 || !max.is_finite() {
                return Err(Error::Singular(format!("no usable pivot in column {k}")));
            }
            if piv != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = t;
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.lu.rows()).map(|i| self.lu[(i, i)].abs().ln()).sum()
    }

    pub fn det(&self) -> f64 {
        self.sign * (0..self.lu.rows()).map(|i| self.lu[(i, i)]).product::<f64>()
    }

    /// Solves `a x = b` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::dim("lu solve", n, b.rows()));
        }
        let mut x = b.select_rows(&self.perm)?;
        for c in 0..b.cols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.solve(&Matrix::identity(self.lu.rows()))
    }
}

/// `log|det a|` for a general square matrix.
pub fn log_abs_det(a: &Matrix) -> Result<f64> {
    Ok(Lu::new(a)?.log_abs_det())
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Lu::new(a)?.inverse()
}

/// Orthonormal basis for the column span of `a` (modified Gram-Schmidt).
pub fn orthonormal_columns(a: &Matrix) -> Result<Matrix> {
    let (n, k) = a.shape();
    let mut q = a.clone();
    for j in 0..k {
        for prev in 0..j {
            let dot: f64 = (0..n).map(|i| q[(i, j)] * q[(i, prev)]).sum();
            for i in 0..n {
                q[(i, j)] -= dot * q[(i, prev)];
            }
        }
        let norm = (0..n).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Singular(format!("column {j} is linearly dependent")));
        }
        for i in 0..n {
            q[(i, j)] /= norm;
        }
    }
    Ok(q)
}

/// Principal angles (radians, ascending) between the column spans of
/// `a` and `b`.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let qa = orthonormal_columns(a)?;
    let qb = orthonormal_columns(b)?;
    let c = qa.t_matmul(&qb)?;
    let (vals, _) = eig_symmetric(&c.matmul_t(&c)?)?;
    let k = a.cols().min(b.cols());
    let mut angles: Vec<f64> = vals
        .into_iter()
        .take(k)
        .map(|s2| s2.clamp(0.0, 1.0).sqrt().acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}
