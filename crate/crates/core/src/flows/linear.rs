use super::coupling::check_shapes;
use super::{check_input, FlowTransform};
use crate::diffcore::{Lu, Matrix, Var};
use crate::error::{Error, Result};

/// Affine block `z = M x + b`, the linear special case of a flow.
///
/// `log|det J_{f^{-1}}| = log|det M|` for every point.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBlock {
    dim: usize,
    // [M (d x d), b (1 x d)]
    params: Vec<Matrix>,
}

impl LinearBlock {
    pub fn identity(dim: usize) -> Self {
        LinearBlock {
            dim,
            params: vec![Matrix::identity(dim), Matrix::zeros(1, dim)],
        }
    }

    /// `z = M x + offset`; `offset` has length `dim`.
    pub fn new(projection: Matrix, offset: &[f64]) -> Result<Self> {
        Self::from_parameters(projection.rows(), vec![projection, Matrix::row_vector(offset)])
    }

    pub fn from_parameters(dim: usize, params: Vec<Matrix>) -> Result<Self> {
        check_shapes("linear", &params, &[(dim, dim), (1, dim)])?;
        Ok(LinearBlock { dim, params })
    }

    pub fn projection(&self) -> &Matrix {
        &self.params[0]
    }

    pub fn offset(&self) -> &[f64] {
        self.params[1].data()
    }
}

impl FlowTransform for LinearBlock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn parameters(&self) -> Vec<&Matrix> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.params.iter_mut().collect()
    }

    fn forward(&self, z: &Matrix) -> Result<Matrix> {
        check_input(self.dim, z)?;
        let lu = Lu::new(&self.params[0]).map_err(|e| Error::Singular(format!("linear block: {e}")))?;
        let centered = z.add_row_broadcast(&self.params[1].scale(-1.0))?;
        Ok(lu.solve(&centered.transpose())?.transpose())
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, p: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let n = x.shape().0;
        let z = x.matmul(p[0].transpose())?.add_row(p[1])?;
        let logdet = p[0].log_abs_det()?.broadcast_rows(n)?;
        Ok((z, logdet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_flow() {
        // x = 2 z, so f^{-1}(x) = x / 2 and M = 1/2
        let block = LinearBlock::new(Matrix::scalar(0.5), &[0.0]).unwrap();
        assert_eq!(block.forward_point(&[1.0]).unwrap(), vec![2.0]);
        let (z, ld) = block.inverse_point(&[2.0]).unwrap();
        assert_eq!(z, vec![1.0]);
        assert!((ld + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn affine_round_trip() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [0.5, -1.0]]).unwrap();
        let block = LinearBlock::new(m, &[0.3, -0.7]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.25]]).unwrap();
        let z = block.inverse(&x).unwrap();
        assert!(block.forward(&z).unwrap().sub(&x).unwrap().max_abs() < 1e-12);
        assert!((z[(0, 0)] - 4.3).abs() < 1e-12);
    }

    #[test]
    fn singular_projection_fails_forward() {
        let block = LinearBlock::new(Matrix::zeros(2, 2), &[0.0, 0.0]).unwrap();
        assert!(block.forward(&Matrix::zeros(1, 2)).is_err());
    }
}
