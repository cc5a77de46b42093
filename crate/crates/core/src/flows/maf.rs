use std::rc::Rc;

use super::coupling::check_shapes;
use super::{check_input, FlowTransform, Init, LOG_SCALE_BOUND};
use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Masked autoregressive block.
///
/// A MADE-masked two-layer perceptron produces `(mu_i, alpha_i)` from
/// `x_{<i}`; the inverse is a single parallel pass
///
/// ```text
/// z_i = (x_i - mu_i(x_{<i})) * exp(-alpha_i(x_{<i}))
/// ```
///
/// with `log|det| = -sum_i alpha_i`, while `forward` has to fill in the
/// coordinates one at a time. `alpha = 5 tanh(raw / 5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MafBlock {
    dim: usize,
    hidden: usize,
    params: Vec<Matrix>,
    input_mask: Matrix,
    output_mask: Matrix,
}

const W1: usize = 0;
const B1: usize = 1;
const W_SHIFT: usize = 2;
const B_SHIFT: usize = 3;
const W_LOGSCALE: usize = 4;
const B_LOGSCALE: usize = 5;

/// MADE masks for the natural ordering. Hidden unit `j` gets degree
/// `j mod (d - 1) + 1`; it sees inputs with degree `<=` its own and
/// feeds outputs with strictly larger degree.
fn made_masks(dim: usize, hidden: usize) -> (Matrix, Matrix) {
    let degree = |j: usize| j % (dim.saturating_sub(1).max(1)) + 1;
    let input = Matrix::from_fn(dim, hidden, |i, j| if degree(j) > i { 1.0 } else { 0.0 });
    let output = Matrix::from_fn(hidden, dim, |j, o| if o + 1 > degree(j) { 1.0 } else { 0.0 });
    (input, output)
}

impl MafBlock {
    pub fn new(dim: usize, hidden: usize, init: Init, rng: &mut Rng) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::contract("MAF block needs dim > 0 and hidden width > 0"));
        }
        let params = vec![
            init.hidden(rng, dim, hidden),
            init.bias(rng, hidden),
            init.output(rng, hidden, dim),
            init.bias(rng, dim),
            init.output(rng, hidden, dim),
            init.bias(rng, dim),
        ];
        Self::from_parameters(dim, hidden, params)
    }

    pub fn from_parameters(dim: usize, hidden: usize, params: Vec<Matrix>) -> Result<Self> {
        let shapes = [(dim, hidden), (1, hidden), (hidden, dim), (1, dim), (hidden, dim), (1, dim)];
        check_shapes("maf", &params, &shapes)?;
        let (input_mask, output_mask) = made_masks(dim, hidden);
        Ok(MafBlock {
            dim,
            hidden,
            params,
            input_mask,
            output_mask,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `(mu, alpha)` of every coordinate given the whole batch `x`.
    fn conditioner<'t>(&self, x: Var<'t>, p: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let w1 = p[W1].mul_const(Rc::new(self.input_mask.clone()))?;
        let out_mask = Rc::new(self.output_mask.clone());
        let h = x.matmul(w1)?.add_row(p[B1])?.tanh();
        let w_mu = p[W_SHIFT].mul_const(Rc::clone(&out_mask))?;
        let mu = h.matmul(w_mu)?.add_row(p[B_SHIFT])?;
        let w_alpha = p[W_LOGSCALE].mul_const(out_mask)?;
        let raw = h.matmul(w_alpha)?.add_row(p[B_LOGSCALE])?;
        let alpha = raw.scale(1.0 / LOG_SCALE_BOUND).tanh().scale(LOG_SCALE_BOUND);
        Ok((mu, alpha))
    }
}

impl FlowTransform for MafBlock {
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
        let n = z.rows();
        let mut x = Matrix::zeros(n, self.dim);
        for i in 0..self.dim {
            let tape = Tape::new();
            let p: Vec<Var> = self.params.iter().map(|m| tape.leaf(m.clone())).collect();
            let (mu, alpha) = self.conditioner(tape.constant(x.clone()), &p)?;
            let (mu, alpha) = (mu.value(), alpha.value());
            for r in 0..n {
                x[(r, i)] = z[(r, i)] * alpha[(r, i)].exp() + mu[(r, i)];
            }
        }
        Ok(x)
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, p: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let (mu, alpha) = self.conditioner(x, p)?;
        let z = x.sub(mu)?.mul(alpha.neg().exp())?;
        Ok((z, alpha.sum_cols().neg()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::log_abs_det;
    use crate::flows::testing::numeric_inverse_jacobian;
    use crate::rng;

    #[test]
    fn masks_are_strictly_autoregressive() {
        for dim in 1..6 {
            let (a, b) = made_masks(dim, 7);
            let conn = a.matmul(&b).unwrap();
            for i in 0..dim {
                for o in 0..dim {
                    if o <= i {
                        assert_eq!(conn[(i, o)], 0.0, "input {i} reaches output {o}");
                    }
                }
            }
        }
    }

    #[test]
    fn identity_init_is_identity() {
        let mut r = rng::stream(5, 0);
        let block = MafBlock::new(4, 12, Init::Identity, &mut r).unwrap();
        let x = rng::normal_matrix(&mut r, 6, 4, 1.0);
        let (z, ld) = block.inverse_with_logdet(&x).unwrap();
        assert_eq!(z, x);
        assert!(ld.iter().all(|&v| v == 0.0));
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn random_block_forward_inverts_inverse() {
        let mut r = rng::stream(6, 0);
        let block = MafBlock::new(3, 16, Init::Random { sigma: 0.5 }, &mut r).unwrap();
        let x = rng::normal_matrix(&mut r, 100, 3, 2.0);
        let z = block.inverse(&x).unwrap();
        assert!(block.forward(&z).unwrap().sub(&x).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn inverse_jacobian_is_lower_triangular_with_matching_logdet() {
        let mut r = rng::stream(7, 0);
        for dim in [1, 2, 4, 6] {
            let block = MafBlock::new(dim, 10, Init::Random { sigma: 0.5 }, &mut r).unwrap();
            let x = rng::normal_matrix(&mut r, 4, dim, 1.0);
            let (_, ld) = block.inverse_with_logdet(&x).unwrap();
            for i in 0..4 {
                let jac = numeric_inverse_jacobian(&block, x.row(i), 1e-5);
                for a in 0..dim {
                    for b in a + 1..dim {
                        assert!(jac[(a, b)].abs() < 1e-8, "dz_{a}/dx_{b} = {}", jac[(a, b)]);
                    }
                }
                assert!((log_abs_det(&jac).unwrap() - ld[i]).abs() < 1e-6);
            }
        }
    }
}
