use super::{check_input, eval_with_params, hidden_layer, output_layer, FlowTransform, Init, LOG_SCALE_BOUND};
use crate::diffcore::{Matrix, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// RealNVP-style affine coupling.
///
/// The first `split = dim / 2` coordinates pass through unchanged and
/// condition the rest:
///
/// ```text
/// x_b = z_b * exp(s(z_a)) + t(z_a)
/// s   = 5 tanh(c) * tanh(scale_net(z_a))
/// ```
///
/// `s` and `t` come from separate two-layer `tanh` perceptrons and `c`
/// is a learned scalar, so every log-scale stays inside `[-5, 5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoupling {
    dim: usize,
    split: usize,
    hidden: usize,
    // scale net, shift net, cap
    params: Vec<Matrix>,
}

const SCALE_W1: usize = 0;
const SCALE_B1: usize = 1;
const SCALE_W2: usize = 2;
const SCALE_B2: usize = 3;
const SHIFT_W1: usize = 4;
const SHIFT_B1: usize = 5;
const SHIFT_W2: usize = 6;
const SHIFT_B2: usize = 7;
const CAP: usize = 8;

impl AffineCoupling {
    pub fn new(dim: usize, hidden: usize, init: Init, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract("affine coupling needs dim >= 2"));
        }
        if hidden == 0 {
            return Err(Error::contract("coupling conditioner needs a hidden width > 0"));
        }
        let split = dim / 2;
        let out = dim - split;
        let cap = match init {
            // cap starts at exactly 1
            Init::Identity => Matrix::scalar((1.0 / LOG_SCALE_BOUND).atanh()),
            Init::Random { .. } => init.bias(rng, 1),
        };
        let params = vec![
            init.hidden(rng, split, hidden),
            init.bias(rng, hidden),
            init.output(rng, hidden, out),
            init.bias(rng, out),
            init.hidden(rng, split, hidden),
            init.bias(rng, hidden),
            init.output(rng, hidden, out),
            init.bias(rng, out),
            cap,
        ];
        Ok(AffineCoupling {
            dim,
            split,
            hidden,
            params,
        })
    }

    /// Rebuilds a block from stored tensors, validating their shapes.
    pub fn from_parameters(dim: usize, hidden: usize, params: Vec<Matrix>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract("affine coupling needs dim >= 2"));
        }
        let split = dim / 2;
        let out = dim - split;
        let shapes = [
            (split, hidden),
            (1, hidden),
            (hidden, out),
            (1, out),
            (split, hidden),
            (1, hidden),
            (hidden, out),
            (1, out),
            (1, 1),
        ];
        check_shapes("coupling", &params, &shapes)?;
        Ok(AffineCoupling {
            dim,
            split,
            hidden,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn split(&self) -> usize {
        self.split
    }

    /// `(s, t)` for the conditioning half `xa`.
    fn conditioner<'t>(&self, xa: Var<'t>, p: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let raw = output_layer(hidden_layer(xa, p[SCALE_W1], p[SCALE_B1])?, p[SCALE_W2], p[SCALE_B2])?;
        let cap = p[CAP].tanh().scale(LOG_SCALE_BOUND);
        let s = raw.tanh().mul_scalar(cap)?;
        let t = output_layer(hidden_layer(xa, p[SHIFT_W1], p[SHIFT_B1])?, p[SHIFT_W2], p[SHIFT_B2])?;
        Ok((s, t))
    }
}

pub(crate) fn check_shapes(what: &str, params: &[Matrix], shapes: &[(usize, usize)]) -> Result<()> {
    if params.len() != shapes.len() {
        return Err(Error::contract(format!(
            "{what} block expects {} tensors, got {}",
            shapes.len(),
            params.len()
        )));
    }
    for (i, (p, s)) in params.iter().zip(shapes).enumerate() {
        if p.shape() != *s {
            return Err(Error::dim("block parameters", format!("{what} tensor {i} {}x{}", s.0, s.1), format!("{}x{}", p.rows(), p.cols())));
        }
    }
    Ok(())
}

impl FlowTransform for AffineCoupling {
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
        eval_with_params(self.parameters(), |tape, p| {
            let zv = tape.constant(z.clone());
            let za = zv.columns(0..self.split)?;
            let zb = zv.columns(self.split..self.dim)?;
            let (s, t) = self.conditioner(za, p)?;
            let xb = zb.mul(s.exp())?.add(t)?;
            tape.hcat(&[za, xb])
        })
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, p: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let xa = x.columns(0..self.split)?;
        let xb = x.columns(self.split..self.dim)?;
        let (s, t) = self.conditioner(xa, p)?;
        let zb = xb.sub(t)?.mul(s.neg().exp())?;
        let z = x.tape().hcat(&[xa, zb])?;
        Ok((z, s.sum_cols().neg()))
    }
}
