//! Invertible transforms with exact log-determinants.
//!
//! Direction convention: `forward` maps latent `z` to observation `x`
//! (`x = f(z)`), `inverse` maps `x` back to `z` and also returns
//! `log|det d f^{-1}(x) / dx|` per point. Training only ever needs the
//! inverse direction, so that is the one recorded on the tape.
//!
//! Batches are matrices with one point per row.

mod coupling;
mod linear;
mod maf;
mod stack;

pub use coupling::AffineCoupling;
pub use linear::LinearBlock;
pub use maf::MafBlock;
pub use stack::{compose, FlowStack};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Bound on every coupling / autoregressive log-scale.
pub const LOG_SCALE_BOUND: f64 = 5.0;

/// An invertible differentiable map `x = f(z)`.
pub trait FlowTransform {
    fn dim(&self) -> usize;

    /// Trainable tensors in declaration order.
    fn parameters(&self) -> Vec<&Matrix>;

    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    /// `x = f(z)` for a batch.
    fn forward(&self, z: &Matrix) -> Result<Matrix>;

    /// Records `z = f^{-1}(x)` and the per-point log-determinant (an
    /// `n x 1` node) on the tape. `params` are this transform's
    /// parameters bound on the same tape, in [`FlowTransform::parameters`]
    /// order.
    fn inverse_on_tape<'t>(&self, x: Var<'t>, params: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)>;

    /// `(f^{-1}(x), log|det J_{f^{-1}}(x)|)` for a batch.
    fn inverse_with_logdet(&self, x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        check_input(self.dim(), x)?;
        let tape = Tape::new();
        let params: Vec<Var> = self.parameters().into_iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let (z, logdet) = self.inverse_on_tape(xv, &params)?;
        Ok(((*z.value()).clone(), logdet.value().data().to_vec()))
    }

    fn inverse(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.inverse_with_logdet(x)?.0)
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn forward_point(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Matrix::row_vector(z))?.into_vec())
    }

    fn inverse_point(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.inverse_with_logdet(&Matrix::row_vector(x))?;
        Ok((z.into_vec(), ld[0]))
    }
}

pub(crate) fn check_input(dim: usize, x: &Matrix) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::dim("flow input", dim, x.cols()));
    }
    x.ensure_finite("flow input")
}

/// How fresh parameters are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Hidden layers `N(0, 1/fan_in)`, output layers zero: every block
    /// starts as the identity map.
    Identity,
    /// Every conditioner tensor `N(0, sigma^2)`; used for generator flows.
    Random { sigma: f64 },
}

impl Init {
    pub(crate) fn hidden(&self, rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        match *self {
            Init::Identity => rng::normal_matrix(rng, rows, cols, 1.0 / (rows.max(1) as f64).sqrt()),
            Init::Random { sigma } => rng::normal_matrix(rng, rows, cols, sigma),
        }
    }

    pub(crate) fn bias(&self, rng: &mut Rng, cols: usize) -> Matrix {
        match *self {
            Init::Identity => Matrix::zeros(1, cols),
            Init::Random { sigma } => rng::normal_matrix(rng, 1, cols, sigma),
        }
    }

    pub(crate) fn output(&self, rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        match *self {
            Init::Identity => Matrix::zeros(rows, cols),
            Init::Random { sigma } => rng::normal_matrix(rng, rows, cols, sigma),
        }
    }
}

/// Architecture family of the learned blocks in a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Linear,
    Coupling,
    Maf,
}

impl BlockKind {
    pub fn tag(self) -> u8 {
        match self {
            BlockKind::Linear => 0,
            BlockKind::Coupling => 1,
            BlockKind::Maf => 2,
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(BlockKind::Linear),
            "coupling" | "realnvp" => Ok(BlockKind::Coupling),
            "maf" => Ok(BlockKind::Maf),
            other => Err(Error::contract(format!("unknown block kind `{other}`"))),
        }
    }
}

/// Block type, count and conditioner width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: BlockKind,
    pub blocks: usize,
    pub hidden: usize,
}

impl FlowConfig {
    pub fn coupling(blocks: usize, hidden: usize) -> Self {
        FlowConfig {
            kind: BlockKind::Coupling,
            blocks,
            hidden,
        }
    }

    pub fn maf(blocks: usize, hidden: usize) -> Self {
        FlowConfig {
            kind: BlockKind::Maf,
            blocks,
            hidden,
        }
    }

    pub fn linear() -> Self {
        FlowConfig {
            kind: BlockKind::Linear,
            blocks: 1,
            hidden: 0,
        }
    }

    /// Conditioner width used when none is given: 64 for low-dimensional
    /// data, `2 * dim` capped at 512 above that.
    pub fn default_hidden(dim: usize) -> usize {
        if dim <= 8 {
            64
        } else {
            (2 * dim).min(512)
        }
    }

    pub fn build(&self, dim: usize, init: Init, rng: &mut Rng) -> Result<FlowStack> {
        let blocks = (0..self.blocks)
            .map(|_| -> Result<Block> {
                Ok(match self.kind {
                    BlockKind::Linear => Block::Linear(LinearBlock::identity(dim)),
                    BlockKind::Coupling => Block::Coupling(AffineCoupling::new(dim, self.hidden, init, rng)?),
                    BlockKind::Maf => Block::Maf(MafBlock::new(dim, self.hidden, init, rng)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        compose(blocks)
    }
}

/// Fixed coordinate reversal; its own inverse with log-det 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Reverse {
    dim: usize,
    order: Vec<usize>,
}

impl Reverse {
    pub fn new(dim: usize) -> Self {
        Reverse {
            dim,
            order: (0..dim).rev().collect(),
        }
    }
}

impl FlowTransform for Reverse {
    fn dim(&self) -> usize {
        self.dim
    }

    fn parameters(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        Vec::new()
    }

    fn forward(&self, z: &Matrix) -> Result<Matrix> {
        check_input(self.dim, z)?;
        z.select_columns(&self.order)
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, _params: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let n = x.shape().0;
        let z = x.select_columns(&self.order)?;
        Ok((z, x.tape().constant(Matrix::zeros(n, 1))))
    }
}

/// Any member of a [`FlowStack`].
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Linear(LinearBlock),
    Coupling(AffineCoupling),
    Maf(MafBlock),
    Reverse(Reverse),
}

impl Block {
    pub fn is_learned(&self) -> bool {
        !matches!(self, Block::Reverse(_))
    }

    fn inner(&self) -> &dyn FlowTransform {
        match self {
            Block::Linear(b) => b,
            Block::Coupling(b) => b,
            Block::Maf(b) => b,
            Block::Reverse(b) => b,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn FlowTransform {
        match self {
            Block::Linear(b) => b,
            Block::Coupling(b) => b,
            Block::Maf(b) => b,
            Block::Reverse(b) => b,
        }
    }
}

impl FlowTransform for Block {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn parameters(&self) -> Vec<&Matrix> {
        self.inner().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.inner_mut().parameters_mut()
    }

    fn forward(&self, z: &Matrix) -> Result<Matrix> {
        self.inner().forward(z)
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, params: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        self.inner().inverse_on_tape(x, params)
    }
}

/// `tanh` hidden layer `tanh(x w + b)`.
pub(crate) fn hidden_layer<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(x.matmul(w)?.add_row(b)?.tanh())
}

/// Linear output layer `h w + b`.
pub(crate) fn output_layer<'t>(h: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    h.matmul(w)?.add_row(b)
}

/// Evaluates a tape computation with parameters bound as leaves and
/// returns the plain value; used by the non-differentiated directions.
pub(crate) fn eval_with_params<F>(params: Vec<&Matrix>, f: F) -> Result<Matrix>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.into_iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    Ok((*v).clone())
}

#[cfg(test)]
pub(crate) mod testing {
    //! Oracles shared by the flow tests.

    use super::*;

    /// Central-difference Jacobian of `f^{-1}` at `x` (row-major,
    /// `J[i][j] = d z_i / d x_j`).
    pub fn numeric_inverse_jacobian<F: FlowTransform + ?Sized>(flow: &F, x: &[f64], h: f64) -> Matrix {
        let d = x.len();
        let mut jac = Matrix::zeros(d, d);
        for j in 0..d {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            let zp = flow.inverse_point(&xp).unwrap().0;
            let zm = flow.inverse_point(&xm).unwrap().0;
            for i in 0..d {
                jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        jac
    }
}
