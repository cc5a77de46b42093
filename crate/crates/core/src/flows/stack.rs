use super::{check_input, Block, FlowTransform, Reverse};
use crate::diffcore::{Matrix, Var};
use crate::error::{Error, Result};

/// Ordered composition of blocks.
///
/// Blocks are stored in data-to-latent order: `inverse` applies
/// `blocks[0]` first, `forward` runs the list backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    dim: usize,
    blocks: Vec<Block>,
}

/// Chains `blocks`, inserting a coordinate reversal between each pair of
/// consecutive learned blocks, plus a trailing one when needed so the
/// reversals cancel. Every block must share one dimension.
pub fn compose(blocks: Vec<Block>) -> Result<FlowStack> {
    let dim = blocks
        .first()
        .map(|b| b.dim())
        .ok_or_else(|| Error::contract("compose needs at least one block"))?;
    if let Some(bad) = blocks.iter().find(|b| b.dim() != dim) {
        return Err(Error::dim("compose", dim, bad.dim()));
    }
    let mut out = Vec::with_capacity(2 * blocks.len());
    for block in blocks {
        let prev_learned = out.last().is_some_and(Block::is_learned);
        if prev_learned && block.is_learned() {
            out.push(Block::Reverse(Reverse::new(dim)));
        }
        out.push(block);
    }
    // an odd number of reversals would leave the stack permuted at init
    if out.iter().filter(|b| !b.is_learned()).count() % 2 == 1 {
        out.push(Block::Reverse(Reverse::new(dim)));
    }
    Ok(FlowStack { dim, blocks: out })
}

impl FlowStack {
    /// The identity map, as an empty stack.
    pub fn identity(dim: usize) -> Self {
        FlowStack {
            dim,
            blocks: Vec::new(),
        }
    }

    /// Uses `blocks` verbatim, without inserting permutations.
    pub fn from_blocks(dim: usize, blocks: Vec<Block>) -> Result<Self> {
        if let Some(bad) = blocks.iter().find(|b| b.dim() != dim) {
            return Err(Error::dim("FlowStack::from_blocks", dim, bad.dim()));
        }
        Ok(FlowStack { dim, blocks })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn num_learned_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_learned()).count()
    }
}

impl FlowTransform for FlowStack {
    fn dim(&self) -> usize {
        self.dim
    }

    fn parameters(&self) -> Vec<&Matrix> {
        self.blocks.iter().flat_map(|b| b.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.blocks.iter_mut().flat_map(|b| b.parameters_mut()).collect()
    }

    fn forward(&self, z: &Matrix) -> Result<Matrix> {
        check_input(self.dim, z)?;
        let mut x = z.clone();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            x = block.forward(&x)?;
            if !x.is_finite() {
                return Err(Error::non_finite(format!("forward pass of block {i}")));
            }
        }
        Ok(x)
    }

    fn inverse_on_tape<'t>(&self, x: Var<'t>, params: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let n = x.shape().0;
        let mut cur = x;
        let mut total = x.tape().constant(Matrix::zeros(n, 1));
        let mut offset = 0;
        for (i, block) in self.blocks.iter().enumerate() {
            let k = block.parameters().len();
            let (z, ld) = block.inverse_on_tape(cur, &params[offset..offset + k])?;
            offset += k;
            if !z.value().is_finite() || !ld.value().is_finite() {
                return Err(Error::non_finite(format!("inverse pass of block {i}")));
            }
            total = total.add(ld)?;
            cur = z;
        }
        Ok((cur, total))
    }
}
