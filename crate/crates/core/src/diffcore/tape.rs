//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its value together with one
//! vector-Jacobian closure per parent. Nodes are only ever appended, so
//! node indices are a topological order and `backward` is a single
//! reverse sweep.

use std::cell::RefCell;
use std::ops::Range;
use std::rc::Rc;

use super::decomp::Lu;
use super::Matrix;
use crate::error::{Error, Result};

type Vjp = Box<dyn Fn(&Matrix) -> Matrix>;

struct Node {
    value: Rc<Matrix>,
    parents: Vec<(usize, Vjp)>,
}

/// Recording tape. Build one per gradient evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

/// Result of a backward pass: one gradient per node, same shape as the
/// node value.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when the loss
    /// does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Matrix {
        match &self.grads[var.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.idx];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Matrix {
        let (r, c) = self.shapes[var.idx];
        self.grads[var.idx].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, parents: Vec<(usize, Vjp)>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Leaf node. Parameters and constants are both leaves; the caller
    /// decides which gradients to read.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Vec::new())
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.leaf(value)
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn hcat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
        let out = Matrix::hcat(&refs)?;
        let mut parents: Vec<(usize, Vjp)> = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (p, v) in parts.iter().zip(&values) {
            let range = offset..offset + v.cols();
            offset += v.cols();
            parents.push((p.idx, Box::new(move |g: &Matrix| g.columns(range.clone()).expect("hcat slice"))));
        }
        Ok(self.push(out, parents))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.idx].value.shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let shapes: Vec<(usize, usize)> = nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            for (parent, vjp) in &nodes[idx].parents {
                let contrib = vjp(&g);
                match &mut grads[*parent] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Matrix> {
        Rc::clone(&self.tape.nodes.borrow()[self.idx].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: Matrix, vjp: Vjp) -> Var<'t> {
        self.tape.push(value, vec![(self.idx, vjp)])
    }

    fn binary(self, other: Var<'t>, value: Matrix, da: Vjp, db: Vjp) -> Var<'t> {
        self.tape.push(value, vec![(self.idx, da), (other.idx, db)])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.matmul(&b)?;
        let (a2, b2) = (Rc::clone(&a), Rc::clone(&b));
        Ok(self.binary(
            other,
            out,
            Box::new(move |g| g.matmul_t(&b2).expect("matmul vjp")),
            Box::new(move |g| a2.t_matmul(g).expect("matmul vjp")),
        ))
    }

    pub fn transpose(self) -> Var<'t> {
        let out = self.value().transpose();
        self.unary(out, Box::new(|g| g.transpose()))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().add(&other.value())?;
        Ok(self.binary(other, out, Box::new(|g| g.clone()), Box::new(|g| g.clone())))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().sub(&other.value())?;
        Ok(self.binary(other, out, Box::new(|g| g.clone()), Box::new(|g| g.scale(-1.0))))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.hadamard(&b)?;
        Ok(self.binary(
            other,
            out,
            Box::new(move |g| g.hadamard(&b).expect("mul vjp")),
            Box::new(move |g| g.hadamard(&a).expect("mul vjp")),
        ))
    }

    /// Elementwise product with a constant matrix (used for masks).
    pub fn mul_const(self, mask: Rc<Matrix>) -> Result<Var<'t>> {
        let out = self.value().hadamard(&mask)?;
        Ok(self.unary(out, Box::new(move |g| g.hadamard(&mask).expect("mask vjp"))))
    }

    /// Adds a `1 x cols` row to every row of `self`.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().add_row_broadcast(&bias.value())?;
        Ok(self.binary(bias, out, Box::new(|g| g.clone()), Box::new(|g| g.sum_rows())))
    }

    /// Repeats a `1 x cols` node `n` times down the rows.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.rows() != 1 {
            return Err(Error::dim("broadcast_rows", "1 row", v.rows()));
        }
        let out = Matrix::zeros(n, v.cols()).add_row_broadcast(&v)?;
        Ok(self.unary(out, Box::new(|g| g.sum_rows())))
    }

    /// Multiplies every entry by the 1x1 node `s`.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.shape() != (1, 1) {
            return Err(Error::dim("mul_scalar", "1x1", format!("{}x{}", sv.rows(), sv.cols())));
        }
        let a = self.value();
        let k = sv.data()[0];
        let out = a.scale(k);
        Ok(self.binary(
            s,
            out,
            Box::new(move |g| g.scale(k)),
            Box::new(move |g| Matrix::scalar(g.data().iter().zip(a.data()).map(|(x, y)| x * y).sum())),
        ))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let out = self.value().scale(k);
        self.unary(out, Box::new(move |g| g.scale(k)))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.unary(out, Box::new(|g| g.clone()))
    }

    pub fn tanh(self) -> Var<'t> {
        let y = Rc::new(self.value().map(f64::tanh));
        let y2 = Rc::clone(&y);
        self.unary(
            (*y).clone(),
            Box::new(move |g| g.zip_map(&y2, "tanh vjp", |g, y| g * (1.0 - y * y)).expect("tanh vjp")),
        )
    }

    pub fn exp(self) -> Var<'t> {
        let y = Rc::new(self.value().map(f64::exp));
        let y2 = Rc::clone(&y);
        self.unary((*y).clone(), Box::new(move |g| g.hadamard(&y2).expect("exp vjp")))
    }

    pub fn square(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.unary(out, Box::new(move |g| g.zip_map(&x, "square vjp", |g, x| 2.0 * g * x).expect("square vjp")))
    }

    /// Sum of all entries, as 1x1.
    pub fn sum(self) -> Var<'t> {
        let (r, c) = self.shape();
        let out = Matrix::scalar(self.value().sum());
        self.unary(out, Box::new(move |g| Matrix::filled(r, c, g.data()[0])))
    }

    /// Mean of all entries, as 1x1.
    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        let n = (r * c).max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sums, as `rows x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let (r, c) = self.shape();
        let out = self.value().sum_cols();
        self.unary(out, Box::new(move |g| Matrix::from_fn(r, c, |i, _| g.data()[i])))
    }

    pub fn columns(self, range: Range<usize>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        let out = self.value().columns(range.clone())?;
        Ok(self.unary(
            out,
            Box::new(move |g| {
                let mut full = Matrix::zeros(r, c);
                for i in 0..r {
                    full.row_mut(i)[range.clone()].copy_from_slice(g.row(i));
                }
                full
            }),
        ))
    }

    pub fn select_columns(self, indices: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        let out = self.value().select_columns(indices)?;
        let indices = indices.to_vec();
        Ok(self.unary(
            out,
            Box::new(move |g| {
                let mut full = Matrix::zeros(r, c);
                for i in 0..r {
                    let gr = g.row(i);
                    let fr = full.row_mut(i);
                    for (k, &j) in indices.iter().enumerate() {
                        fr[j] += gr[k];
                    }
                }
                full
            }),
        ))
    }

    /// Rows of `self` (a lookup table) picked by `indices`.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        let out = self.value().select_rows(indices)?;
        let indices = indices.to_vec();
        Ok(self.unary(
            out,
            Box::new(move |g| {
                let mut full = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (f, v) in full.row_mut(i).iter_mut().zip(g.row(k)) {
                        *f += v;
                    }
                }
                full
            }),
        ))
    }

    /// `log|det self|` of a square node, as 1x1.
    pub fn log_abs_det(self) -> Result<Var<'t>> {
        let lu = Lu::new(&self.value())?;
        let out = Matrix::scalar(lu.log_abs_det());
        let inv_t = lu.inverse()?.transpose();
        Ok(self.unary(out, Box::new(move |g| inv_t.scale(g.data()[0]))))
    }
}
