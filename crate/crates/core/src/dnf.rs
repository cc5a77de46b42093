//! Class-conditional flow with unit-covariance Gaussian classes.
//!
//! ```text
//! log p(x | y) = log N(f^{-1}(x); mu_y, I) + log|det d f^{-1}(x) / dx|
//! mu_y = [mu_y^c ; 0]          (first p coordinates class-dependent)
//! ```
//!
//! `p = d` is full DNF, `p < d` subspace DNF, and a single class with
//! `p = 0` is an ordinary normalizing flow.

use std::f64::consts::PI;

use crate::dataset::LabeledDataset;
use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::flows::{FlowStack, FlowTransform};
use crate::rng::{self, streams};

/// `d/2 log(2 pi)`.
pub fn gaussian_log_norm(dim: usize) -> f64 {
    0.5 * dim as f64 * (2.0 * PI).ln()
}

/// Per-class latent means restricted to the first `class_dim`
/// coordinates; the remaining coordinates share a fixed zero mean and
/// every class has identity covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior {
    dim: usize,
    means: Matrix,
}

impl ClassPrior {
    pub fn zeros(num_classes: usize, dim: usize, class_dim: usize) -> Result<Self> {
        Self::new(dim, Matrix::zeros(num_classes, class_dim))
    }

    /// `means` is `num_classes x class_dim`.
    pub fn new(dim: usize, means: Matrix) -> Result<Self> {
        if means.cols() > dim {
            return Err(Error::contract(format!(
                "class dim {} exceeds latent dim {dim}",
                means.cols()
            )));
        }
        if means.rows() == 0 {
            return Err(Error::contract("prior needs at least one class"));
        }
        means.ensure_finite("class means")?;
        Ok(ClassPrior { dim, means })
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_dim(&self) -> usize {
        self.means.cols()
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn means_mut(&mut self) -> &mut Matrix {
        &mut self.means
    }

    /// Full `d`-dimensional mean of class `y`.
    pub fn full_mean(&self, y: usize) -> Result<Vec<f64>> {
        self.check_class(y)?;
        let mut m = self.means.row(y).to_vec();
        m.resize(self.dim, 0.0);
        Ok(m)
    }

    pub fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::InvalidClass {
                class: y,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn log_density(&self, z: &[f64], y: usize) -> Result<f64> {
        let mu = self.full_mean(y)?;
        let quad: f64 = z.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(-0.5 * quad - gaussian_log_norm(self.dim))
    }
}

/// Everything a gradient step needs from one forward pass.
pub struct Objective<'t> {
    /// Mean negative log-likelihood, 1x1.
    pub loss: Var<'t>,
    /// Per-point log-likelihoods, `n x 1`.
    pub log_probs: Var<'t>,
    /// Bound parameters in [`DnfModel::parameters`] order.
    pub params: Vec<Var<'t>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnfModel {
    flow: FlowStack,
    prior: ClassPrior,
}

impl DnfModel {
    pub fn new(flow: FlowStack, prior: ClassPrior) -> Result<Self> {
        if flow.dim() != prior.dim() {
            return Err(Error::dim("DnfModel::new", prior.dim(), flow.dim()));
        }
        Ok(DnfModel { flow, prior })
    }

    /// Builds a model whose class means are the per-class means of
    /// `f^{-1}(x)` over `data`, truncated to `class_dim`.
    pub fn with_data_means(flow: FlowStack, num_classes: usize, class_dim: usize, data: &LabeledDataset) -> Result<Self> {
        if data.dim() != flow.dim() {
            return Err(Error::dim("DnfModel::with_data_means", flow.dim(), data.dim()));
        }
        if let Some(&bad) = data.labels().iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidClass { class: bad, num_classes });
        }
        let z = flow.inverse(data.features())?;
        let latents = data.with_features(z.columns(0..class_dim)?)?;
        let mut means = Matrix::zeros(num_classes, class_dim);
        let observed = latents.class_means();
        for y in 0..observed.rows() {
            means.row_mut(y).copy_from_slice(observed.row(y));
        }
        let dim = flow.dim();
        DnfModel::new(flow, ClassPrior::new(dim, means)?)
    }

    pub fn flow(&self) -> &FlowStack {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut FlowStack {
        &mut self.flow
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }

    pub fn prior_mut(&mut self) -> &mut ClassPrior {
        &mut self.prior
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn class_dim(&self) -> usize {
        self.prior.class_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.prior.num_classes()
    }

    /// Flow tensors followed by the class-mean table.
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.flow.parameters();
        p.push(self.prior.means());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.flow.parameters_mut();
        p.push(self.prior.means_mut());
        p
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|m| m.len()).sum()
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        for &y in labels {
            self.prior.check_class(y)?;
        }
        Ok(())
    }

    /// Records the batch log-likelihood on `tape`.
    pub fn objective<'t>(&self, tape: &'t Tape, batch: &LabeledDataset) -> Result<Objective<'t>> {
        if batch.is_empty() {
            return Err(Error::contract("objective of an empty batch"));
        }
        if batch.dim() != self.dim() {
            return Err(Error::dim("DnfModel::objective", self.dim(), batch.dim()));
        }
        self.check_labels(batch.labels())?;
        let params: Vec<Var<'t>> = self.parameters().into_iter().map(|m| tape.leaf(m.clone())).collect();
        let (flow_params, means) = params.split_at(params.len() - 1);
        let x = tape.constant(batch.features().clone());
        let (z, logdet) = self.flow.inverse_on_tape(x, flow_params)?;

        let (d, p) = (self.dim(), self.class_dim());
        let mut quad = if p > 0 {
            let mu = means[0].gather_rows(batch.labels())?;
            Some(z.columns(0..p)?.sub(mu)?.square().sum_cols())
        } else {
            None
        };
        if p < d {
            let tail = z.columns(p..d)?.square().sum_cols();
            quad = Some(match quad {
                Some(q) => q.add(tail)?,
                None => tail,
            });
        }
        let quad = quad.ok_or_else(|| Error::contract("zero-dimensional model"))?;
        let log_probs = quad.scale(-0.5).add_scalar(-gaussian_log_norm(d)).add(logdet)?;
        let loss = log_probs.mean().neg();
        Ok(Objective {
            loss,
            log_probs,
            params,
        })
    }

    /// Mean negative log-likelihood of `batch` as a differentiable node.
    pub fn nll_loss<'t>(&self, tape: &'t Tape, batch: &LabeledDataset) -> Result<Var<'t>> {
        Ok(self.objective(tape, batch)?.loss)
    }

    /// `log p(x | y)`.
    pub fn log_prob(&self, x: &[f64], y: usize) -> Result<f64> {
        self.prior.check_class(y)?;
        let (z, logdet) = self.flow.inverse_point(x)?;
        Ok(self.prior.log_density(&z, y)? + logdet)
    }

    /// Per-point `log p(x_i | y_i)` over a dataset.
    pub fn log_probs(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let obj = self.objective(&tape, data)?;
        let lp = obj.log_probs.value().data().to_vec();
        Ok(lp)
    }

    /// `z = f^{-1}(x)`; needs no label.
    pub fn normalize(&self, x: &Matrix) -> Result<Matrix> {
        self.flow.inverse(x)
    }

    pub fn normalize_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flow.inverse_point(x)?.0)
    }

    fn require_subspace(&self) -> Result<()> {
        if self.class_dim() >= self.dim() {
            return Err(Error::contract(format!(
                "reduce needs class dim < latent dim, have {} >= {}",
                self.class_dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// First `p` latent coordinates: the class space.
    pub fn reduce(&self, x: &Matrix) -> Result<Matrix> {
        self.require_subspace()?;
        self.normalize(x)?.columns(0..self.class_dim())
    }

    pub fn reduce_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.reduce(&Matrix::row_vector(x))?.into_vec())
    }

    /// Remaining `d - p` latent coordinates: the residual space.
    pub fn residual(&self, x: &Matrix) -> Result<Matrix> {
        self.require_subspace()?;
        self.normalize(x)?.columns(self.class_dim()..self.dim())
    }

    /// `n` samples of class `y`: `z ~ N(mu_y, I)` pushed through the flow.
    pub fn generate(&self, y: usize, n: usize, seed: u64) -> Result<Matrix> {
        let mu = self.prior.full_mean(y)?;
        let mut r = rng::stream(seed, streams::SAMPLE);
        let z = Matrix::from_fn(n, self.dim(), |_, j| mu[j] + rng::normal(&mut r));
        self.flow.forward(&z)
    }
}
