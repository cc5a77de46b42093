//! Linear discriminant analysis: Fisher closed form and the linear-Gaussian
//! maximum-likelihood fit.
//!
//! Both fits produce the same kind of model: an invertible `M` and offset
//! `b` with `z = M x + b ~ N([mu_y^c ; 0], I)`.

use crate::dataset::LabeledDataset;
use crate::diffcore::{cholesky, eig_symmetric, inverse_sqrt_spd, solve_lower, solve_lower_transpose, Lu, Matrix};
use crate::dnf::{gaussian_log_norm, ClassPrior, DnfModel};
use crate::error::{Error, Result};
use crate::flows::{Block, FlowStack, LinearBlock};
use crate::trainer::Adam;

/// Relative ridge added to scatter matrices: `eps = REG * tr(S) / d`.
pub const SCATTER_REGULARIZATION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPair {
    pub within: Matrix,
    pub between: Matrix,
    pub counts: Vec<usize>,
    pub mean: Vec<f64>,
}

impl ScatterPair {
    /// Unnormalized within- and count-weighted between-class scatter.
    pub fn compute(data: &LabeledDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::contract("scatter of an empty dataset"));
        }
        let d = data.dim();
        let means = data.class_means();
        let counts = data.class_counts();
        let mean = data.features().column_means();
        let mut within = Matrix::zeros(d, d);
        for (i, &y) in data.labels().iter().enumerate() {
            let r: Vec<f64> = data.point(i).iter().zip(means.row(y)).map(|(a, b)| a - b).collect();
            add_outer(&mut within, &r, &r, 1.0);
        }
        let mut between = Matrix::zeros(d, d);
        for (y, &n) in counts.iter().enumerate() {
            let r: Vec<f64> = means.row(y).iter().zip(&mean).map(|(a, b)| a - b).collect();
            add_outer(&mut between, &r, &r, n as f64);
        }
        Ok(ScatterPair {
            within: within.symmetrize(),
            between: between.symmetrize(),
            counts,
            mean,
        })
    }

    pub fn total(&self) -> Matrix {
        self.within.add(&self.between).expect("scatter shapes agree")
    }

    pub fn regularized_within(&self) -> Matrix {
        regularize(&self.within)
    }
}

fn add_outer(acc: &mut Matrix, a: &[f64], b: &[f64], w: f64) {
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            acc[(i, j)] += w * ai * bj;
        }
    }
}

fn regularize(s: &Matrix) -> Matrix {
    let d = s.rows();
    let eps = SCATTER_REGULARIZATION * s.trace() / d as f64;
    let eps = if eps > 0.0 { eps } else { SCATTER_REGULARIZATION };
    s.add(&Matrix::identity(d).scale(eps)).expect("square")
}

/// Generalized eigenpairs of `Sb v = lambda Sw v`, eigenvalues descending,
/// directions as columns normalized to `v' Sw v = 1` (with `Sw` the
/// regularized within-class scatter).
pub fn fisher_directions(scatter: &ScatterPair) -> Result<(Vec<f64>, Matrix)> {
    let sw = scatter.regularized_within();
    let l = cholesky(&sw).map_err(|e| Error::Decomposition(format!("within-class scatter: {e}")))?;
    // L^{-1} Sb L^{-T}
    let a = solve_lower(&l, &scatter.between)?;
    let a = solve_lower(&l, &a.transpose())?.symmetrize();
    let (vals, u) = eig_symmetric(&a)?;
    let mut v = solve_lower_transpose(&l, &u)?;
    for j in 0..v.cols() {
        let col = v.column(j);
        let pivot = col.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    Ok((vals, v))
}

/// `z = M x + b` with class means `[mu_y^c ; 0]` and identity covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    projection: Matrix,
    offset: Vec<f64>,
    latent_means: Matrix,
    class_means: Matrix,
    covariance: Matrix,
}

impl LdaModel {
    /// `latent_means` is `C x p`.
    pub fn new(projection: Matrix, offset: Vec<f64>, latent_means: Matrix) -> Result<Self> {
        let d = projection.rows();
        if !projection.is_square() {
            return Err(Error::dim("LdaModel::new", format!("{d}x{d}"), format!("{:?}", projection.shape())));
        }
        if offset.len() != d {
            return Err(Error::dim("LdaModel::new offset", d, offset.len()));
        }
        if latent_means.cols() > d {
            return Err(Error::contract(format!("reduced dim {} exceeds {d}", latent_means.cols())));
        }
        let lu = Lu::new(&projection).map_err(|e| Error::Singular(format!("LDA projection: {e}")))?;
        let minv = lu.inverse()?;
        let covariance = minv.matmul_t(&minv)?.symmetrize();
        let mut class_means = Matrix::zeros(latent_means.rows(), d);
        for y in 0..latent_means.rows() {
            let mut mu = vec![0.0; d];
            mu[..latent_means.cols()].copy_from_slice(latent_means.row(y));
            let shifted: Vec<f64> = mu.iter().zip(&offset).map(|(m, b)| m - b).collect();
            class_means.row_mut(y).copy_from_slice(&minv.matvec(&shifted)?);
        }
        Ok(LdaModel {
            projection,
            offset,
            latent_means,
            class_means,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.latent_means.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.latent_means.rows()
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// `C x p` latent class means.
    pub fn latent_means(&self) -> &Matrix {
        &self.latent_means
    }

    /// Data-space class means `M^{-1}(mu_y - b)`, `C x d`.
    pub fn class_means(&self) -> &Matrix {
        &self.class_means
    }

    /// Shared data-space covariance `M^{-1} M^{-T}`.
    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// First `p` coordinates of `M x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.projection.matvec(x)?;
        Ok(z[..self.reduced_dim()].to_vec())
    }

    /// Row-wise [`project`](Self::project) of an `n x d` matrix.
    pub fn project_all(&self, x: &Matrix) -> Result<Matrix> {
        let m = self.projection.columns(0..self.dim())?;
        let head = m.transpose().columns(0..self.reduced_dim())?;
        x.matmul(&head)
    }

    /// `M x + b` row-wise.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul_t(&self.projection)?.add_row_broadcast(&Matrix::row_vector(&self.offset))
    }

    /// `log N(M x + b; mu_y, I) + log|det M|`.
    pub fn log_prob(&self, x: &[f64], y: usize) -> Result<f64> {
        self.to_dnf()?.log_prob(x, y)
    }

    /// `log N(x; nu_y, M^{-1} M^{-T})` evaluated directly in data space.
    pub fn data_space_log_prob(&self, x: &[f64], y: usize) -> Result<f64> {
        if y >= self.num_classes() {
            return Err(Error::InvalidClass {
                class: y,
                num_classes: self.num_classes(),
            });
        }
        let l = cholesky(&self.covariance)?;
        let r: Vec<f64> = x.iter().zip(self.class_means.row(y)).map(|(a, b)| a - b).collect();
        let w = solve_lower(&l, &Matrix::column_vector(&r))?;
        let quad: f64 = w.data().iter().map(|v| v * v).sum();
        let logdet: f64 = (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(-gaussian_log_norm(self.dim()) - 0.5 * logdet - 0.5 * quad)
    }

    /// Mean per-point log-likelihood of `data`.
    pub fn mean_log_likelihood(&self, data: &LabeledDataset) -> Result<f64> {
        let lp = self.to_dnf()?.log_probs(data)?;
        Ok(lp.iter().sum::<f64>() / lp.len().max(1) as f64)
    }

    /// A [`DnfModel`] whose flow is the single linear block `(M, b)`.
    pub fn to_dnf(&self) -> Result<DnfModel> {
        let block = LinearBlock::new(self.projection.clone(), &self.offset)?;
        let flow = FlowStack::from_blocks(self.dim(), vec![Block::Linear(block)])?;
        DnfModel::new(flow, ClassPrior::new(self.dim(), self.latent_means.clone())?)
    }

    /// Inverse of [`to_dnf`](Self::to_dnf); the flow must be exactly one
    /// linear block.
    pub fn from_dnf(model: &DnfModel) -> Result<Self> {
        match model.flow().blocks() {
            [Block::Linear(b)] => LdaModel::new(b.projection().clone(), b.offset().to_vec(), model.prior().means().clone()),
            _ => Err(Error::contract("flow is not a single linear block")),
        }
    }

    /// Data-space directions whose projections carry the between-class
    /// spread: `M' U`, with `U` the top-`k` principal axes of the
    /// centered latent class means. `d x k`.
    pub fn discriminant_subspace(&self, k: usize) -> Result<Matrix> {
        let (c, p) = self.latent_means.shape();
        if k == 0 || k > p || k >= c.max(1) {
            return Err(Error::contract(format!("subspace rank {k} must be in 1..=min(p, C-1)")));
        }
        let centre = self.latent_means.column_means();
        let mut s = Matrix::zeros(p, p);
        for y in 0..c {
            let r: Vec<f64> = self.latent_means.row(y).iter().zip(&centre).map(|(a, b)| a - b).collect();
            add_outer(&mut s, &r, &r, 1.0);
        }
        let (_, vecs) = eig_symmetric(&s)?;
        let mut u = Matrix::zeros(self.dim(), k);
        for i in 0..p {
            for j in 0..k {
                u[(i, j)] = vecs[(i, j)];
            }
        }
        self.projection.t_matmul(&u)
    }
}

fn check_classes(data: &LabeledDataset, min_classes: usize) -> Result<()> {
    let counts = data.class_counts();
    if counts.len() < min_classes {
        return Err(Error::contract(format!("need at least {min_classes} classes, found {}", counts.len())));
    }
    if let Some((y, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(Error::contract(format!("class {y} has {n} samples, need at least 2")));
    }
    Ok(())
}

/// Fisher LDA with `p <= min(d, C - 1)` retained directions.
///
/// All `d` generalized eigenvectors form `M`, scaled so that it whitens
/// the pooled within-class covariance; the offset centres the data.
pub fn fit_fisher(data: &LabeledDataset, p: usize) -> Result<LdaModel> {
    check_classes(data, 2)?;
    let d = data.dim();
    let c = data.num_classes();
    if p > d.min(c - 1) {
        return Err(Error::contract(format!("p = {p} exceeds min(d, C-1) = {}", d.min(c - 1))));
    }
    let scatter = ScatterPair::compute(data)?;
    let (_, v) = fisher_directions(&scatter)?;
    let dof = (data.len() - c).max(1) as f64;
    let m = v.transpose().scale(dof.sqrt());
    let offset: Vec<f64> = m.matvec(&scatter.mean)?.iter().map(|v| -v).collect();
    let latent = latent_class_means(data, &m, &offset, p)?;
    LdaModel::new(m, offset, latent)
}

fn latent_class_means(data: &LabeledDataset, m: &Matrix, offset: &[f64], p: usize) -> Result<Matrix> {
    let means = data.class_means();
    let mut out = Matrix::zeros(means.rows(), p);
    for y in 0..means.rows() {
        let z = m.matvec(means.row(y))?;
        for k in 0..p {
            out[(y, k)] = z[k] + offset[k];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient infinity norm falls below this.
    pub tolerance: f64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            learning_rate: 1e-2,
            max_iterations: 2000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlFit {
    pub model: LdaModel,
    /// Mean log-likelihood after initialization and after each accepted step.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Objective state for a given `M`: centred data, offset, class means,
/// mean log-likelihood and its gradient in `M`.
struct MlState {
    offset: Vec<f64>,
    means: Matrix,
    objective: f64,
    gradient: Matrix,
}

fn ml_state(data: &LabeledDataset, centred: &Matrix, mean: &[f64], m: &Matrix, p: usize) -> Result<Option<MlState>> {
    let n = data.len() as f64;
    let d = m.rows();
    let lu = match Lu::new(m) {
        Ok(lu) => lu,
        Err(_) => return Ok(None),
    };
    let z = centred.matmul_t(m)?;
    let latents = data.with_features(z.clone())?;
    let means = latents.class_means().columns(0..p)?;
    let mut resid = z;
    for (i, &y) in data.labels().iter().enumerate() {
        for k in 0..p {
            resid[(i, k)] -= means[(y, k)];
        }
    }
    let quad: f64 = resid.data().iter().map(|v| v * v).sum();
    let objective = -gaussian_log_norm(d) - 0.5 * quad / n + lu.log_abs_det();
    let minv_t = lu.inverse()?.transpose();
    let gradient = minv_t.sub(&resid.t_matmul(centred)?.scale(1.0 / n))?;
    let offset: Vec<f64> = m.matvec(mean)?.iter().map(|v| -v).collect();
    Ok(Some(MlState {
        offset,
        means,
        objective,
        gradient,
    }))
}

/// Maximum-likelihood LDA with class means restricted to the first `p`
/// latent coordinates.
///
/// `M` follows adaptive-moment ascent; the offset (`-M xbar`) and class
/// means are set in closed form after every step. A step that lowers the
/// objective is undone and the rate halved, so the trace never decreases.
pub fn fit_ml(data: &LabeledDataset, p: usize, cfg: &MlConfig) -> Result<MlFit> {
    check_classes(data, 1)?;
    let d = data.dim();
    if p > d {
        return Err(Error::contract(format!("p = {p} exceeds d = {d}")));
    }
    if p > 0 && data.num_classes() < 2 {
        return Err(Error::contract("class-dependent coordinates need at least 2 classes"));
    }
    let scatter = ScatterPair::compute(data)?;
    let n = data.len() as f64;
    let centred = data.features().add_row_broadcast(&Matrix::row_vector(&scatter.mean).scale(-1.0))?;
    let total_cov = regularize(&scatter.total().scale(1.0 / n));
    let mut m = inverse_sqrt_spd(&total_cov)?;
    let mut state =
        ml_state(data, &centred, &scatter.mean, &m, p)?.ok_or_else(|| Error::Singular("initial whitening".into()))?;

    let mut adam = Adam::new(&[(d, d)], cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut trace = vec![state.objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if state.gradient.max_abs() < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let saved = (m.clone(), adam.clone());
        // ascent, so descend on the negated gradient
        adam.apply(vec![&mut m], &[state.gradient.scale(-1.0)]);
        match ml_state(data, &centred, &scatter.mean, &m, p)? {
            Some(next) if next.objective.is_finite() && next.objective >= state.objective => {
                state = next;
                trace.push(state.objective);
            }
            _ => {
                let lr = saved.1.learning_rate() * 0.5;
                m = saved.0;
                adam = saved.1;
                adam.set_learning_rate(lr);
                if lr < 1e-14 {
                    break;
                }
            }
        }
    }
    if !converged && state.gradient.max_abs() < cfg.tolerance {
        converged = true;
    }
    let gradient_norm = state.gradient.max_abs();
    if !converged {
        log::warn!("fit_ml stopped after {iterations} iterations with gradient norm {gradient_norm:.3e}");
    }
    let model = LdaModel::new(m, state.offset, state.means)?;
    Ok(MlFit {
        model,
        trace,
        converged,
        gradient_norm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::principal_angles;
    use crate::rng;

    fn gaussian_classes(means: &[&[f64]], per_class: usize, seed: u64) -> LabeledDataset {
        let d = means[0].len();
        let mut r = rng::stream(seed, 0);
        let mut x = Matrix::zeros(per_class * means.len(), d);
        let mut labels = Vec::new();
        for (y, mu) in means.iter().enumerate() {
            for i in 0..per_class {
                let row = x.row_mut(y * per_class + i);
                for (v, m) in row.iter_mut().zip(mu.iter()) {
                    *v = m + rng::normal(&mut r);
                }
                labels.push(y);
            }
        }
        LabeledDataset::new(x, labels).unwrap()
    }

    fn hand_dataset() -> LabeledDataset {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]]).unwrap();
        LabeledDataset::new(x, vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn hand_scatter_matrices() {
        let s = ScatterPair::compute(&hand_dataset()).unwrap();
        assert_eq!(s.within, Matrix::from_rows(&[[4.0, 0.0], [0.0, 0.0]]).unwrap());
        assert_eq!(s.between, Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0]]).unwrap());
        let model = fit_fisher(&hand_dataset(), 1).unwrap();
        let dir = model.projection().row(0);
        assert!(dir[0].abs() < 1e-9 * dir[1].abs());
    }

    #[test]
    fn scatter_sums_to_total() {
        let data = gaussian_classes(&[&[0.0, 1.0, 2.0], &[3.0, -1.0, 0.0], &[1.0, 1.0, 1.0]], 40, 1);
        let s = ScatterPair::compute(&data).unwrap();
        let x = data.features();
        let mean = x.column_means();
        let mut total = Matrix::zeros(3, 3);
        for row in x.row_iter() {
            let r: Vec<f64> = row.iter().zip(&mean).map(|(a, b)| a - b).collect();
            add_outer(&mut total, &r, &r, 1.0);
        }
        assert!(s.total().sub(&total).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn symmetric_two_class_direction_is_axis() {
        let data = gaussian_classes(&[&[0.0, 0.0], &[1.0, 0.0]], 20000, 2);
        let model = fit_fisher(&data, 1).unwrap();
        let dir = model.projection().row(0);
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        assert!((dir[0].abs() / norm - 1.0).abs() < 1e-3, "{dir:?}");
    }

    #[test]
    fn identity_covariance_data_gives_orthonormal_projection() {
        let data = gaussian_classes(&[&[0.0, 0.0], &[4.0, 0.0], &[0.0, 4.0]], 10_000, 3);
        let m = fit_fisher(&data, 2).unwrap().projection().clone();
        // directions are defined up to scale
        let unit = Matrix::from_fn(2, 2, |i, j| m[(i, j)] / m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt());
        let gram = unit.matmul_t(&unit).unwrap();
        assert!(gram.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-2, "{gram:?}");
    }

    #[test]
    fn fisher_rejects_bad_reduced_dim() {
        let data = gaussian_classes(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]], 10, 4);
        assert!(fit_fisher(&data, 2).is_err());
        let one_sample = LabeledDataset::new(Matrix::zeros(3, 2), vec![0, 0, 1]).unwrap();
        assert!(fit_fisher(&one_sample, 1).is_err());
    }

    #[test]
    fn fisher_ratios_match_generalized_eigenvalues() {
        let mut r = rng::stream(5, 1);
        let data = gaussian_classes(&[&[0.0, 1.0, 0.0, 2.0], &[2.0, 0.0, 1.0, 0.0], &[1.0, 3.0, 0.0, 1.0]], 50, 5);
        // consistent affine reparameterization
        let a = rng::normal_matrix(&mut r, 4, 4, 1.0).add(&Matrix::identity(4).scale(2.0)).unwrap();
        let warped = data.with_features(data.features().matmul_t(&a).unwrap().add_row_broadcast(&Matrix::row_vector(&[1.0, -2.0, 0.5, 3.0])).unwrap()).unwrap();
        for set in [&data, &warped] {
            let s = ScatterPair::compute(set).unwrap();
            let (vals, v) = fisher_directions(&s).unwrap();
            let sw = s.regularized_within();
            for k in 0..2 {
                let col = Matrix::column_vector(&v.column(k));
                let num = col.t_matmul(&s.between.matmul(&col).unwrap()).unwrap()[(0, 0)];
                let den = col.t_matmul(&sw.matmul(&col).unwrap()).unwrap()[(0, 0)];
                assert!((num / den - vals[k]).abs() < 1e-8 * vals[k].max(1.0));
            }
        }
        let r0 = fisher_directions(&ScatterPair::compute(&data).unwrap()).unwrap().0;
        let r1 = fisher_directions(&ScatterPair::compute(&warped).unwrap()).unwrap().0;
        for k in 0..2 {
            assert!((r0[k] - r1[k]).abs() < 1e-4 * r0[k]);
        }
    }

    #[test]
    fn project_truncates_mx() {
        let id = LdaModel::new(Matrix::identity(3), vec![0.0; 3], Matrix::zeros(2, 3)).unwrap();
        assert_eq!(id.project(&[3.0, 4.0, 5.0]).unwrap(), vec![3.0, 4.0, 5.0]);
        let one = LdaModel::new(Matrix::identity(3), vec![0.0; 3], Matrix::zeros(2, 1)).unwrap();
        assert_eq!(one.project(&[3.0, 4.0, 5.0]).unwrap(), vec![3.0]);
        assert!(one.project(&[1.0]).is_err());

        let mut r = rng::stream(6, 0);
        let m = rng::normal_matrix(&mut r, 4, 4, 1.0);
        let model = LdaModel::new(m.clone(), vec![1.0; 4], Matrix::zeros(3, 2)).unwrap();
        let x = rng::normal_matrix(&mut r, 10, 4, 1.0);
        let batch = model.project_all(&x).unwrap();
        for i in 0..10 {
            let full: Vec<f64> = (0..4).map(|a| (0..4).map(|b| m[(a, b)] * x[(i, b)]).sum()).collect();
            assert_eq!(model.project(x.row(i)).unwrap(), full[..2].to_vec());
            for k in 0..2 {
                assert!((batch[(i, k)] - full[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ml_trace_is_monotone_and_recovers_generating_likelihood() {
        let means: [&[f64]; 3] = [&[3.0, 0.0, 0.0], &[-1.5, 2.6, 0.0], &[-1.5, -2.6, 0.0]];
        let data = gaussian_classes(&means, 3000, 7);
        let fit = fit_ml(&data, 2, &MlConfig::default()).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));

        let truth_means = Matrix::from_rows(&[[3.0, 0.0], [-1.5, 2.6], [-1.5, -2.6]]).unwrap();
        let truth = LdaModel::new(Matrix::identity(3), vec![0.0; 3], truth_means).unwrap();
        let generating = truth.mean_log_likelihood(&data).unwrap();
        let achieved = fit.model.mean_log_likelihood(&data).unwrap();
        assert!((achieved - generating).abs() < 0.01 * generating.abs(), "{achieved} vs {generating}");
        assert!(achieved >= generating - 1e-6);
    }

    #[test]
    fn full_rank_ml_spans_fisher_subspace() {
        let data = gaussian_classes(&[&[0.0, 0.0, 0.0], &[3.0, 1.0, 0.0], &[0.0, 3.0, 1.0]], 3334, 8);
        let ml = fit_ml(&data, 3, &MlConfig::default()).unwrap().model;
        let fisher = fit_fisher(&data, 2).unwrap();
        let a = ml.discriminant_subspace(2).unwrap();
        let b = fisher.discriminant_subspace(2).unwrap();
        let angles = principal_angles(&a, &b).unwrap();
        assert!(angles.iter().all(|t| t.to_degrees() < 5.0), "{angles:?}");
    }

    #[test]
    fn single_class_ml_whitens() {
        let mut r = rng::stream(9, 0);
        let a = Matrix::from_rows(&[[2.0, 0.0, 0.0], [1.0, 0.5, 0.0], [-1.0, 0.3, 1.5]]).unwrap();
        let x = rng::normal_matrix(&mut r, 10_000, 3, 1.0).matmul_t(&a).unwrap();
        let data = LabeledDataset::unlabeled(x).unwrap();
        let fit = fit_ml(&data, 0, &MlConfig::default()).unwrap();
        let z = fit.model.transform(data.features()).unwrap();
        let cov = z.t_matmul(&z).unwrap().scale(1.0 / 10_000.0);
        assert!(cov.sub(&Matrix::identity(3)).unwrap().max_abs() < 5e-2);
    }

    #[test]
    fn latent_and_data_space_densities_agree() {
        let data = gaussian_classes(&[&[0.0, 0.0, 1.0], &[2.0, -1.0, 0.0], &[1.0, 2.0, -1.0]], 200, 10);
        for model in [fit_fisher(&data, 2).unwrap(), fit_ml(&data, 2, &MlConfig::default()).unwrap().model] {
            for i in (0..data.len()).step_by(37) {
                let (x, y) = (data.point(i), data.labels()[i]);
                let a = model.log_prob(x, y).unwrap();
                let b = model.data_space_log_prob(x, y).unwrap();
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dnf_conversion_round_trips() {
        let data = gaussian_classes(&[&[0.0, 0.0], &[2.0, 1.0]], 50, 11);
        let model = fit_fisher(&data, 1).unwrap();
        let dnf = model.to_dnf().unwrap();
        assert_eq!(LdaModel::from_dnf(&dnf).unwrap(), model);
        let z = dnf.reduce(data.features()).unwrap();
        let p = model.project_all(data.features()).unwrap();
        for i in 0..data.len() {
            assert!((z[(i, 0)] - p[(i, 0)] - model.offset()[0]).abs() < 1e-12);
        }
    }
}
