use crate::dataset::LabeledDataset;
use crate::diffcore::{eig_symmetric, inverse_spd, logdet_spd, Matrix};
use crate::error::{Error, Result};
use crate::lda::SCATTER_REGULARIZATION;

use super::eer::TrialScoreSet;

/// Two-covariance model: class mean `y ~ N(m, B)`, observation
/// `x ~ N(y, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    mean: Vec<f64>,
    between: Matrix,
    within: Matrix,
    // scoring constants
    diag: Matrix,
    cross: Matrix,
    constant: f64,
}

impl PldaModel {
    /// `between` must be PSD and `within` PD.
    pub fn new(mean: Vec<f64>, between: Matrix, within: Matrix) -> Result<Self> {
        let d = mean.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::dim("PldaModel::new", format!("{d}x{d}"), format!("{:?} / {:?}", between.shape(), within.shape())));
        }
        let total = between.add(&within)?.symmetrize();
        // joint covariance of a same-class pair
        let top = Matrix::hcat(&[&total, &between])?;
        let bottom = Matrix::hcat(&[&between, &total])?;
        let joint = Matrix::vcat(&[&top, &bottom])?;
        let p = inverse_spd(&joint).map_err(|e| Error::Decomposition(format!("PLDA pair covariance: {e}")))?;
        let t_inv = inverse_spd(&total)?;
        let p11 = p.columns(0..d)?.select_rows(&(0..d).collect::<Vec<_>>())?;
        let p22 = p.columns(d..2 * d)?.select_rows(&(d..2 * d).collect::<Vec<_>>())?;
        let p12 = p.columns(d..2 * d)?.select_rows(&(0..d).collect::<Vec<_>>())?;
        let q = p11.add(&p22)?.scale(0.5);
        let diag = t_inv.sub(&q)?.symmetrize();
        let cross = p12.symmetrize();
        let constant = -0.5 * logdet_spd(&joint)? + logdet_spd(&total)?;
        Ok(PldaModel {
            mean,
            between,
            within,
            diag,
            cross,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn between(&self) -> &Matrix {
        &self.between
    }

    pub fn within(&self) -> &Matrix {
        &self.within
    }

    /// Same-class vs different-class log-likelihood ratio.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let d = self.dim();
        if a.len() != d || b.len() != d {
            return Err(Error::dim("score_plda", d, format!("{} / {}", a.len(), b.len())));
        }
        let a: Vec<f64> = a.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let b: Vec<f64> = b.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let quad = |u: &[f64], m: &Matrix, v: &[f64]| -> f64 {
            (0..d).map(|i| u[i] * (0..d).map(|j| m[(i, j)] * v[j]).sum::<f64>()).sum()
        };
        let self_terms = 0.5 * quad(&a, &self.diag, &a) + 0.5 * quad(&b, &self.diag, &b);
        let cross = 0.5 * (quad(&a, &self.cross, &b) + quad(&b, &self.cross, &a));
        Ok(self_terms - cross + self.constant)
    }
}

fn ridge(s: &Matrix) -> Matrix {
    let d = s.rows();
    let eps = (SCATTER_REGULARIZATION * s.trace().abs() / d as f64).max(1e-12);
    s.add(&Matrix::identity(d).scale(eps)).expect("square")
}

/// Moment estimates: `W` is the pooled within-class covariance and `B`
/// the covariance of the class means (denominator `C - 1`) minus the
/// expected contribution of `W` to it, clipped to PSD. Both get a small
/// ridge.
pub fn fit_plda(data: &LabeledDataset) -> Result<PldaModel> {
    let counts = data.class_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&y| counts[y] > 0).collect();
    if present.len() < 2 {
        return Err(Error::contract("PLDA needs at least 2 classes"));
    }
    if let Some(&y) = present.iter().find(|&&y| counts[y] < 2) {
        return Err(Error::contract(format!("class {y} has a single sample")));
    }
    let d = data.dim();
    let c = present.len() as f64;
    let means = data.class_means();
    let mut within = Matrix::zeros(d, d);
    for (i, &y) in data.labels().iter().enumerate() {
        let r: Vec<f64> = data.point(i).iter().zip(means.row(y)).map(|(a, b)| a - b).collect();
        outer_add(&mut within, &r, 1.0);
    }
    let within = within.scale(1.0 / (data.len() as f64 - c)).symmetrize();

    let mut grand = vec![0.0; d];
    for &y in &present {
        for (g, m) in grand.iter_mut().zip(means.row(y)) {
            *g += m / c;
        }
    }
    let mut between = Matrix::zeros(d, d);
    for &y in &present {
        let r: Vec<f64> = means.row(y).iter().zip(&grand).map(|(a, b)| a - b).collect();
        outer_add(&mut between, &r, 1.0 / (c - 1.0));
    }
    let inv_n = present.iter().map(|&y| 1.0 / counts[y] as f64).sum::<f64>() / c;
    let between = clip_psd(&between.sub(&within.scale(inv_n))?.symmetrize())?;
    PldaModel::new(grand, ridge(&between), ridge(&within))
}

fn outer_add(acc: &mut Matrix, r: &[f64], w: f64) {
    for (i, ri) in r.iter().enumerate() {
        for (j, rj) in r.iter().enumerate() {
            acc[(i, j)] += w * ri * rj;
        }
    }
}

fn clip_psd(s: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = eig_symmetric(s)?;
    let d = s.rows();
    Ok(Matrix::from_fn(d, d, |i, j| (0..d).map(|k| vecs[(i, k)] * vals[k].max(0.0) * vecs[(j, k)]).sum()).symmetrize())
}

/// Scores every `(a, b, genuine)` pair of rows of `codes`.
pub fn score_trials(model: &PldaModel, codes: &Matrix, pairs: &[(usize, usize, bool)]) -> Result<TrialScoreSet> {
    let mut set = TrialScoreSet::default();
    for &(a, b, genuine) in pairs {
        set.push(model.score(codes.row(a), codes.row(b))?, genuine);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::cholesky;
    use crate::eval::{auc, eer};
    use crate::rng;
    use rand::Rng;

    fn normal_pdf(x: f64, var: f64) -> f64 {
        (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn zero_between_gives_zero_scores() {
        let m = PldaModel::new(vec![0.0; 2], Matrix::zeros(2, 2), Matrix::identity(2)).unwrap();
        assert!(m.score(&[1.0, 2.0], &[-3.0, 0.5]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn score_is_symmetric() {
        let mut r = rng::stream(3, 0);
        let g = rng::normal_matrix(&mut r, 4, 4, 1.0);
        let b = g.matmul_t(&g).unwrap();
        let w = Matrix::identity(4).add(&Matrix::diag(&[0.5, 1.0, 2.0, 0.1])).unwrap();
        let m = PldaModel::new(vec![0.1, 0.2, 0.3, 0.4], b, w).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
            assert!((m.score(&a, &c).unwrap() - m.score(&c, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_llr_matches_quadrature() {
        let m = PldaModel::new(vec![0.0], Matrix::scalar(1.0), Matrix::scalar(1.0)).unwrap();
        let (a, b) = (1.0, 1.0);
        let (lo, hi, n) = (-20.0, 20.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut same = 0.0;
        let mut pa = 0.0;
        let mut pb = 0.0;
        for k in 0..=n {
            let y = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 * h } else { h };
            let prior = normal_pdf(y, 1.0);
            same += w * normal_pdf(a - y, 1.0) * normal_pdf(b - y, 1.0) * prior;
            pa += w * normal_pdf(a - y, 1.0) * prior;
            pb += w * normal_pdf(b - y, 1.0) * prior;
        }
        let oracle = same.ln() - pa.ln() - pb.ln();
        assert!((m.score(&[a], &[b]).unwrap() - oracle).abs() < 1e-6);
    }

    fn lda_data(d: usize, classes: usize, per_class: usize, between: f64, seed: u64) -> (LabeledDataset, Matrix) {
        let mut r = rng::stream(seed, 0);
        let a = rng::normal_matrix(&mut r, d, d, 0.4).add(&Matrix::identity(d)).unwrap();
        let sigma = a.matmul_t(&a).unwrap();
        let l = cholesky(&sigma).unwrap();
        let mut x = Matrix::zeros(classes * per_class, d);
        let mut labels = Vec::new();
        for y in 0..classes {
            let mu: Vec<f64> = (0..d).map(|_| between * rng::normal(&mut r)).collect();
            for i in 0..per_class {
                let e: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
                let v = l.matvec(&e).unwrap();
                for k in 0..d {
                    x[(y * per_class + i, k)] = mu[k] + v[k];
                }
                labels.push(y);
            }
        }
        (LabeledDataset::new(x, labels).unwrap(), sigma)
    }

    fn spectral_norm(m: &Matrix) -> f64 {
        let (vals, _) = eig_symmetric(&m.symmetrize()).unwrap();
        vals.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn within_covariance_is_recovered() {
        let (data, sigma) = lda_data(4, 100, 200, 2.0, 4);
        let model = fit_plda(&data).unwrap();
        let err = spectral_norm(&model.within().sub(&sigma).unwrap());
        assert!(err < 0.1 * spectral_norm(&sigma), "{err}");
    }

    #[test]
    fn rank_deficient_between_is_regularized() {
        // class means differ only along the first axis
        let mut r = rng::stream(5, 0);
        let mut x = Matrix::zeros(60, 3);
        let labels: Vec<usize> = (0..60).map(|i| i / 20).collect();
        for i in 0..60 {
            x[(i, 0)] = 3.0 * labels[i] as f64 + rng::normal(&mut r);
            x[(i, 1)] = rng::normal(&mut r);
            x[(i, 2)] = rng::normal(&mut r);
        }
        let model = fit_plda(&LabeledDataset::new(x, labels).unwrap()).unwrap();
        assert!(model.score(&[0.0; 3], &[3.0, 0.0, 0.0]).unwrap().is_finite());
        assert!(fit_plda(&LabeledDataset::new(Matrix::zeros(3, 2), vec![0, 0, 0]).unwrap()).is_err());
    }

    fn pairs(data: &LabeledDataset, n: usize, seed: u64) -> Vec<(usize, usize, bool)> {
        let mut r = rng::stream(seed, 7);
        (0..n)
            .map(|_| {
                let a = r.random_range(0..data.len());
                let b = loop {
                    let b = r.random_range(0..data.len());
                    if b != a {
                        break b;
                    }
                };
                (a, b, data.labels()[a] == data.labels()[b])
            })
            .collect()
    }

    #[test]
    fn random_partition_scores_at_chance() {
        let mut r = rng::stream(6, 0);
        let x = rng::normal_matrix(&mut r, 2000, 5, 1.0);
        let labels = (0..2000).map(|_| r.random_range(0..40)).collect();
        let data = LabeledDataset::new(x, labels).unwrap();
        let model = fit_plda(&data).unwrap();
        // half genuine, half impostor
        let groups = data.class_indices();
        let mut trials = Vec::new();
        for (y, g) in groups.iter().enumerate() {
            for k in 0..20 {
                trials.push((g[k], g[k + 1], true));
                let other = &groups[(y + 1 + k) % groups.len()];
                if other[0] != g[k] {
                    trials.push((g[k], other[k], false));
                }
            }
        }
        let e = eer(&score_trials(&model, data.features(), &trials).unwrap()).unwrap();
        assert!((e - 0.5).abs() < 0.05, "{e}");
    }

    #[test]
    fn separable_classes_rank_well() {
        let (data, _) = lda_data(3, 60, 30, 3.0, 7);
        let model = fit_plda(&data).unwrap();
        let mut trials = pairs(&data, 4000, 8);
        // enrich genuine pairs
        for g in data.class_indices() {
            for k in 0..10 {
                trials.push((g[k], g[k + 10], true));
            }
        }
        let set = score_trials(&model, data.features(), &trials).unwrap();
        assert!(auc(&set).unwrap() >= 0.9);
    }
}
