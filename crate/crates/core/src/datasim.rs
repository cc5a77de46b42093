//! Synthetic data: latent class Gaussians pushed through random flows.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::diffcore::{cholesky, Matrix};
use crate::dnf::{ClassPrior, DnfModel};
use crate::error::{Error, Result};
use crate::flows::{BlockKind, FlowConfig, FlowStack, FlowTransform, Init};
use crate::rng::{self, streams};

/// Class Gaussians on a circle in the first two latent coordinates,
/// warped by a randomly initialized flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub dim: usize,
    pub num_classes: usize,
    pub class_dim: usize,
    pub mean_radius: f64,
    pub samples_per_class: usize,
    pub generator: FlowConfig,
    /// Standard deviation of every generator parameter.
    pub generator_sigma: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            dim: 3,
            num_classes: 4,
            class_dim: 2,
            mean_radius: 5.0,
            samples_per_class: 2000,
            generator: FlowConfig::coupling(20, 16),
            generator_sigma: 0.25,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    /// The autoregressive alternative generator (10 MAF blocks).
    pub fn with_maf_generator(self) -> Self {
        SimulationSpec {
            generator: FlowConfig::maf(10, 16),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_dim != 2 {
            return Err(Error::contract("simulation means live on a circle: class_dim must be 2"));
        }
        if self.dim <= self.class_dim {
            return Err(Error::contract("simulation needs dim > class_dim"));
        }
        if self.num_classes < 2 {
            return Err(Error::contract("simulation needs at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::contract("samples_per_class must be >= 1"));
        }
        if !(self.mean_radius > 0.0) || !(self.generator_sigma >= 0.0) {
            return Err(Error::contract("mean_radius must be > 0 and generator_sigma >= 0"));
        }
        Ok(())
    }

    /// `mu_y = (r cos theta_y, r sin theta_y, 0, ...)`, `theta_y = 2 pi y / C`.
    pub fn class_means(&self) -> Matrix {
        let c = self.num_classes;
        Matrix::from_fn(c, self.dim, |y, k| {
            let theta = 2.0 * std::f64::consts::PI * y as f64 / c as f64;
            match k {
                0 => self.mean_radius * theta.cos(),
                1 => self.mean_radius * theta.sin(),
                _ => 0.0,
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub latent: LabeledDataset,
    pub observed: LabeledDataset,
    pub generator: FlowStack,
    pub means: Matrix,
}

impl Simulation {
    /// The generating distribution as a subspace DNF.
    pub fn generator_model(&self) -> Result<DnfModel> {
        let p = 2;
        let prior = ClassPrior::new(self.means.cols(), self.means.columns(0..p)?)?;
        DnfModel::new(self.generator.clone(), prior)
    }
}

fn sample_classes(means: &Matrix, per_class: usize, rng: &mut rng::Rng) -> Result<LabeledDataset> {
    let (c, d) = means.shape();
    let mut z = Matrix::zeros(c * per_class, d);
    let mut labels = Vec::with_capacity(c * per_class);
    for y in 0..c {
        for i in 0..per_class {
            for (v, m) in z.row_mut(y * per_class + i).iter_mut().zip(means.row(y)) {
                *v = m + rng::normal(rng);
            }
            labels.push(y);
        }
    }
    LabeledDataset::new(z, labels)
}

pub fn generate_simulation(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let means = spec.class_means();
    let latent = sample_classes(&means, spec.samples_per_class, &mut rng::stream(spec.seed, streams::LATENT))?;
    let mut gen_rng = rng::stream(spec.seed, streams::GENERATOR);
    let generator = spec.generator.build(
        spec.dim,
        Init::Random {
            sigma: spec.generator_sigma,
        },
        &mut gen_rng,
    )?;
    let observed = latent.with_features(generator.forward(latent.features())?)?;
    Ok(Simulation {
        latent,
        observed,
        generator,
        means,
    })
}

/// Heteroscedastic, non-Gaussian stand-in for speaker embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub train_classes: usize,
    pub trial_classes: usize,
    pub samples_per_class: usize,
    /// Standard deviation of the class means around the origin.
    pub between_scale: f64,
    /// Number of leading latent coordinates that carry the class means;
    /// the rest are pure within-class variation.
    pub class_rank: usize,
    /// Range of the per-class within-class standard deviation.
    pub covariance_scale: (f64, f64),
    /// Strength of the random per-class perturbation of the covariance
    /// shape; 0 gives isotropic classes.
    pub heteroscedasticity: f64,
    /// Number of learned blocks in the warp; 0 is no warp.
    pub warp_depth: usize,
    pub warp_kind: BlockKind,
    pub warp_hidden: usize,
    pub warp_sigma: f64,
    /// Genuine (and as many impostor) trials drawn per trial class.
    pub trials_per_class: usize,
    pub seed: u64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            dim: 20,
            train_classes: 200,
            trial_classes: 20,
            samples_per_class: 50,
            between_scale: 2.0,
            class_rank: 10,
            covariance_scale: (0.5, 1.5),
            heteroscedasticity: 0.5,
            warp_depth: 4,
            warp_kind: BlockKind::Coupling,
            warp_hidden: 16,
            warp_sigma: 0.3,
            trials_per_class: 100,
            seed: 0,
        }
    }
}

impl EmbeddingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::contract("embedding dim must be >= 2"));
        }
        if self.train_classes < 2 || self.trial_classes < 2 {
            return Err(Error::contract("need at least 2 train and 2 trial classes"));
        }
        if self.samples_per_class < 2 {
            return Err(Error::contract("need at least 2 samples per class"));
        }
        if self.class_rank == 0 || self.class_rank > self.dim {
            return Err(Error::contract("class_rank must be in 1..=dim"));
        }
        let (lo, hi) = self.covariance_scale;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::contract("covariance_scale must satisfy 0 < lo <= hi"));
        }
        if self.train_classes < 10 {
            log::warn!("fewer than 10 training classes; PLDA estimates will be poor");
        }
        Ok(())
    }

    fn warp_config(&self) -> FlowConfig {
        FlowConfig {
            kind: self.warp_kind,
            blocks: self.warp_depth,
            hidden: self.warp_hidden,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

#[derive(Clone, Debug)]
pub struct Embeddings {
    /// Classes `0..train_classes`.
    pub train: LabeledDataset,
    /// Classes `0..trial_classes`, disjoint from the training speakers.
    pub trials: LabeledDataset,
    /// Index pairs into `trials`.
    pub pairs: Vec<TrialPair>,
    pub warp: FlowStack,
}

/// Covariance factors `L_c` with `Sigma_c = L_c L_c'`.
fn class_factors(spec: &EmbeddingSpec, classes: usize, rng: &mut rng::Rng) -> Result<Vec<Matrix>> {
    let d = spec.dim;
    let (lo, hi) = spec.covariance_scale;
    (0..classes)
        .map(|_| {
            let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let g = rng::normal_matrix(rng, d, d, spec.heteroscedasticity / (d as f64).sqrt());
            let a = Matrix::identity(d).add(&g)?;
            let cov = a.matmul_t(&a)?.scale(s * s).symmetrize();
            cholesky(&cov)
        })
        .collect()
}

fn sample_heteroscedastic(
    means: &Matrix,
    factors: &[Matrix],
    per_class: usize,
    rng: &mut rng::Rng,
) -> Result<LabeledDataset> {
    let (c, d) = means.shape();
    let mut z = Matrix::zeros(c * per_class, d);
    let mut labels = Vec::with_capacity(c * per_class);
    for y in 0..c {
        for i in 0..per_class {
            let e: Vec<f64> = (0..d).map(|_| rng::normal(rng)).collect();
            let v = factors[y].matvec(&e)?;
            for ((out, m), vi) in z.row_mut(y * per_class + i).iter_mut().zip(means.row(y)).zip(v) {
                *out = m + vi;
            }
            labels.push(y);
        }
    }
    LabeledDataset::new(z, labels)
}

fn draw_pairs(data: &LabeledDataset, per_class: usize, rng: &mut rng::Rng) -> Vec<TrialPair> {
    let groups = data.class_indices();
    let n = data.len();
    let mut pairs = Vec::with_capacity(2 * per_class * groups.len());
    for (y, members) in groups.iter().enumerate() {
        for _ in 0..per_class {
            let two: Vec<usize> = members.choose_multiple(rng, 2).copied().collect();
            pairs.push(TrialPair {
                a: two[0],
                b: two[1],
                genuine: true,
            });
            let a = *members.choose(rng).expect("non-empty class");
            let b = loop {
                let b = rng.random_range(0..n);
                if data.labels()[b] != y {
                    break b;
                }
            };
            pairs.push(TrialPair { a, b, genuine: false });
        }
    }
    pairs
}

pub fn generate_embeddings(spec: &EmbeddingSpec) -> Result<Embeddings> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, streams::LATENT);
    let total = spec.train_classes + spec.trial_classes;
    let mut means = rng::normal_matrix(&mut r, total, spec.dim, spec.between_scale);
    for y in 0..total {
        means.row_mut(y)[spec.class_rank..].fill(0.0);
    }
    let factors = class_factors(spec, total, &mut r)?;
    let latent = sample_heteroscedastic(&means, &factors, spec.samples_per_class, &mut r)?;

    let warp = if spec.warp_depth == 0 {
        FlowStack::identity(spec.dim)
    } else {
        let mut gen_rng = rng::stream(spec.seed, streams::GENERATOR);
        spec.warp_config().build(spec.dim, Init::Random { sigma: spec.warp_sigma }, &mut gen_rng)?
    };
    let x = warp.forward(latent.features())?;

    let split = spec.train_classes * spec.samples_per_class;
    let train_idx: Vec<usize> = (0..split).collect();
    let trial_idx: Vec<usize> = (split..latent.len()).collect();
    let train = LabeledDataset::new(x.select_rows(&train_idx)?, latent.labels()[..split].to_vec())?;
    let trial_labels = latent.labels()[split..].iter().map(|y| y - spec.train_classes).collect();
    let trials = LabeledDataset::new(x.select_rows(&trial_idx)?, trial_labels)?;
    let pairs = draw_pairs(&trials, spec.trials_per_class, &mut rng::stream(spec.seed, streams::TRIALS));
    Ok(Embeddings {
        train,
        trials,
        pairs,
        warp,
    })
}

/// Classes `N(mu_y, Sigma)` with one shared random covariance (the
/// linear-Gaussian LDA model) and means drawn `N(0, mean_scale^2 I)`.
/// Returns the data and `Sigma`.
pub fn homoscedastic_gaussians(
    dim: usize,
    classes: usize,
    per_class: usize,
    mean_scale: f64,
    seed: u64,
) -> Result<(LabeledDataset, Matrix)> {
    if dim == 0 || classes == 0 || per_class == 0 {
        return Err(Error::contract("homoscedastic data needs dim, classes and per_class >= 1"));
    }
    let mut r = rng::stream(seed, streams::LATENT);
    let a = rng::normal_matrix(&mut r, dim, dim, 0.5 / (dim as f64).sqrt()).add(&Matrix::identity(dim))?;
    let sigma = a.matmul_t(&a)?.symmetrize();
    let means = rng::normal_matrix(&mut r, classes, dim, mean_scale);
    let l = cholesky(&sigma)?;
    let data = sample_heteroscedastic(&means, &vec![l; classes], per_class, &mut r)?;
    Ok((data, sigma))
}

/// Unit-covariance Gaussian components with means equally spaced on a
/// circle of the given radius in the plane.
pub fn planar_mixture(classes: usize, radius: f64, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 {
        return Err(Error::contract("mixture needs classes and per_class >= 1"));
    }
    let spec = SimulationSpec {
        dim: 2,
        num_classes: classes,
        mean_radius: radius,
        ..SimulationSpec::default()
    };
    sample_classes(&spec.class_means(), per_class, &mut rng::stream(seed, streams::LATENT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sim(sigma: f64) -> SimulationSpec {
        SimulationSpec {
            samples_per_class: 500,
            generator_sigma: sigma,
            generator: FlowConfig::coupling(4, 8),
            seed: 3,
            ..SimulationSpec::default()
        }
    }

    #[test]
    fn zero_generator_is_identity() {
        let sim = generate_simulation(&small_sim(0.0)).unwrap();
        assert_eq!(sim.observed, sim.latent);
    }

    #[test]
    fn latent_class_means_follow_construction() {
        let spec = small_sim(0.5);
        let sim = generate_simulation(&spec).unwrap();
        let bound = 4.0 / (spec.samples_per_class as f64).sqrt();
        let est = sim.latent.class_means();
        let truth = spec.class_means();
        for y in 0..4 {
            assert_eq!(truth[(y, 2)], 0.0);
            for k in 0..3 {
                assert!((est[(y, k)] - truth[(y, k)]).abs() < bound);
            }
        }
        assert!((truth[(0, 0)] - 5.0).abs() < 1e-12 && truth[(1, 1)] > 4.99);
    }

    #[test]
    fn generator_density_is_self_consistent() {
        for spec in [small_sim(0.5), small_sim(0.5).with_maf_generator()] {
            let sim = generate_simulation(&SimulationSpec {
                samples_per_class: 50,
                ..spec
            })
            .unwrap();
            let model = sim.generator_model().unwrap();
            for i in (0..sim.observed.len()).step_by(7) {
                let y = sim.observed.labels()[i];
                let x = Matrix::row_vector(sim.observed.point(i));
                let (z, ld) = sim.generator.inverse_with_logdet(&x).unwrap();
                let recovered = z.row(0);
                let truth = sim.latent.point(i);
                assert!(recovered.iter().zip(truth).all(|(a, b)| (a - b).abs() < 1e-6));
                let direct = model.prior().log_density(truth, y).unwrap() + ld[0];
                let lp = model.log_prob(sim.observed.point(i), y).unwrap();
                assert!(lp.is_finite());
                assert!((lp - direct).abs() < 1e-8 + 1e-6 * ld[0].abs(), "{lp} vs {direct}");
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = generate_simulation(&small_sim(0.5)).unwrap();
        let b = generate_simulation(&small_sim(0.5)).unwrap();
        assert_eq!(a.observed, b.observed);
        let c = generate_simulation(&SimulationSpec { seed: 4, ..small_sim(0.5) }).unwrap();
        assert_ne!(a.observed, c.observed);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_simulation(&SimulationSpec { dim: 2, ..SimulationSpec::default() }).is_err());
        assert!(generate_simulation(&SimulationSpec { num_classes: 1, ..SimulationSpec::default() }).is_err());
        let bad = EmbeddingSpec {
            covariance_scale: (2.0, 1.0),
            ..EmbeddingSpec::default()
        };
        assert!(generate_embeddings(&bad).is_err());
    }

    fn small_embeddings() -> EmbeddingSpec {
        EmbeddingSpec {
            dim: 6,
            class_rank: 3,
            train_classes: 10,
            trial_classes: 5,
            samples_per_class: 20,
            trials_per_class: 10,
            seed: 2,
            ..EmbeddingSpec::default()
        }
    }

    #[test]
    fn trial_pairs_are_labeled_correctly() {
        let e = generate_embeddings(&small_embeddings()).unwrap();
        assert_eq!(e.pairs.len(), 2 * 10 * 5);
        assert_eq!(e.train.num_classes(), 10);
        assert_eq!(e.trials.num_classes(), 5);
        for p in &e.pairs {
            let same = e.trials.labels()[p.a] == e.trials.labels()[p.b];
            assert_eq!(same, p.genuine);
            assert_ne!(p.a, p.b);
        }
    }

    #[test]
    fn unwarped_isotropic_embeddings_are_lda_data() {
        let spec = EmbeddingSpec {
            warp_depth: 0,
            heteroscedasticity: 0.0,
            covariance_scale: (1.0, 1.0),
            samples_per_class: 400,
            ..small_embeddings()
        };
        let e = generate_embeddings(&spec).unwrap();
        assert_eq!(e.warp.blocks().len(), 0);
        // within-class scatter of every class is close to the shared identity
        for group in e.train.class_indices() {
            let part = e.train.subset(&group).unwrap();
            let mean = part.features().column_means();
            let centred = part.features().add_row_broadcast(&Matrix::row_vector(&mean).scale(-1.0)).unwrap();
            let cov = centred.t_matmul(&centred).unwrap().scale(1.0 / 399.0);
            assert!(cov.sub(&Matrix::identity(6)).unwrap().max_abs() < 0.3);
        }
    }

    #[test]
    fn small_generators() {
        let (data, sigma) = homoscedastic_gaussians(3, 4, 500, 2.0, 1).unwrap();
        assert_eq!(data.class_counts(), vec![500; 4]);
        assert!(cholesky(&sigma).is_ok());
        let mix = planar_mixture(3, 2.0, 400, 1).unwrap();
        let m = mix.class_means();
        assert!((m[(0, 0)] - 2.0).abs() < 4.0 / 20.0 && m[(0, 1)].abs() < 4.0 / 20.0);
        assert_eq!(mix.dim(), 2);
    }

    #[test]
    fn embeddings_are_deterministic() {
        let a = generate_embeddings(&small_embeddings()).unwrap();
        let b = generate_embeddings(&small_embeddings()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn warped_embedding_classes_are_not_gaussian() {
        let e = generate_embeddings(&EmbeddingSpec::default()).unwrap();
        let groups = e.train.class_indices();
        let rejected = groups
            .iter()
            .filter(|idx| !crate::eval::gaussianity(&e.train.features().select_rows(idx).unwrap()).unwrap().passes())
            .count();
        assert!(rejected as f64 >= 0.8 * groups.len() as f64, "{rejected} of {}", groups.len());
    }
}
