//! End-to-end experiment drivers shared by the CLI and the acceptance
//! suite. Everything is a pure function of its config.

use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::datasim::{self, EmbeddingSpec, SimulationSpec};
use crate::diffcore::{principal_angles, Matrix};
use crate::dnf::DnfModel;
use crate::error::{Error, Result};
use crate::eval::{self, KMeansConfig, MardiaReport, ProbeConfig, TrialScoreSet};
use crate::flows::{FlowConfig, Init};
use crate::lda::{self, LdaModel, MlConfig};
use crate::rng::{self, streams};
use crate::trainer::{self, TrainConfig, TrainTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LdaFisher,
    LdaMl,
    Nf,
    Dnf,
    DnfSubspace,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::LdaFisher,
        ModelKind::LdaMl,
        ModelKind::Nf,
        ModelKind::Dnf,
        ModelKind::DnfSubspace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LdaFisher => "lda-fisher",
            ModelKind::LdaMl => "lda-ml",
            ModelKind::Nf => "nf",
            ModelKind::Dnf => "dnf",
            ModelKind::DnfSubspace => "dnf-subspace",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::LdaFisher | ModelKind::LdaMl)
    }

    /// Number of class-dependent latent coordinates for data of
    /// dimension `dim`, given the requested reduced dimension.
    pub fn class_dim(self, dim: usize, requested: usize) -> usize {
        match self {
            ModelKind::Nf => 0,
            ModelKind::Dnf => dim,
            _ => requested,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown model kind '{s}'")))
    }
}

/// What to fit and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Flow architecture for the non-linear kinds.
    pub flow: FlowConfig,
    /// Reduced dimension `p` (ignored by `nf` and `dnf`).
    pub class_dim: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub kind: ModelKind,
    pub model: DnfModel,
    pub trace: Option<TrainTrace>,
}

impl Fitted {
    /// Class-space coordinates of `x` (all latent coordinates for `nf`).
    pub fn class_codes(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.model.normalize(x)?;
        match self.model.class_dim() {
            0 => Ok(z),
            p => z.columns(0..p),
        }
    }

    /// Residual coordinates `p..d` of `x`.
    pub fn residual_codes(&self, x: &Matrix) -> Result<Matrix> {
        self.model.residual(x)
    }
}

/// Fits `spec.kind` on `data`, with `heldout` used for checkpoint
/// selection by the trained kinds.
pub fn fit_model(spec: &ModelSpec, data: &LabeledDataset, heldout: Option<&LabeledDataset>) -> Result<Fitted> {
    let d = data.dim();
    let p = spec.kind.class_dim(d, spec.class_dim);
    if p > d {
        return Err(Error::contract(format!("class dim {p} exceeds data dim {d}")));
    }
    let (model, trace) = match spec.kind {
        ModelKind::LdaFisher => (lda::fit_fisher(data, p)?.to_dnf()?, None),
        ModelKind::LdaMl => (lda::fit_ml(data, p, &MlConfig::default())?.model.to_dnf()?, None),
        ModelKind::Nf => {
            let pooled = pool(data)?;
            let held = heldout.map(pool).transpose()?;
            let (m, t) = train_flow(spec, &pooled, held.as_ref(), 1, 0)?;
            (m, Some(t))
        }
        ModelKind::Dnf | ModelKind::DnfSubspace => {
            if spec.kind == ModelKind::DnfSubspace && p >= d {
                return Err(Error::contract("subspace DNF needs class_dim < dim"));
            }
            let classes = num_classes(data, heldout);
            let (m, t) = train_flow(spec, data, heldout, classes, p)?;
            (m, Some(t))
        }
    };
    Ok(Fitted {
        kind: spec.kind,
        model,
        trace,
    })
}

fn num_classes(data: &LabeledDataset, heldout: Option<&LabeledDataset>) -> usize {
    data.num_classes().max(heldout.map_or(0, LabeledDataset::num_classes))
}

fn pool(data: &LabeledDataset) -> Result<LabeledDataset> {
    LabeledDataset::unlabeled(data.features().clone())
}

fn train_flow(
    spec: &ModelSpec,
    data: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    classes: usize,
    p: usize,
) -> Result<(DnfModel, TrainTrace)> {
    let mut init_rng = rng::stream(spec.train.seed, streams::INIT);
    let flow = spec.flow.build(data.dim(), Init::Identity, &mut init_rng)?;
    let model = DnfModel::with_data_means(flow, classes, p, data)?;
    trainer::train(model, data, heldout, &spec.train)
}

/// Runs `jobs` on up to `threads` scoped workers, preserving order.
pub fn run_parallel<T, F>(jobs: Vec<F>, threads: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let threads = threads.max(1);
    if threads == 1 {
        return jobs.into_iter().map(|f| f()).collect();
    }
    let mut out = Vec::with_capacity(jobs.len());
    let mut jobs = jobs.into_iter().peekable();
    while jobs.peek().is_some() {
        let batch: Vec<F> = jobs.by_ref().take(threads).collect();
        thread::scope(|s| {
            let handles: Vec<_> = batch.into_iter().map(|f| s.spawn(f)).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("experiment worker panicked")));
        });
    }
    out
}

// ---------------------------------------------------------------------
// simulation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub spec: SimulationSpec,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub holdout_fraction: f64,
    pub kmeans_restarts: usize,
    pub threads: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            spec: SimulationSpec::default(),
            flow: FlowConfig::maf(10, 64),
            train: TrainConfig::default(),
            holdout_fraction: 0.2,
            kmeans_restarts: 20,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub ari_dnf: f64,
    pub ari_dnf_subspace: f64,
    pub ari_lda: f64,
    pub probe_dnf_subspace_residual: f64,
    pub probe_lda_residual: f64,
    pub chance: f64,
    pub heldout_nll_dnf: f64,
    pub heldout_nll_dnf_subspace: f64,
    pub heldout_nll_lda: f64,
    pub heldout_nll_generator: f64,
}

#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub report: SimulationReport,
    pub data: datasim::Simulation,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub models: Vec<Fitted>,
}

impl SimulationRun {
    pub fn model(&self, kind: ModelKind) -> Option<&Fitted> {
        self.models.iter().find(|m| m.kind == kind)
    }
}

/// Generates the warped data, fits DNF, subspace DNF and LDA on a
/// training split, and measures cluster recovery and residual leakage on
/// the held-out split.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationRun> {
    let data = datasim::generate_simulation(&cfg.spec)?;
    let (train, test) = data
        .observed
        .split(cfg.holdout_fraction, &mut rng::stream(cfg.spec.seed, streams::SPLIT))?;
    let p = cfg.spec.class_dim;
    let kinds = [ModelKind::Dnf, ModelKind::DnfSubspace, ModelKind::LdaFisher];
    let specs: Vec<ModelSpec> = kinds
        .iter()
        .map(|&kind| ModelSpec {
            kind,
            flow: cfg.flow,
            class_dim: p,
            train: cfg.train.clone(),
        })
        .collect();
    let jobs: Vec<_> = specs.iter().map(|s| || fit_model(s, &train, Some(&test))).collect();
    let models = run_parallel(jobs, cfg.threads).into_iter().collect::<Result<Vec<_>>>()?;

    let kcfg = KMeansConfig {
        restarts: cfg.kmeans_restarts,
        seed: cfg.spec.seed,
        ..KMeansConfig::default()
    };
    let pcfg = ProbeConfig {
        seed: cfg.spec.seed,
        ..ProbeConfig::default()
    };
    let x = test.features();
    let labels = test.labels();
    let ari = |m: &Fitted| eval::cluster_recovery(&m.class_codes(x)?, labels, &kcfg);
    let probe = |m: &Fitted| eval::residual_leakage(&m.residual_codes(x)?, labels, &pcfg);
    let nll = |m: &Fitted| trainer::evaluate_nll(&m.model, &test);
    let [dnf, sub, lda] = [&models[0], &models[1], &models[2]];
    let report = SimulationReport {
        ari_dnf: ari(dnf)?,
        ari_dnf_subspace: ari(sub)?,
        ari_lda: ari(lda)?,
        probe_dnf_subspace_residual: probe(sub)?,
        probe_lda_residual: probe(lda)?,
        chance: eval::chance_level(labels),
        heldout_nll_dnf: nll(dnf)?,
        heldout_nll_dnf_subspace: nll(sub)?,
        heldout_nll_lda: nll(lda)?,
        heldout_nll_generator: trainer::evaluate_nll(&data.generator_model()?, &test)?,
    };
    Ok(SimulationRun {
        report,
        data,
        train,
        test,
        models,
    })
}

// ---------------------------------------------------------------------
// NF vs DNF on a planar mixture

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub num_classes: usize,
    pub radius: f64,
    pub train_per_class: usize,
    pub heldout_per_class: usize,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            num_classes: 3,
            radius: 2.0,
            train_per_class: 1000,
            heldout_per_class: 200,
            flow: FlowConfig::maf(10, 64),
            train: TrainConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContrastReport {
    pub nf_pooled: MardiaReport,
    pub dnf_per_class: Vec<MardiaReport>,
    /// Held-out mean `-log p(x)` under the single-class flow.
    pub nf_heldout_nll: f64,
    /// Held-out mean `-log p(x | y)` under DNF.
    pub dnf_heldout_nll: f64,
}

impl ContrastReport {
    pub fn nll_gain(&self) -> f64 {
        self.nf_heldout_nll - self.dnf_heldout_nll
    }
}

pub fn run_contrast(cfg: &ContrastConfig) -> Result<(ContrastReport, Vec<Fitted>)> {
    let train = datasim::planar_mixture(cfg.num_classes, cfg.radius, cfg.train_per_class, cfg.seed)?;
    let heldout =
        datasim::planar_mixture(cfg.num_classes, cfg.radius, cfg.heldout_per_class, cfg.seed.wrapping_add(1))?;
    let specs: Vec<ModelSpec> = [ModelKind::Nf, ModelKind::Dnf]
        .iter()
        .map(|&kind| ModelSpec {
            kind,
            flow: cfg.flow,
            class_dim: 2,
            train: cfg.train.clone(),
        })
        .collect();
    let jobs: Vec<_> = specs.iter().map(|s| || fit_model(s, &train, Some(&heldout))).collect();
    let models = run_parallel(jobs, cfg.threads).into_iter().collect::<Result<Vec<_>>>()?;
    let (nf, dnf) = (&models[0], &models[1]);

    let nf_pooled = eval::gaussianity(&nf.model.normalize(heldout.features())?)?;
    let z = dnf.model.normalize(heldout.features())?;
    let dnf_per_class = heldout
        .class_indices()
        .iter()
        .map(|idx| eval::gaussianity(&z.select_rows(idx)?))
        .collect::<Result<Vec<_>>>()?;
    let report = ContrastReport {
        nf_pooled,
        dnf_per_class,
        nf_heldout_nll: trainer::evaluate_nll(&nf.model, &pool(&heldout)?)?,
        dnf_heldout_nll: trainer::evaluate_nll(&dnf.model, &heldout)?,
    };
    Ok((report, models))
}

// ---------------------------------------------------------------------
// linear DNF vs LDA

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearFallbackConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub class_dim: usize,
    pub per_class: usize,
    pub mean_scale: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for LinearFallbackConfig {
    fn default() -> Self {
        LinearFallbackConfig {
            dim: 4,
            num_classes: 3,
            class_dim: 2,
            per_class: 3000,
            mean_scale: 2.0,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFallbackReport {
    /// Held-out mean log-likelihoods.
    pub ml_heldout_ll: f64,
    pub dnf_heldout_ll: f64,
    pub fisher_heldout_ll: f64,
    /// Largest principal angle (degrees) between the class subspaces.
    pub dnf_vs_ml_angle: f64,
    pub ml_vs_fisher_angle: f64,
    pub ml_converged: bool,
}

impl LinearFallbackReport {
    pub fn relative_gap(&self) -> f64 {
        (self.dnf_heldout_ll - self.ml_heldout_ll).abs() / self.ml_heldout_ll.abs()
    }
}

fn max_angle_deg(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(principal_angles(a, b)?.into_iter().fold(0.0, f64::max).to_degrees())
}

pub fn run_linear_fallback(cfg: &LinearFallbackConfig) -> Result<LinearFallbackReport> {
    let (all, _) = datasim::homoscedastic_gaussians(cfg.dim, cfg.num_classes, cfg.per_class, cfg.mean_scale, cfg.seed)?;
    let (train, test) = all.split(0.2, &mut rng::stream(cfg.seed, streams::SPLIT))?;
    let p = cfg.class_dim;
    let ml = lda::fit_ml(&train, p, &MlConfig::default())?;
    let fisher = lda::fit_fisher(&train, p)?;
    let spec = ModelSpec {
        kind: ModelKind::DnfSubspace,
        flow: FlowConfig::linear(),
        class_dim: p,
        train: cfg.train.clone(),
    };
    let dnf = fit_model(&spec, &train, None)?;
    let dnf_lda = LdaModel::from_dnf(&dnf.model)?;
    let k = p.min(cfg.num_classes - 1);
    let ml_sub = ml.model.discriminant_subspace(k)?;
    Ok(LinearFallbackReport {
        ml_heldout_ll: ml.model.mean_log_likelihood(&test)?,
        dnf_heldout_ll: -trainer::evaluate_nll(&dnf.model, &test)?,
        fisher_heldout_ll: fisher.mean_log_likelihood(&test)?,
        dnf_vs_ml_angle: max_angle_deg(&dnf_lda.discriminant_subspace(k)?, &ml_sub)?,
        ml_vs_fisher_angle: max_angle_deg(&ml_sub, &fisher.discriminant_subspace(k)?)?,
        ml_converged: ml.converged,
    })
}

// ---------------------------------------------------------------------
// verification scoring

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    pub spec: EmbeddingSpec,
    pub reduced_dim: usize,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub threads: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        let spec = EmbeddingSpec::default();
        VerificationConfig {
            reduced_dim: 10,
            flow: FlowConfig::coupling(8, FlowConfig::default_hidden(spec.dim)),
            spec,
            train: TrainConfig::for_embeddings(),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub eer_raw: f64,
    pub eer_lda: f64,
    pub eer_dnf_subspace: f64,
    pub cosine_eer_raw: f64,
    pub cosine_eer_lda: f64,
    pub cosine_eer_dnf_subspace: f64,
    pub reduced_dim: usize,
    pub num_trials: usize,
}

pub fn trial_tuples(pairs: &[datasim::TrialPair]) -> Vec<(usize, usize, bool)> {
    pairs.iter().map(|p| (p.a, p.b, p.genuine)).collect()
}

/// PLDA trained on `train_codes` and scored on the trial list.
pub fn plda_scores(
    train_codes: &LabeledDataset,
    trial_codes: &Matrix,
    pairs: &[datasim::TrialPair],
) -> Result<TrialScoreSet> {
    let model = eval::fit_plda(train_codes)?;
    eval::score_trials(&model, trial_codes, &trial_tuples(pairs))
}

pub fn plda_eer(train_codes: &LabeledDataset, trial_codes: &Matrix, pairs: &[datasim::TrialPair]) -> Result<f64> {
    eval::eer(&plda_scores(train_codes, trial_codes, pairs)?)
}

/// Cosine scoring centred on the mean of the training codes.
pub fn cosine_eer(train_codes: &Matrix, trial_codes: &Matrix, pairs: &[datasim::TrialPair]) -> Result<f64> {
    eval::eer(&eval::score_trials_cosine(trial_codes, &train_codes.column_means(), &trial_tuples(pairs))?)
}

#[derive(Clone, Debug)]
pub struct VerificationRun {
    pub report: VerificationReport,
    pub embeddings: datasim::Embeddings,
    /// LDA then subspace DNF.
    pub models: Vec<Fitted>,
}

pub fn run_verification(cfg: &VerificationConfig) -> Result<VerificationRun> {
    let emb = datasim::generate_embeddings(&cfg.spec)?;
    let p = cfg.reduced_dim;
    let specs: Vec<ModelSpec> = [ModelKind::LdaFisher, ModelKind::DnfSubspace]
        .iter()
        .map(|&kind| ModelSpec {
            kind,
            flow: cfg.flow,
            class_dim: p,
            train: cfg.train.clone(),
        })
        .collect();
    let jobs: Vec<_> = specs.iter().map(|s| || fit_model(s, &emb.train, None)).collect();
    let models = run_parallel(jobs, cfg.threads).into_iter().collect::<Result<Vec<_>>>()?;

    let reduced_eer = |m: &Fitted| -> Result<(f64, f64)> {
        let train_codes = emb.train.with_features(m.class_codes(emb.train.features())?)?;
        let trial_codes = m.class_codes(emb.trials.features())?;
        Ok((
            plda_eer(&train_codes, &trial_codes, &emb.pairs)?,
            cosine_eer(train_codes.features(), &trial_codes, &emb.pairs)?,
        ))
    };
    let (lda, lda_cos) = reduced_eer(&models[0])?;
    let (dnf, dnf_cos) = reduced_eer(&models[1])?;
    let report = VerificationReport {
        eer_raw: plda_eer(&emb.train, emb.trials.features(), &emb.pairs)?,
        eer_lda: lda,
        eer_dnf_subspace: dnf,
        cosine_eer_raw: cosine_eer(emb.train.features(), emb.trials.features(), &emb.pairs)?,
        cosine_eer_lda: lda_cos,
        cosine_eer_dnf_subspace: dnf_cos,
        reduced_dim: p,
        num_trials: emb.pairs.len(),
    };
    Ok(VerificationRun {
        report,
        embeddings: emb,
        models,
    })
}
