//! One function per subcommand. Each returns the inputs it read and the
//! files it wrote so the caller can record them in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use flowlda::dataset::LabeledDataset;
use flowlda::datasim;
use flowlda::dnf::DnfModel;
use flowlda::eval::{self, KMeansConfig, ProbeConfig};
use flowlda::experiment::{self, fit_model, ModelSpec, SimulationConfig, VerificationConfig};
use flowlda::flows::FlowConfig;
use flowlda::trainer;
use flowlda::Matrix;
use serde::Serialize;

use crate::artifacts::{self, Metric};
use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, CliResult};
use crate::svg;

#[derive(Debug, Default)]
pub struct Output {
    pub inputs: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: Output,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
        Ok(Run {
            cfg,
            out: Output::default(),
        })
    }

    fn path(&mut self, name: &str) -> CliResult<PathBuf> {
        let p = self.cfg.out.join(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        self.out.files.push(p.clone());
        Ok(p)
    }

    fn input(&mut self, path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::usage(format!("this command needs {flag} <path>")))?;
        if !p.exists() {
            return Err(CliError::usage(format!("input file not found: {}", p.display())));
        }
        self.out.inputs.push(p.clone());
        Ok(p)
    }

    fn dataset(&mut self, name: &str, data: &LabeledDataset) -> CliResult<()> {
        let p = self.path(&format!("{name}.{}", self.cfg.format.extension()))?;
        artifacts::write_dataset(&p, data, self.cfg.format)
    }

    fn model(&mut self, name: &str, model: &DnfModel) -> CliResult<()> {
        let p = self.path(&format!("{name}.dnfm"))?;
        artifacts::write_model(&p, model)
    }

    fn trace(&mut self, name: &str, trace: &trainer::TrainTrace) -> CliResult<()> {
        let p = self.path(&format!("{name}.csv"))?;
        let file = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        trace.write_csv(std::io::BufWriter::new(file)).map_err(|e| CliError::io(&p, e))
    }

    fn figure(&mut self, name: &str, points: &Matrix, labels: &[usize], axes: [usize; 2], title: &str) -> CliResult<()> {
        let p = self.path(&format!("{name}.svg"))?;
        svg::write_scatter(&p, points, labels, axes, title)
    }

    fn metrics(&mut self, metrics: &[Metric]) -> CliResult<()> {
        let p = self.path("metrics.json")?;
        artifacts::write_json(&p, metrics)
    }

    fn report<T: Serialize>(&self, report: &T, prefix: &str) -> Vec<Metric> {
        artifacts::metrics_from_report(report, prefix, &self.cfg.to_json(), self.cfg.seed)
    }
}

/// Single-class models score every point as class 0.
fn scoring_view(model: &DnfModel, data: &LabeledDataset) -> CliResult<LabeledDataset> {
    if model.num_classes() == 1 {
        Ok(LabeledDataset::unlabeled(data.features().clone())?)
    } else {
        Ok(data.clone())
    }
}

fn class_codes(model: &DnfModel, x: &Matrix) -> CliResult<Matrix> {
    let z = model.normalize(x)?;
    Ok(match model.class_dim() {
        0 => z,
        p => z.columns(0..p)?,
    })
}

fn distinct(labels: &[usize]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

pub fn simulate(cfg: &ExperimentConfig) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let sim = datasim::generate_simulation(&cfg.simulation)?;
    run.dataset("observed", &sim.observed)?;
    run.dataset("latent", &sim.latent)?;
    run.model("generator", &sim.generator_model()?)?;
    Ok(run.out)
}

#[derive(Serialize)]
struct TrainReport {
    train_nll: f64,
    heldout_nll: Option<f64>,
    class_dim: usize,
    num_parameters: usize,
}

pub fn train(cfg: &ExperimentConfig) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let data_path = run.input(&cfg.data, "--data")?;
    let data = artifacts::read_dataset(&data_path)?;
    let heldout = match &cfg.heldout {
        Some(_) => {
            let p = run.input(&cfg.heldout, "--heldout")?;
            Some(artifacts::read_dataset(&p)?)
        }
        None => None,
    };
    if cfg.class_dim > data.dim() {
        return Err(CliError::usage(format!(
            "--class-dim {} exceeds data dimension {}",
            cfg.class_dim,
            data.dim()
        )));
    }
    let spec = ModelSpec {
        kind: cfg.model,
        flow: cfg.train_flow(data.dim()),
        class_dim: cfg.class_dim,
        train: cfg.train_config(),
    };
    let fitted = fit_model(&spec, &data, heldout.as_ref())?;
    run.model("model", &fitted.model)?;
    if let Some(trace) = &fitted.trace {
        run.trace("trace", trace)?;
    }
    let report = TrainReport {
        train_nll: trainer::evaluate_nll(&fitted.model, &scoring_view(&fitted.model, &data)?)?,
        heldout_nll: heldout
            .as_ref()
            .map(|h| trainer::evaluate_nll(&fitted.model, &scoring_view(&fitted.model, h)?).map_err(CliError::from))
            .transpose()?,
        class_dim: fitted.model.class_dim(),
        num_parameters: fitted.model.num_parameters(),
    };
    let metrics = run.report(&report, "");
    run.metrics(&metrics)?;
    Ok(run.out)
}

#[derive(Serialize)]
struct EvalReport {
    nll: f64,
    ari: Option<f64>,
    residual_probe: Option<f64>,
    chance: Option<f64>,
}

pub fn evaluate(cfg: &ExperimentConfig) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let model_path = run.input(&cfg.checkpoint, "--checkpoint")?;
    let data_path = run.input(&cfg.data, "--data")?;
    let model = artifacts::read_model(&model_path)?;
    let data = artifacts::read_dataset(&data_path)?;
    let labels = data.labels();
    let classes = distinct(labels);
    let x = data.features();
    let kcfg = KMeansConfig {
        seed: cfg.seed,
        ..KMeansConfig::default()
    };
    let pcfg = ProbeConfig {
        seed: cfg.seed,
        ..ProbeConfig::default()
    };
    let has_residual = model.class_dim() > 0 && model.class_dim() < model.dim();
    let report = EvalReport {
        nll: trainer::evaluate_nll(&model, &scoring_view(&model, &data)?)?,
        ari: (classes >= 2)
            .then(|| eval::cluster_recovery(&class_codes(&model, x)?, labels, &kcfg).map_err(CliError::from))
            .transpose()?,
        residual_probe: (classes >= 2 && has_residual)
            .then(|| eval::residual_leakage(&model.residual(x)?, labels, &pcfg).map_err(CliError::from))
            .transpose()?,
        chance: (classes >= 2).then(|| eval::chance_level(labels)),
    };
    let metrics = run.report(&report, "");
    run.metrics(&metrics)?;
    Ok(run.out)
}

pub fn reduce(cfg: &ExperimentConfig) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let model_path = run.input(&cfg.checkpoint, "--checkpoint")?;
    let data_path = run.input(&cfg.data, "--data")?;
    let model = artifacts::read_model(&model_path)?;
    let data = artifacts::read_dataset(&data_path)?;
    run.dataset("reduced", &data.with_features(class_codes(&model, data.features())?)?)?;
    run.dataset("latent", &data.with_features(model.normalize(data.features())?)?)?;
    Ok(run.out)
}

pub fn figure(cfg: &ExperimentConfig) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let data_path = run.input(&cfg.data, "--data")?;
    let data = artifacts::read_dataset(&data_path)?;
    let (points, title) = match &cfg.checkpoint {
        Some(_) => {
            let p = run.input(&cfg.checkpoint, "--checkpoint")?;
            let model = artifacts::read_model(&p)?;
            (model.normalize(data.features())?, format!("latent codes of {}", data_path.display()))
        }
        None => (data.features().clone(), data_path.display().to_string()),
    };
    run.figure("figure", &points, data.labels(), cfg.axes, &title)?;
    Ok(run.out)
}

pub fn pipeline(cfg: &ExperimentConfig, threads: usize) -> CliResult<Output> {
    match cfg.task {
        Task::Simulation => simulation_pipeline(cfg, threads),
        Task::Verification => verification_pipeline(cfg, threads),
    }
}

fn simulation_pipeline(cfg: &ExperimentConfig, threads: usize) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let defaults = SimulationConfig::default();
    let sim_cfg = SimulationConfig {
        spec: cfg.simulation.clone(),
        flow: cfg.flow_config(defaults.flow),
        train: cfg.train_config(),
        holdout_fraction: cfg.holdout_fraction,
        threads,
        ..defaults
    };
    let result = experiment::run_simulation(&sim_cfg)?;
    run.dataset("data/observed", &result.data.observed)?;
    run.dataset("data/latent", &result.data.latent)?;
    run.dataset("data/train", &result.train)?;
    run.dataset("data/test", &result.test)?;
    run.model("models/generator", &result.data.generator_model()?)?;
    let axes = cfg.axes;
    let observed = &result.data.observed;
    run.figure("figures/observed", observed.features(), observed.labels(), axes, "observed data")?;
    let latent = &result.data.latent;
    run.figure("figures/latent", latent.features(), latent.labels(), axes, "true latent codes")?;
    for fitted in &result.models {
        let name = fitted.kind.as_str();
        run.model(&format!("models/{name}"), &fitted.model)?;
        if let Some(trace) = &fitted.trace {
            run.trace(&format!("traces/{name}"), trace)?;
        }
        let codes = fitted.model.normalize(result.test.features())?;
        run.figure(
            &format!("figures/codes_{name}"),
            &codes,
            result.test.labels(),
            [0, 1],
            &format!("{name} latent codes (held-out)"),
        )?;
    }
    let metrics = run.report(&result.report, "");
    run.metrics(&metrics)?;
    Ok(run.out)
}

fn verification_pipeline(cfg: &ExperimentConfig, threads: usize) -> CliResult<Output> {
    let mut run = Run::new(cfg)?;
    let dim = cfg.embeddings.dim;
    let ver_cfg = VerificationConfig {
        spec: cfg.embeddings.clone(),
        reduced_dim: cfg.verification_dim,
        flow: cfg.flow_config(FlowConfig::coupling(8, FlowConfig::default_hidden(dim))),
        train: cfg.train_config(),
        threads,
    };
    let result = experiment::run_verification(&ver_cfg)?;
    let emb = &result.embeddings;
    run.dataset("data/train", &emb.train)?;
    run.dataset("data/trials", &emb.trials)?;
    let pairs = experiment::trial_tuples(&emb.pairs);
    let trial_labels = emb.trials.labels();
    let raw = experiment::plda_scores(&emb.train, emb.trials.features(), &emb.pairs)?;
    let p = run.path("trials/raw.csv")?;
    artifacts::write_trials(&p, trial_labels, &pairs, &raw)?;
    for fitted in &result.models {
        let name = fitted.kind.as_str();
        run.model(&format!("models/{name}"), &fitted.model)?;
        if let Some(trace) = &fitted.trace {
            run.trace(&format!("traces/{name}"), trace)?;
        }
        let train_codes = emb.train.with_features(fitted.class_codes(emb.train.features())?)?;
        let trial_codes = fitted.class_codes(emb.trials.features())?;
        let scores = experiment::plda_scores(&train_codes, &trial_codes, &emb.pairs)?;
        let p = run.path(&format!("trials/{name}.csv"))?;
        artifacts::write_trials(&p, trial_labels, &pairs, &scores)?;
    }
    let metrics = run.report(&result.report, "");
    run.metrics(&metrics)?;
    Ok(run.out)
}

/// Paths relative to the output directory, for the manifest.
pub fn relative_names(out: &Path, files: &[PathBuf]) -> Vec<String> {
    files
        .iter()
        .map(|f| f.strip_prefix(out).unwrap_or(f).display().to_string())
        .collect()
}
