//! Mini-batch maximum-likelihood training for [`DnfModel`].

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::diffcore::{Matrix, Tape};
use crate::dnf::DnfModel;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Rows per chunk when evaluating a whole dataset.
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "adaptive-moment", alias = "adam")]
    Adam,
    #[serde(rename = "plain-gradient", alias = "sgd")]
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Cap on the infinity norm of each step's gradient.
    pub gradient_clip: f64,
    /// Held-out evaluation period in epochs.
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            gradient_clip: 5.0,
            eval_every: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Defaults for the synthetic embedding runs (50 epochs).
    pub fn for_embeddings() -> Self {
        TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning_rate must be > 0"));
        }
        if !(self.gradient_clip > 0.0) {
            return Err(Error::contract("gradient_clip must be > 0"));
        }
        if self.eval_every == 0 {
            return Err(Error::contract("eval_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean NLL of the mini-batches seen during the epoch.
    pub train_nll: f64,
    pub heldout_nll: Option<f64>,
    /// Mean L2 norm of the unclipped batch gradients.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (by held-out NLL), if any.
    pub best_epoch: Option<usize>,
}

impl TrainTrace {
    pub fn train_nll(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_nll).collect()
    }

    /// `epoch,train_nll,heldout_nll,grad_norm,seconds`; empty held-out
    /// cells for epochs without an evaluation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_nll,heldout_nll,grad_norm,seconds")?;
        for e in &self.epochs {
            let held = e.heldout_nll.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{:.6}", e.epoch, e.train_nll, held, e.grad_norm, e.seconds)?;
        }
        Ok(())
    }

    /// Same trace with wall-clock times zeroed, for determinism checks.
    pub fn without_timing(&self) -> TrainTrace {
        let mut t = self.clone();
        for e in &mut t.epochs {
            e.seconds = 0.0;
        }
        t
    }
}

/// First- and second-moment state for one parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn apply(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

enum Stepper {
    Adam(Adam),
    Sgd(f64),
}

impl Stepper {
    fn new(cfg: &TrainConfig, shapes: &[(usize, usize)]) -> Self {
        match cfg.optimizer {
            Optimizer::Adam => Stepper::Adam(Adam::new(shapes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)),
            Optimizer::Sgd => Stepper::Sgd(cfg.learning_rate),
        }
    }

    fn apply(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        match self {
            Stepper::Adam(a) => a.apply(params, grads),
            Stepper::Sgd(lr) => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *pi -= *lr * gi;
                    }
                }
            }
        }
    }
}

/// Loss and gradients of the mean NLL over `batch`, in
/// [`DnfModel::parameters`] order.
pub fn loss_and_gradients(model: &DnfModel, batch: &LabeledDataset) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let obj = model.objective(&tape, batch)?;
    let loss = obj.loss.item();
    let mut grads = tape.backward(obj.loss)?;
    Ok((loss, obj.params.iter().map(|&p| grads.take(p)).collect()))
}

/// Scales `grads` so that their joint infinity norm is at most `cap`.
pub fn clip_gradients(grads: &mut [Matrix], cap: f64) {
    let max = grads.iter().map(Matrix::max_abs).fold(0.0, f64::max);
    if max > cap {
        let s = cap / max;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

pub fn gradient_l2(grads: &[Matrix]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// One clipped optimizer step on `batch` with a fresh optimizer state;
/// returns `(loss before, clipped gradient L2 norm)`.
pub fn single_step(model: &mut DnfModel, batch: &LabeledDataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let shapes: Vec<_> = model.parameters().iter().map(|p| p.shape()).collect();
    let mut stepper = Stepper::new(cfg, &shapes);
    let (loss, mut grads) = loss_and_gradients(model, batch)?;
    clip_gradients(&mut grads, cfg.gradient_clip);
    let norm = gradient_l2(&grads);
    stepper.apply(model.parameters_mut(), &grads);
    Ok((loss, norm))
}

/// Mean NLL over `data` without touching the parameters.
pub fn evaluate_nll(model: &DnfModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("evaluate_nll of an empty dataset"));
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let part = data.subset(chunk)?;
        let lp = model.log_probs(&part)?;
        total += lp.iter().sum::<f64>();
    }
    Ok(-total / data.len() as f64)
}

fn check_data(model: &DnfModel, data: &LabeledDataset, what: &str) -> Result<()> {
    if data.dim() != model.dim() {
        return Err(Error::dim("train", model.dim(), format!("{} ({what})", data.dim())));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::InvalidClass {
            class: bad,
            num_classes: model.num_classes(),
        });
    }
    Ok(())
}

/// Trains `model` on `data` by mini-batch gradient descent on the NLL.
///
/// With a held-out set the parameters of the best held-out epoch are
/// returned; otherwise the final ones.
pub fn train(
    model: DnfModel,
    data: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(DnfModel, TrainTrace)> {
    cfg.validate()?;
    check_data(&model, data, "training data")?;
    if let Some(h) = heldout {
        check_data(&model, h, "held-out data")?;
    }
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((model, trace));
    }
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }

    let mut model = model;
    let shapes: Vec<_> = model.parameters().iter().map(|p| p.shape()).collect();
    let mut stepper = Stepper::new(cfg, &shapes);
    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best: Option<(f64, usize, DnfModel)> = None;
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.subset(chunk)?;
            let diverged = |reason: String| Error::Diverged { epoch, batch: b, reason };
            let (loss, mut grads) = match loss_and_gradients(&model, &batch) {
                Ok(v) => v,
                Err(e) if e.is_numeric() => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("loss = {loss}")));
            }
            let norm = gradient_l2(&grads);
            if !norm.is_finite() {
                return Err(diverged("non-finite gradient".into()));
            }
            clip_gradients(&mut grads, cfg.gradient_clip);
            stepper.apply(model.parameters_mut(), &grads);
            loss_sum += loss * chunk.len() as f64;
            norm_sum += norm;
            batches += 1;
        }

        let heldout_nll = match heldout {
            Some(h) if epoch % cfg.eval_every == 0 || epoch == cfg.epochs => {
                let v = evaluate_nll(&model, h).map_err(|e| Error::Diverged {
                    epoch,
                    batch: 0,
                    reason: format!("held-out evaluation: {e}"),
                })?;
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, epoch, model.clone()));
                }
                Some(v)
            }
            _ => None,
        };
        trace.epochs.push(EpochRecord {
            epoch,
            train_nll: loss_sum / data.len() as f64,
            heldout_nll,
            grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train nll {:.5}", loss_sum / data.len() as f64);
    }

    if let Some((_, epoch, m)) = best {
        trace.best_epoch = Some(epoch);
        model = m;
    }
    Ok((model, trace))
}
