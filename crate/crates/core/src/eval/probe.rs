use crate::dataset::LabeledDataset;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub ridge: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            ridge: 1e-3,
            epochs: 500,
            learning_rate: 0.5,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Matrix,
    bias: Vec<f64>,
}

fn softmax_rows(logits: &mut Matrix) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

impl LinearProbe {
    /// Full-batch gradient descent on mean cross-entropy plus
    /// `ridge/2 |W|^2`.
    pub fn fit(data: &LabeledDataset, num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = data.features().shape();
        if n == 0 {
            return Err(Error::contract("probe needs training points"));
        }
        let mean = data.features().column_means();
        let mut scale = vec![0.0; d];
        for row in data.features().row_iter() {
            for k in 0..d {
                scale[k] += (row[k] - mean[k]).powi(2) / n as f64;
            }
        }
        let scale: Vec<f64> = scale.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        let mut probe = LinearProbe {
            mean,
            scale,
            weights: Matrix::zeros(d, num_classes),
            bias: vec![0.0; num_classes],
        };
        let x = probe.standardize(data.features());
        for _ in 0..cfg.epochs {
            let mut p = probe.logits_std(&x)?;
            softmax_rows(&mut p);
            for (i, &y) in data.labels().iter().enumerate() {
                p[(i, y)] -= 1.0;
            }
            let gw = x.t_matmul(&p)?.scale(1.0 / n as f64).add(&probe.weights.scale(cfg.ridge))?;
            let gb = p.sum_rows().scale(1.0 / n as f64);
            for (w, g) in probe.weights.data_mut().iter_mut().zip(gw.data()) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in probe.bias.iter_mut().zip(gb.data()) {
                *b -= cfg.learning_rate * g;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, k| (x[(i, k)] - self.mean[k]) / self.scale[k])
    }

    fn logits_std(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weights)?.add_row_broadcast(&Matrix::row_vector(&self.bias))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.mean.len() {
            return Err(Error::dim("LinearProbe::predict", self.mean.len(), x.cols()));
        }
        let logits = self.logits_std(&self.standardize(x))?;
        Ok(logits
            .row_iter()
            .map(|row| (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
            .collect())
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let pred = self.predict(data.features())?;
        let hits = pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }
}

/// Held-out accuracy of a linear probe predicting `labels` from `codes`
/// after a seeded stratified 80/20 split.
pub fn residual_leakage(codes: &Matrix, labels: &[usize], cfg: &ProbeConfig) -> Result<f64> {
    let data = LabeledDataset::new(codes.clone(), labels.to_vec())?;
    let k = data.num_classes();
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::contract("probe needs at least 2 classes"));
    }
    let (train, test) = data.split(cfg.test_fraction, &mut rng::stream(cfg.seed, streams::SPLIT))?;
    let counts = train.class_counts();
    for (y, &total) in data.class_counts().iter().enumerate() {
        if total > 0 && counts.get(y).copied().unwrap_or(0) == 0 {
            return Err(Error::contract(format!("class {y} is absent from the probe training split")));
        }
    }
    if test.is_empty() {
        return Err(Error::contract("probe test split is empty"));
    }
    LinearProbe::fit(&train, k, cfg)?.accuracy(&test)
}

/// Accuracy of always predicting the most frequent class.
pub fn chance_level(labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    counts.into_iter().max().unwrap_or(0) as f64 / labels.len().max(1) as f64
}
