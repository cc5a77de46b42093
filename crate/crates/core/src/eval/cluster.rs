use rand::Rng as _;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 20,
            max_iterations: 300,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centres: &Matrix) -> (usize, f64) {
    (0..centres.rows())
        .map(|c| (c, sq_dist(x, centres.row(c))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_centres(x: &Matrix, k: usize, r: &mut rng::Rng) -> Matrix {
    let n = x.rows();
    let mut centres = Matrix::zeros(k, x.cols());
    centres.row_mut(0).copy_from_slice(x.row(r.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centres.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random_range(0.0..total);
            d2.iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            r.random_range(0..n)
        };
        centres.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centres.row(c)));
        }
    }
    centres
}

fn lloyd(x: &Matrix, mut centres: Matrix, max_iterations: usize) -> (Vec<usize>, f64) {
    let (n, d) = x.shape();
    let k = centres.rows();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iterations {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(x.row(i), &centres);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their old centre
            if counts[c] > 0 {
                for (dst, s) in centres.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centres.row(assign[i]))).sum();
    (assign, inertia)
}

/// k-means++ seeding followed by Lloyd iterations; the restart with the
/// lowest inertia wins.
pub fn kmeans(x: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::contract("k must be >= 1"));
    }
    if x.rows() < k {
        return Err(Error::contract(format!("{} points cannot form {k} clusters", x.rows())));
    }
    x.ensure_finite("k-means input")?;
    let mut r = rng::stream(cfg.seed, streams::KMEANS);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let centres = seed_centres(x, k, &mut r);
        let (assign, inertia) = lloyd(x, centres, cfg.max_iterations);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((assign, inertia));
        }
    }
    Ok(best.expect("at least one restart").0)
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two partitions of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("adjusted_rand_index", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("ARI needs at least 2 points"));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c as f64)).sum();
    let rows: f64 = (0..ka).map(|i| choose2(table[i * kb..(i + 1) * kb].iter().sum::<usize>() as f64)).sum();
    let cols: f64 = (0..kb).map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum::<usize>() as f64)).sum();
    let expected = rows * cols / choose2(n as f64);
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        // both partitions trivial (all singletons or one block)
        return Ok(if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// k-means with `k` = number of distinct labels, scored by ARI.
pub fn cluster_recovery(codes: &Matrix, labels: &[usize], cfg: &KMeansConfig) -> Result<f64> {
    if codes.rows() != labels.len() {
        return Err(Error::dim("cluster_recovery", codes.rows(), labels.len()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let k = distinct.len();
    if k < 2 {
        return Err(Error::contract("cluster recovery needs at least 2 distinct labels"));
    }
    let assign = kmeans(codes, k, cfg)?;
    adjusted_rand_index(&assign, labels)
}
