use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of same-class (genuine) and different-class (impostor) trials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl TrialScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        let set = TrialScoreSet { genuine, impostor };
        set.check()?;
        Ok(set)
    }

    pub fn push(&mut self, score: f64, genuine: bool) {
        if genuine {
            self.genuine.push(score);
        } else {
            self.impostor.push(score);
        }
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::contract("both genuine and impostor scores are required"));
        }
        if !self.genuine.iter().chain(&self.impostor).all(|s| s.is_finite()) {
            return Err(Error::non_finite("trial scores"));
        }
        Ok(())
    }

    /// The same trials with the roles of the two sides exchanged.
    pub fn swapped(&self) -> TrialScoreSet {
        TrialScoreSet {
            genuine: self.impostor.clone(),
            impostor: self.genuine.clone(),
        }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Equal error rate.
///
/// Operating points are taken at every distinct score and at `+inf`,
/// with `FAR(t) = #{impostor >= t} / N_i` and `FRR(t) = #{genuine < t} / N_g`.
/// The rate is read off where `FAR - FRR` first drops to zero or below,
/// interpolating linearly from the previous operating point.
pub fn eer(scores: &TrialScoreSet) -> Result<f64> {
    scores.check()?;
    let gen = sorted(&scores.genuine);
    let imp = sorted(&scores.impostor);
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let mut thresholds: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let point = |t: f64| {
        let below_gen = gen.partition_point(|&s| s < t) as f64;
        let below_imp = imp.partition_point(|&s| s < t) as f64;
        ((ni - below_imp) / ni, below_gen / ng)
    };
    let (mut far0, mut frr0) = point(thresholds[0]);
    for &t in &thresholds[1..] {
        let (far, frr) = point(t);
        let (d0, d1) = (far0 - frr0, far - frr);
        if d1 <= 0.0 {
            let alpha = d0 / (d0 - d1);
            return Ok(far0 + alpha * (far - far0));
        }
        far0 = far;
        frr0 = frr;
    }
    // at +inf FAR = 0 <= FRR = 1, so the loop always returns
    unreachable!("operating points always cross")
}

/// Probability that a random genuine score exceeds a random impostor
/// score, ties counting one half.
pub fn auc(scores: &TrialScoreSet) -> Result<f64> {
    scores.check()?;
    let imp = sorted(&scores.impostor);
    let mut wins = 0.0;
    for &g in &scores.genuine {
        let below = imp.partition_point(|&s| s < g) as f64;
        let not_above = imp.partition_point(|&s| s <= g) as f64;
        wins += below + 0.5 * (not_above - below);
    }
    Ok(wins / (scores.genuine.len() as f64 * imp.len() as f64))
}
