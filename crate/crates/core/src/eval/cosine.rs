use crate::diffcore::Matrix;
use crate::error::{Error, Result};

use super::TrialScoreSet;

/// Cosine similarity of two code vectors.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_score", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine score of a zero vector"));
    }
    Ok(dot / (na * nb))
}

/// Cosine scores after subtracting `centre` from both sides.
pub fn score_trials_cosine(codes: &Matrix, centre: &[f64], pairs: &[(usize, usize, bool)]) -> Result<TrialScoreSet> {
    if centre.len() != codes.cols() {
        return Err(Error::dim("score_trials_cosine", codes.cols(), centre.len()));
    }
    let shift = |i: usize| -> Vec<f64> { codes.row(i).iter().zip(centre).map(|(x, c)| x - c).collect() };
    let mut set = TrialScoreSet::default();
    for &(a, b, genuine) in pairs {
        set.push(cosine_score(&shift(a), &shift(b))?, genuine);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::eer;
    use crate::rng;

    #[test]
    fn hand_values() {
        assert!((cosine_score(&[1.0, 0.0], &[0.0, 2.0]).unwrap()).abs() < 1e-15);
        assert!((cosine_score(&[1.0, 1.0], &[3.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_score(&[1.0, 0.0], &[-1.0, 1.0]).unwrap() + 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_score(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn scale_invariant_and_symmetric() {
        let mut r = rng::stream(1, 0);
        for _ in 0..20 {
            let a = rng::normal_matrix(&mut r, 1, 5, 1.0).into_vec();
            let b = rng::normal_matrix(&mut r, 1, 5, 1.0).into_vec();
            let sa: Vec<f64> = a.iter().map(|v| 3.5 * v).collect();
            let s = cosine_score(&a, &b).unwrap();
            assert!((s - cosine_score(&b, &a).unwrap()).abs() < 1e-15);
            assert!((s - cosine_score(&sa, &b).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn random_trials_are_at_chance() {
        let mut r = rng::stream(2, 0);
        let codes = rng::normal_matrix(&mut r, 2000, 4, 1.0);
        let pairs: Vec<(usize, usize, bool)> = (0..1000).map(|i| (2 * i, 2 * i + 1, i % 2 == 0)).collect();
        let e = eer(&score_trials_cosine(&codes, &[0.0; 4], &pairs).unwrap()).unwrap();
        assert!((e - 0.5).abs() < 0.05, "{e}");
    }
}
