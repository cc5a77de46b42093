//! Labeled observation sets and their two on-disk forms.
//!
//! `DNFV1` binary layout, all integers little-endian:
//!
//! ```text
//! b"DNFV" | u8 version = 1 | u32 dim | u32 count | count x (u32 class, dim x f32)
//! ```
//!
//! CSV layout: header `label,f0,f1,...`, then one record per line.

use std::io::{BufRead, Read, Write};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const DNFV_MAGIC: &[u8; 4] = b"DNFV";
pub const DNFV_VERSION: u8 = 1;

/// Observation vectors (one per row) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim("LabeledDataset::new", features.rows(), labels.len()));
        }
        features.ensure_finite("dataset features")?;
        Ok(LabeledDataset { features, labels })
    }

    /// Dataset with every point in class 0.
    pub fn unlabeled(features: Matrix) -> Result<Self> {
        let n = features.rows();
        LabeledDataset::new(features, vec![0; n])
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// One more than the largest label; 0 for an empty set.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(LabeledDataset { features, labels })
    }

    /// Stratified random split; each class sends `round(test_fraction * n_c)`
    /// of its points to the second set. Both sets keep the original order.
    pub fn split(&self, test_fraction: f64, rng: &mut crate::rng::Rng) -> Result<(LabeledDataset, LabeledDataset)> {
        use rand::seq::SliceRandom;
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::contract(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let mut is_test = vec![false; self.len()];
        for mut group in self.class_indices() {
            group.shuffle(rng);
            let k = (test_fraction * group.len() as f64).round() as usize;
            for &i in &group[..k] {
                is_test[i] = true;
            }
        }
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| is_test[i]);
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// Same labels, new feature matrix (e.g. codes produced by a model).
    pub fn with_features(&self, features: Matrix) -> Result<LabeledDataset> {
        LabeledDataset::new(features, self.labels.clone())
    }

    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let features = Matrix::vcat(&[&self.features, &other.features])?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset::new(features, labels)
    }

    /// Per-class means as a `num_classes x dim` matrix.
    pub fn class_means(&self) -> Matrix {
        let k = self.num_classes();
        let mut sums = Matrix::zeros(k, self.dim());
        for (i, &y) in self.labels.iter().enumerate() {
            for (s, v) in sums.row_mut(y).iter_mut().zip(self.features.row(i)) {
                *s += v;
            }
        }
        let counts = self.class_counts();
        for (y, &c) in counts.iter().enumerate() {
            let c = c.max(1) as f64;
            for s in sums.row_mut(y) {
                *s /= c;
            }
        }
        sums
    }

    pub fn write_dnfv1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DNFV_MAGIC)?;
        w.write_all(&[DNFV_VERSION])?;
        w.write_all(&u32_of(self.dim(), "dim")?.to_le_bytes())?;
        w.write_all(&u32_of(self.len(), "record count")?.to_le_bytes())?;
        for (i, &y) in self.labels.iter().enumerate() {
            w.write_all(&u32_of(y, "class id")?.to_le_bytes())?;
            for &v in self.features.row(i) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dnfv1<R: Read>(mut r: R) -> Result<LabeledDataset> {
        let bad = |reason: &str| Error::Format {
            format: "DNFV1",
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic[..4] != DNFV_MAGIC {
            return Err(bad("bad magic"));
        }
        if magic[4] != DNFV_VERSION {
            return Err(bad(&format!("unsupported version {}", magic[4])));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let dim = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let count = u32::from_le_bytes(word) as usize;
        let mut labels = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count.saturating_mul(dim));
        for i in 0..count {
            r.read_exact(&mut word).map_err(|_| bad(&format!("truncated at record {i}")))?;
            labels.push(u32::from_le_bytes(word) as usize);
            for _ in 0..dim {
                r.read_exact(&mut word).map_err(|_| bad(&format!("truncated at record {i}")))?;
                data.push(f32::from_le_bytes(word) as f64);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after last record"));
        }
        LabeledDataset::new(Matrix::from_vec(count, dim, data)?, labels)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.dim()).map(|j| format!("f{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, &y) in self.labels.iter().enumerate() {
            let mut line = y.to_string();
            for v in self.features.row(i) {
                line.push(',');
                // `{}` on f64 is the shortest representation that round-trips
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<LabeledDataset> {
        let bad = |line: usize, reason: String| Error::Format {
            format: "CSV",
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"label") {
            return Err(bad(1, "header must start with `label`".into()));
        }
        for (j, c) in cols.iter().skip(1).enumerate() {
            if *c != format!("f{j}") {
                return Err(bad(1, format!("expected column f{j}, found `{c}`")));
            }
        }
        let dim = cols.len() - 1;
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let line_no = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(bad(line_no, format!("expected {} fields, found {}", dim + 1, fields.len())));
            }
            labels.push(fields[0].parse::<usize>().map_err(|e| bad(line_no, e.to_string()))?);
            for f in &fields[1..] {
                data.push(f.parse::<f64>().map_err(|e| bad(line_no, e.to_string()))?);
            }
        }
        let n = labels.len();
        LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels)
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format {
        format: "DNFV1",
        reason: format!("{what} {v} does not fit in u32"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> LabeledDataset {
        let x = Matrix::from_rows(&[[0.5, -1.25], [2.0, 3.0], [1e-3, 7.5]]).unwrap();
        LabeledDataset::new(x, vec![1, 0, 1]).unwrap()
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let x = Matrix::from_fn(100, 1, |i, _| i as f64);
        let labels = (0..100).map(|i| usize::from(i >= 60)).collect();
        let data = LabeledDataset::new(x, labels).unwrap();
        let (train, test) = data.split(0.2, &mut crate::rng::stream(1, 5)).unwrap();
        assert_eq!(test.class_counts(), vec![12, 8]);
        assert_eq!(train.len(), 80);
        let mut all: Vec<f64> = train.features().data().iter().chain(test.features().data()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert!(data.split(1.5, &mut crate::rng::stream(1, 5)).is_err());
    }

    #[test]
    fn dnfv1_layout_is_exact() {
        let mut buf = Vec::new();
        sample().write_dnfv1(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"DNFV\x01");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &3u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1u32.to_le_bytes());
        assert_eq!(&buf[17..21], &0.5f32.to_le_bytes());
        assert_eq!(buf.len(), 13 + 3 * (4 + 2 * 4));
    }

    #[test]
    fn dnfv1_rejects_bad_input() {
        let mut buf = Vec::new();
        sample().write_dnfv1(&mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(LabeledDataset::read_dnfv1(&wrong[..]).is_err());
        assert!(LabeledDataset::read_dnfv1(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(LabeledDataset::read_dnfv1(&long[..]).is_err());
    }

    #[test]
    fn csv_header_and_parse_errors() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,f0,f1\n1,0.5,-1.25\n"));
        assert!(LabeledDataset::read_csv("y,f0\n1,2\n".as_bytes()).is_err());
        assert!(LabeledDataset::read_csv("label,f0\n1,2,3\n".as_bytes()).is_err());
        assert!(LabeledDataset::read_csv("label,f0\nx,2\n".as_bytes()).is_err());
    }

    #[test]
    fn class_means_and_counts() {
        let d = sample();
        assert_eq!(d.class_counts(), vec![1, 2]);
        let m = d.class_means();
        assert!((m[(1, 0)] - 0.2505).abs() < 1e-12);
        assert_eq!(m.row(0), &[2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec((0usize..5, prop::collection::vec(-1e6f64..1e6, 3)), 0..20)) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
            let x = if feats.is_empty() { Matrix::zeros(0, 3) } else { Matrix::from_rows(&feats).unwrap() };
            let d = LabeledDataset::new(x, labels).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = LabeledDataset::read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back.labels(), d.labels());
            prop_assert_eq!(back.features().data(), d.features().data());
        }

        #[test]
        fn dnfv1_round_trip_preserves_f32_values(rows in prop::collection::vec((0usize..5, prop::collection::vec(-1e3f32..1e3, 2)), 0..20)) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.1.iter().map(|&v| v as f64).collect()).collect();
            let x = if feats.is_empty() { Matrix::zeros(0, 2) } else { Matrix::from_rows(&feats).unwrap() };
            let d = LabeledDataset::new(x, labels).unwrap();
            let mut buf = Vec::new();
            d.write_dnfv1(&mut buf).unwrap();
            let back = LabeledDataset::read_dnfv1(&buf[..]).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
