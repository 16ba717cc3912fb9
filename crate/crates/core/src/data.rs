//! Labelled datasets, synthetic Gaussian blobs, and the CSV format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidDataset(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    classes: usize,
    dim: usize,
}

/// Borrowed rows of one split.
#[derive(Debug, Clone)]
pub struct Rows<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl Rows<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        splits: Vec<Split>,
        classes: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() || labels.len() != splits.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows, {} labels, {} split tags",
                features.len(),
                labels.len(),
                splits.len()
            )));
        }
        if classes == 0 {
            return Err(Error::InvalidDataset("no classes".into()));
        }
        let dim = features.first().map_or(0, Vec::len);
        for (i, (row, &label)) in features.iter().zip(&labels).enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if label >= classes {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has label {label} ≥ {classes} classes"
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("row {i} has a non-finite feature")));
            }
        }
        Ok(Self {
            features,
            labels,
            splits,
            classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Rows tagged `split`; errors when there are none.
    pub fn split(&self, split: Split) -> Result<Rows<'_>> {
        let mut rows = Rows {
            features: Vec::new(),
            labels: Vec::new(),
        };
        for ((x, &y), &s) in self.features.iter().zip(&self.labels).zip(&self.splits) {
            if s == split {
                rows.features.push(x);
                rows.labels.push(y);
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidDataset(format!("split {split} is empty")));
        }
        Ok(rows)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header)?;
        for ((x, y), s) in self.features.iter().zip(&self.labels).zip(&self.splits) {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            rec.push(s.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV format; the class count is one more than the largest
    /// label present.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let n = header.len();
        if n < 2 || &header[n - 2] != "label" || &header[n - 1] != "split" {
            return Err(Error::InvalidDataset(
                "header must be f0,...,f{n-1},label,split".into(),
            ));
        }
        for (j, name) in header.iter().take(n - 2).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::InvalidDataset(format!(
                    "column {j} is {name:?}, expected f{j}"
                )));
            }
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::InvalidDataset(format!("row {i}: bad {what}"));
            let x = rec
                .iter()
                .take(n - 2)
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad("feature")))
                .collect::<Result<Vec<_>>>()?;
            features.push(x);
            labels.push(rec[n - 2].trim().parse::<usize>().map_err(|_| bad("label"))?);
            splits.push(rec[n - 1].trim().parse::<Split>()?);
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, labels, splits, classes)
    }
}

/// Center of class `c`: its base-`m` digits spread over the coordinates,
/// scaled by `spacing`, where `m^dim ≥ classes`.
fn lattice_center(c: usize, classes: usize, dim: usize, spacing: f64) -> Vec<f64> {
    let mut base = 2usize;
    while (base as f64).powi(dim as i32) < classes as f64 {
        base += 1;
    }
    let mut center = vec![0.0; dim];
    let mut rest = c;
    for v in center.iter_mut() {
        *v = (rest % base) as f64 * spacing;
        rest /= base;
    }
    center
}

/// Isotropic Gaussian clusters, one per class, `n_per_class` points each.
///
/// Centers sit on an integer lattice scaled to `max(6·spread, 1)`, so
/// distinct centers are at least `6·spread` apart. Rows are shuffled and
/// split 64/16/20 into train/val/test.
pub fn gen_blobs(
    n_per_class: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 || dim == 0 {
        return Err(Error::InvalidDataset("sizes must be positive".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidDataset(format!("bad spread {spread}")));
    }
    let spacing = (6.0 * spread).max(1.0);
    let mut g = RandomSource::for_trial(seed, 0, purpose::DATA).generator();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n_per_class * classes);
    for c in 0..classes {
        let center = lattice_center(c, classes, dim, spacing);
        for _ in 0..n_per_class {
            let noise = g.gaussian_vec(spread, dim);
            rows.push((center.iter().zip(noise).map(|(m, z)| m + z).collect(), c));
        }
    }
    g.shuffle(&mut rows);
    let total = rows.len();
    let n_train = total * 64 / 100;
    let n_val = total * 16 / 100;
    let splits = (0..total)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    let (features, labels) = rows.into_iter().unzip();
    Dataset::new(features, labels, splits, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(gen_blobs(50, 2, 2, 0.5, 7).unwrap(), gen_blobs(50, 2, 2, 0.5, 7).unwrap());
        assert_ne!(gen_blobs(50, 2, 2, 0.5, 7).unwrap(), gen_blobs(50, 2, 2, 0.5, 8).unwrap());
    }

    #[test]
    fn construction() {
        let d = gen_blobs(200, 3, 4, 0.3, 1).unwrap();
        assert_eq!(d.len(), 600);
        assert_eq!(d.label_histogram(), vec![200, 200, 200]);
        assert_eq!(d.split(Split::Train).unwrap().len(), 384);
        assert_eq!(d.split(Split::Val).unwrap().len(), 96);
        assert_eq!(d.split(Split::Test).unwrap().len(), 120);
    }

    #[test]
    fn centers_are_separated() {
        for (classes, dim) in [(2, 8), (3, 2), (5, 2), (9, 3)] {
            let cs: Vec<_> = (0..classes).map(|c| lattice_center(c, classes, dim, 3.0)).collect();
            for i in 0..classes {
                for j in 0..i {
                    let d: f64 = cs[i].iter().zip(&cs[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(d >= 3.0);
                }
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let d = gen_blobs(20, 2, 3, 0.5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,f2,label,split\n"));
        assert_eq!(Dataset::read_csv(&path).unwrap(), d);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(Dataset::new(vec![vec![1.0]], vec![2], vec![Split::Train], 2).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0], vec![Split::Train], 2).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 0], vec![Split::Train; 2], 1).is_err());
        let d = Dataset::new(vec![vec![1.0]], vec![0], vec![Split::Train], 1).unwrap();
        assert!(d.split(Split::Val).is_err());
    }
}
