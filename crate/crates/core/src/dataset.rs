//! Labeled feature matrices, seeded splits and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, TapError};

/// Row-major feature matrix with zero-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(TapError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if let Some((i, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TapError::NonFinite(format!("feature matrix at {i:?}")));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(TapError::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { x, y, num_classes })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>, num_classes: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(TapError::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let x = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| TapError::Data(e.to_string()))?;
        Self::new(x, y, num_classes)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.x.row(i).to_vec()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Shuffles and cuts into train / validation / test parts.
    pub fn split<R: Rng>(&self, fractions: [f64; 3], rng: &mut R) -> Result<Split> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| !(f > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(TapError::Config(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (fractions[0] * n as f64).round() as usize;
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        Ok(Split {
            train: self.subset(&idx[..n_train]),
            validation: self.subset(&idx[n_train..n_train + n_val]),
            test: self.subset(&idx[n_train + n_val..]),
            test_rows: idx[n_train + n_val..].to_vec(),
        })
    }

    /// Hex SHA-256 over the little-endian bytes of features and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        for &c in &self.y {
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Reads the named feature columns and a label column from a CSV file
    /// with a header row. Labels are matched against `class_labels`.
    pub fn from_csv(
        path: &Path,
        feature_columns: &[String],
        label_column: &str,
        class_labels: &[String],
    ) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let position = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| TapError::Data(format!("column '{name}' not found in {}", path.display())))
        };
        let cols: Vec<usize> = feature_columns
            .iter()
            .map(|c| position(c))
            .collect::<Result<_>>()?;
        let label_col = position(label_column)?;
        let label_index: HashMap<&str, usize> = class_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();

        let mut flat = Vec::new();
        let mut y = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            for &c in &cols {
                let raw = record.get(c).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| {
                    TapError::Data(format!("row {}: '{raw}' is not a number", line + 2))
                })?;
                flat.push(v);
            }
            let raw = record.get(label_col).unwrap_or("").trim();
            let label = label_index.get(raw).copied().ok_or_else(|| {
                TapError::Data(format!("row {}: unknown class label '{raw}'", line + 2))
            })?;
            y.push(label);
        }
        let x = Array2::from_shape_vec((y.len(), cols.len()), flat)
            .map_err(|e| TapError::Data(e.to_string()))?;
        Self::new(x, y, class_labels.len())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Row of the source dataset behind each test row.
    pub test_rows: Vec<usize>,
}
