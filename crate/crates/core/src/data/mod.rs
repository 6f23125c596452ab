//! Datasets, deterministic splitting, horizontal partitioners, vertical
//! entity alignment and synthetic data generators.

mod align;
mod partition;
mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Targets;
use crate::numkit::{DenseMatrix, SeededRng};
use crate::streams;

pub use align::{align_vertical, LabelOwner};
pub use partition::{
    partition_iid, partition_label_skew, partition_quantity_skew, PartitionScheme, PartitionSpec,
    QuantityMode,
};
pub use synth::{synth_blobs, synth_regression, synth_vertical_blobs};

/// Sample labels: class indices for classification, reals for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Reals(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Labels::Classes(v) => v.iter().max().map(|m| m + 1),
            Labels::Reals(_) => None,
        }
    }

    pub fn class_slice(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes(v) => Some(v),
            Labels::Reals(_) => None,
        }
    }

    fn gather(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(idx.iter().map(|&i| v[i]).collect()),
            Labels::Reals(v) => Labels::Reals(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// In-memory dataset. Keys are only present for vertically partitioned data
/// that must be aligned by entity.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: DenseMatrix,
    pub labels: Labels,
    pub keys: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: DenseMatrix,
        labels: Labels,
        keys: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(k) = &keys {
            if k.len() != features.rows() {
                return Err(Error::shape("key count does not match rows"));
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Materializes a row subset (partition shard, batch, split).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            features: self.features.gather_rows(idx)?,
            labels: self.labels.gather(idx),
            keys: self
                .keys
                .as_ref()
                .map(|k| idx.iter().map(|&i| k[i].clone()).collect()),
        })
    }

    /// Batch view as (features, training targets).
    pub fn gather_batch(&self, idx: &[usize]) -> Result<(DenseMatrix, Targets)> {
        let x = self.features.gather_rows(idx)?;
        let t = match &self.labels {
            Labels::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Labels::Reals(v) => {
                let col: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
                Targets::Reals(DenseMatrix::from_vec(idx.len(), 1, col)?)
            }
        };
        Ok((x, t))
    }

    pub fn all_targets(&self) -> Result<(DenseMatrix, Targets)> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.gather_batch(&idx)
    }
}

/// Deterministic shuffled three-way split: 83.33% train, 8.33% test,
/// remainder validation. Sizes use the floor rule with the leftover going to
/// validation.
pub fn split_train_test_val(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = ds.len();
    if n < 12 {
        return Err(Error::invalid(format!(
            "need at least 12 samples to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::derive(seed, &[streams::SPLIT]);
    rng.shuffle(&mut idx);
    let n_train = ((n as f64) * 0.8333).floor() as usize;
    let n_test = ((n as f64) * 0.0833).floor() as usize;
    let train = ds.subset(&idx[..n_train])?;
    let test = ds.subset(&idx[n_train..n_train + n_test])?;
    let val = ds.subset(&idx[n_train + n_test..])?;
    Ok((train, test, val))
}

/// Loads a CSV dataset: header row, last column is the label, and an optional
/// column named `key` carries the vertical join key.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("bad csv header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::invalid("csv needs at least one feature and a label"));
    }
    let key_col = headers.iter().position(|h| h == "key");
    let label_col = headers.len() - 1;
    if key_col == Some(label_col) {
        return Err(Error::invalid("the label column cannot be the key"));
    }

    let mut keys: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<f64> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid(format!("csv row {line}: {e}")))?;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (col, field) in record.iter().enumerate() {
            if Some(col) == key_col {
                keys.push(field.to_string());
                continue;
            }
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(format!("csv row {line} col {col}: not a number: {field:?}"))
            })?;
            if col == label_col {
                raw_labels.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("csv has no data rows"));
    }

    let integral = raw_labels
        .iter()
        .all(|v| v.fract() == 0.0 && *v >= 0.0 && *v < 1e6);
    let labels = if integral {
        Labels::Classes(raw_labels.iter().map(|&v| v as usize).collect())
    } else {
        Labels::Reals(raw_labels)
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(
        name,
        DenseMatrix::from_rows(&rows)?,
        labels,
        if key_col.is_some() { Some(keys) } else { None },
    )
}

/// Writes a dataset in the loader's format.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::invalid(format!("cannot write csv: {e}")))?;
    let mut header: Vec<String> = Vec::new();
    if ds.keys.is_some() {
        header.push("key".into());
    }
    for i in 0..ds.dim() {
        header.push(format!("f{i}"));
    }
    header.push("label".into());
    writer
        .write_record(&header)
        .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
    for r in 0..ds.len() {
        let mut record: Vec<String> = Vec::new();
        if let Some(keys) = &ds.keys {
            record.push(keys[r].clone());
        }
        for v in ds.features.row(r) {
            record.push(format!("{v}"));
        }
        match &ds.labels {
            Labels::Classes(c) => record.push(format!("{}", c[r])),
            Labels::Reals(v) => record.push(format!("{}", v[r])),
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
    Ok(())
}

pub(crate) fn assert_exact_partition(lists: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut total = 0usize;
    for list in lists {
        total += list.len();
        seen.extend(list.iter().copied());
    }
    if total != n || seen.len() != n || seen.last().map(|&m| m >= n).unwrap_or(false) {
        return Err(Error::runtime(format!(
            "partition is not exact: {} indices over {} samples ({} unique)",
            total,
            n,
            seen.len()
        )));
    }
    Ok(())
}
