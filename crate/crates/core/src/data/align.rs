use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;

use super::{Dataset, Labels};

/// Which side's label wins when a row exists in both datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOwner {
    Left,
    Right,
}

/// Outer-joins two vertically partitioned datasets on their entity keys.
///
/// The result has `d_left + d_right` feature columns; rows missing on one
/// side get zeros for that side's features. Rows are ordered left-side keys
/// first (in their original order), then right-only keys. Duplicate keys
/// within one dataset are rejected since alignment must be one-to-one.
pub fn align_vertical(left: &Dataset, right: &Dataset, owner: LabelOwner) -> Result<Dataset> {
    let lk = left
        .keys
        .as_ref()
        .ok_or_else(|| Error::invalid("left dataset has no join keys"))?;
    let rk = right
        .keys
        .as_ref()
        .ok_or_else(|| Error::invalid("right dataset has no join keys"))?;

    let mut left_by_key: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, k) in lk.iter().enumerate() {
        if left_by_key.insert(k.as_str(), i).is_some() {
            return Err(Error::invalid(format!(
                "duplicate key {k:?} in {}",
                left.name
            )));
        }
    }
    let mut right_by_key: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, k) in rk.iter().enumerate() {
        if right_by_key.insert(k.as_str(), i).is_some() {
            return Err(Error::invalid(format!(
                "duplicate key {k:?} in {}",
                right.name
            )));
        }
    }

    let d_left = left.dim();
    let d_right = right.dim();
    let mut keys: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<(Option<usize>, Option<usize>)> = Vec::new(); // (left idx, right idx)

    for (i, k) in lk.iter().enumerate() {
        let mut row = vec![0.0; d_left + d_right];
        row[..d_left].copy_from_slice(left.features.row(i));
        let rj = right_by_key.get(k.as_str()).copied();
        if let Some(j) = rj {
            row[d_left..].copy_from_slice(right.features.row(j));
        }
        keys.push(k.clone());
        rows.push(row);
        labels.push((Some(i), rj));
    }
    let left_keys: BTreeSet<&str> = lk.iter().map(String::as_str).collect();
    for (j, k) in rk.iter().enumerate() {
        if left_keys.contains(k.as_str()) {
            continue;
        }
        let mut row = vec![0.0; d_left + d_right];
        row[d_left..].copy_from_slice(right.features.row(j));
        keys.push(k.clone());
        rows.push(row);
        labels.push((None, Some(j)));
    }

    let label_of = |li: Option<usize>, ri: Option<usize>| -> Result<f64> {
        let fetch = |ds: &Dataset, i: usize| match &ds.labels {
            Labels::Classes(v) => v[i] as f64,
            Labels::Reals(v) => v[i],
        };
        let (primary, secondary) = match owner {
            LabelOwner::Left => (li.map(|i| fetch(left, i)), ri.map(|i| fetch(right, i))),
            LabelOwner::Right => (ri.map(|i| fetch(right, i)), li.map(|i| fetch(left, i))),
        };
        primary
            .or(secondary)
            .ok_or_else(|| Error::runtime("aligned row exists on neither side"))
    };

    let raw: Vec<f64> = labels
        .iter()
        .map(|&(l, r)| label_of(l, r))
        .collect::<Result<_>>()?;
    let classes_on_owner = match owner {
        LabelOwner::Left => matches!(left.labels, Labels::Classes(_)),
        LabelOwner::Right => matches!(right.labels, Labels::Classes(_)),
    };
    let merged_labels = if classes_on_owner {
        Labels::Classes(raw.iter().map(|&v| v as usize).collect())
    } else {
        Labels::Reals(raw)
    };

    Dataset::new(
        format!("{}+{}", left.name, right.name),
        DenseMatrix::from_rows(&rows)?,
        merged_labels,
        Some(keys),
    )
}
