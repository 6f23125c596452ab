use crate::error::Result;
use crate::numkit::{DenseMatrix, SeededRng};
use crate::streams;

use super::{Dataset, Labels};

/// Gaussian blob classification data: one spherical cluster per class with
/// centers scaled by `separation` and within-cluster noise `noise`. Labels
/// are balanced (round-robin) before shuffling.
pub fn synth_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = SeededRng::derive(seed, &[streams::DATA]);
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let c: Vec<f64> = (0..d).map(|_| rng.normal() * separation).collect();
        centers.push(c);
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let mut rows = vec![vec![0.0; d]; n];
    let mut labels = vec![0usize; n];
    for (slot, &i) in order.iter().enumerate() {
        let class = slot % classes;
        labels[i] = class;
        for (j, x) in rows[i].iter_mut().enumerate() {
            *x = centers[class][j] + rng.normal() * noise;
        }
    }
    Dataset::new(
        "blobs",
        DenseMatrix::from_rows(&rows)?,
        Labels::Classes(labels),
        None,
    )
}

/// Linear regression data `y = x . w* + noise`; returns the generating
/// weights so tests can check recovery.
pub fn synth_regression(n: usize, d: usize, noise: f64, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    let mut rng = SeededRng::derive(seed, &[streams::DATA]);
    let w_star: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let y: f64 = x.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>() + rng.normal() * noise;
        rows.push(x);
        ys.push(y);
    }
    let ds = Dataset::new(
        "regression",
        DenseMatrix::from_rows(&rows)?,
        Labels::Reals(ys),
        None,
    )?;
    Ok((ds, w_star))
}

/// Blob data split vertically into two parties that share entity keys.
/// `overlap` is the fraction of rows present on both sides; the rest are
/// split between the parties so alignment has something to zero-pad.
pub fn synth_vertical_blobs(
    n: usize,
    d_left: usize,
    d_right: usize,
    classes: usize,
    separation: f64,
    noise: f64,
    overlap: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let full = synth_blobs(n, d_left + d_right, classes, separation, noise, seed)?;
    let keys: Vec<String> = (0..n).map(|i| format!("e{i:06}")).collect();
    let n_shared = ((n as f64) * overlap.clamp(0.0, 1.0)).round() as usize;
    let leftover = n - n_shared;
    let left_only_end = n_shared + leftover / 2;

    let mut left_rows = Vec::new();
    let mut left_keys = Vec::new();
    let mut left_labels = Vec::new();
    let mut right_rows = Vec::new();
    let mut right_keys = Vec::new();
    let mut right_labels = Vec::new();
    let class_of = match &full.labels {
        Labels::Classes(c) => c.clone(),
        _ => unreachable!(),
    };
    for i in 0..n {
        let row = full.features.row(i);
        let on_left = i < left_only_end;
        let on_right = i < n_shared || i >= left_only_end;
        if on_left {
            left_rows.push(row[..d_left].to_vec());
            left_keys.push(keys[i].clone());
            left_labels.push(class_of[i]);
        }
        if on_right {
            right_rows.push(row[d_left..].to_vec());
            right_keys.push(keys[i].clone());
            right_labels.push(class_of[i]);
        }
    }
    let left = Dataset::new(
        "vertical-left",
        DenseMatrix::from_rows(&left_rows)?,
        Labels::Classes(left_labels),
        Some(left_keys),
    )?;
    let right = Dataset::new(
        "vertical-right",
        DenseMatrix::from_rows(&right_rows)?,
        Labels::Classes(right_labels),
        Some(right_keys),
    )?;
    Ok((left, right))
}
