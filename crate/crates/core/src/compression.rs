//! Uplink gradient compression: TopK and RandK sparsification, low-rank
//! factorization by a single warm-started power iteration, and damped error
//! feedback.
//!
//! Wire sizes follow one fixed binary convention everywhere: 32-bit values,
//! 64-bit indices and 64-bit length prefixes, little endian. Payloads stay in
//! f64 inside the simulation; the 32-bit value width is the accounting rule
//! used to price transfers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::{ParamVector, Segment};
use crate::numkit::{DenseMatrix, SeededRng};

/// Raw (uncompressed) wire size of a dense vector: length prefix + 32-bit
/// values.
pub fn dense_wire_bytes(len: usize) -> usize {
    8 + 4 * len
}

/// Sparse wire size: length prefix + 64-bit indices + 32-bit values.
pub fn sparse_wire_bytes(count: usize) -> usize {
    8 + 12 * count
}

/// Per-segment payload of a low-rank compressed gradient.
#[derive(Debug, Clone)]
pub enum SegmentPayload {
    /// P (rows x rank) and Q (cols x rank); decompresses to `P Q^T`.
    Factors { p: DenseMatrix, q: DenseMatrix },
    /// Vector-shaped segments travel raw.
    Raw(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum CompressedPayload {
    Sparse {
        indices: Vec<u64>,
        values: Vec<f64>,
    },
    LowRank {
        segments: Vec<(Segment, SegmentPayload)>,
    },
}

/// A compressed gradient with its exact serialized size.
#[derive(Debug, Clone)]
pub struct CompressedGrad {
    pub payload: CompressedPayload,
    pub original_len: usize,
    pub wire_bytes: usize,
}

impl CompressedGrad {
    /// Serializes in the fixed little-endian wire format. The simulation only
    /// needs the byte count, but the encoding is pinned down by tests.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_bytes);
        match &self.payload {
            CompressedPayload::Sparse { indices, values } => {
                out.extend_from_slice(&(indices.len() as u64).to_le_bytes());
                for i in indices {
                    out.extend_from_slice(&i.to_le_bytes());
                }
                for v in values {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            CompressedPayload::LowRank { segments } => {
                for (_, payload) in segments {
                    match payload {
                        SegmentPayload::Factors { p, q } => {
                            out.extend_from_slice(&(p.cols() as u64).to_le_bytes());
                            for v in p.as_slice() {
                                out.extend_from_slice(&(*v as f32).to_le_bytes());
                            }
                            for v in q.as_slice() {
                                out.extend_from_slice(&(*v as f32).to_le_bytes());
                            }
                        }
                        SegmentPayload::Raw(values) => {
                            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
                            for v in values {
                                out.extend_from_slice(&(*v as f32).to_le_bytes());
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Scatters the payload back into a dense vector.
    pub fn decompress(&self, template: &ParamVector) -> Result<ParamVector> {
        if template.len() != self.original_len {
            return Err(Error::shape("decompress template length mismatch"));
        }
        let mut out = template.zeros_like();
        match &self.payload {
            CompressedPayload::Sparse { indices, values } => {
                let slice = out.as_mut_slice();
                for (&i, &v) in indices.iter().zip(values) {
                    let i = i as usize;
                    if i >= slice.len() {
                        return Err(Error::invalid("sparse index out of range"));
                    }
                    slice[i] = v;
                }
            }
            CompressedPayload::LowRank { segments } => {
                for (seg, payload) in segments {
                    match payload {
                        SegmentPayload::Factors { p, q } => {
                            let approx = p.matmul(&q.transpose())?;
                            out.segment_values_mut(seg)
                                .copy_from_slice(approx.as_slice());
                        }
                        SegmentPayload::Raw(values) => {
                            out.segment_values_mut(seg).copy_from_slice(values);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sparse_from_indices(g: &ParamVector, mut picked: Vec<usize>) -> CompressedGrad {
    picked.sort_unstable();
    let values: Vec<f64> = picked.iter().map(|&i| g.as_slice()[i]).collect();
    let indices: Vec<u64> = picked.iter().map(|&i| i as u64).collect();
    let wire = sparse_wire_bytes(indices.len());
    CompressedGrad {
        payload: CompressedPayload::Sparse { indices, values },
        original_len: g.len(),
        wire_bytes: wire,
    }
}

fn keep_count(len: usize, k_fraction: f64) -> Result<usize> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction {k_fraction} outside (0, 1]"
        )));
    }
    Ok(((len as f64) * k_fraction).ceil().max(1.0) as usize)
}

/// Keeps the `ceil(k * len)` entries with the largest magnitude; ties break
/// toward the lower index.
pub fn topk_compress(g: &ParamVector, k_fraction: f64) -> Result<CompressedGrad> {
    let count = keep_count(g.len(), k_fraction)?.min(g.len());
    let mut order: Vec<usize> = (0..g.len()).collect();
    let values = g.as_slice();
    order.sort_unstable_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    Ok(sparse_from_indices(g, order))
}

/// Keeps a uniform random subset of entries, unscaled by default. `rescale`
/// multiplies kept values by `1/k` to make the estimate unbiased.
pub fn randk_compress(
    g: &ParamVector,
    k_fraction: f64,
    rescale: bool,
    rng: &mut SeededRng,
) -> Result<CompressedGrad> {
    let count = keep_count(g.len(), k_fraction)?.min(g.len());
    let picked = rng.sample_indices(g.len(), count);
    let mut out = sparse_from_indices(g, picked);
    if rescale {
        if let CompressedPayload::Sparse { values, .. } = &mut out.payload {
            let scale = g.len() as f64 / count as f64;
            for v in values {
                *v *= scale;
            }
        }
    }
    Ok(out)
}

/// Warm-start factors carried across rounds, keyed by segment offset.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    p_factors: BTreeMap<usize, DenseMatrix>,
}

/// Modified Gram-Schmidt orthonormalization of the columns of `m` in place.
/// Zero (or numerically dependent) columns stay zero.
fn orthonormalize_columns(m: &mut DenseMatrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        for prev in 0..c {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += m.get(r, c) * m.get(r, prev);
            }
            for r in 0..rows {
                let v = m.get(r, c) - dot * m.get(r, prev);
                m.set(r, c, v);
            }
        }
        let mut norm = 0.0;
        for r in 0..rows {
            norm += m.get(r, c) * m.get(r, c);
        }
        norm = norm.sqrt();
        if norm > 1e-12 {
            for r in 0..rows {
                let v = m.get(r, c) / norm;
                m.set(r, c, v);
            }
        } else {
            for r in 0..rows {
                m.set(r, c, 0.0);
            }
        }
    }
}

/// One power iteration per matrix segment: `Q = orth(M^T P_prev)` (random
/// init on the first round), `P = M Q`, transmitted as the factor pair.
/// Vector segments travel raw. `warm` keeps `P` per segment across rounds.
pub fn lowrank_compress(
    g: &ParamVector,
    rank: usize,
    warm: &mut WarmStart,
    rng: &mut SeededRng,
) -> Result<CompressedGrad> {
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let mut segments = Vec::new();
    let mut wire = 0usize;
    for seg in g.registry().segments().iter() {
        if !seg.is_matrix() {
            let values = g.segment_values(seg).to_vec();
            wire += dense_wire_bytes(values.len());
            segments.push((*seg, SegmentPayload::Raw(values)));
            continue;
        }
        let m = g.segment_matrix(seg);
        let r = rank.min(seg.rows).min(seg.cols);
        // Cold start uses a random left factor, so the right subspace already
        // comes from M^T on the first round.
        let p_prev = match warm.p_factors.get(&seg.offset) {
            Some(p) if p.cols() == r => p.clone(),
            _ => {
                let mut init = DenseMatrix::zeros(seg.rows, r);
                for v in init.as_mut_slice() {
                    *v = rng.normal();
                }
                init
            }
        };
        let mut q = m.transpose().matmul(&p_prev)?;
        orthonormalize_columns(&mut q);
        let p = m.matmul(&q)?;
        warm.p_factors.insert(seg.offset, p.clone());
        wire += 8 + 4 * (p.as_slice().len() + q.as_slice().len());
        segments.push((*seg, SegmentPayload::Factors { p, q }));
    }
    Ok(CompressedGrad {
        payload: CompressedPayload::LowRank { segments },
        original_len: g.len(),
        wire_bytes: wire,
    })
}

/// Residual state for error feedback.
#[derive(Debug, Clone)]
pub struct EfState {
    pub residual: ParamVector,
    pub damping: f64,
}

impl EfState {
    pub fn new(template: &ParamVector, damping: f64) -> EfState {
        EfState {
            residual: template.zeros_like(),
            damping,
        }
    }

    /// Adds the carried residual to the fresh gradient.
    pub fn apply(&self, g: &ParamVector) -> Result<ParamVector> {
        let mut eff = g.clone();
        eff.add_scaled(&self.residual, 1.0)?;
        Ok(eff)
    }

    /// Stores the damped compression error for the next round.
    pub fn update(&mut self, effective: &ParamVector, decompressed: &ParamVector) -> Result<()> {
        let mut residual = effective.minus(decompressed)?;
        residual.scale(self.damping);
        self.residual = residual;
        Ok(())
    }
}

/// Per-round uplink compression ratio.
pub fn wire_ratio(raw_bytes: usize, compressed_bytes: usize) -> Result<f64> {
    if raw_bytes == 0 || compressed_bytes == 0 {
        return Err(Error::invalid("wire ratio needs positive byte counts"));
    }
    Ok(raw_bytes as f64 / compressed_bytes as f64)
}

/// End-to-end uplink compression ratio: the per-round ratio discounted by the
/// extra rounds a compressed run needs to converge. Total uplink traffic is
/// `rounds * raw / per_round_ratio` against the baseline's `baseline_rounds *
/// raw`, so the ratio of totals is below.
pub fn end_to_end_ratio(
    per_round_ratio: f64,
    baseline_rounds: f64,
    compressed_rounds: f64,
) -> Result<f64> {
    if !(per_round_ratio > 0.0 && baseline_rounds > 0.0 && compressed_rounds > 0.0) {
        return Err(Error::invalid("ratio inputs must be positive"));
    }
    Ok(per_round_ratio * baseline_rounds / compressed_rounds)
}
