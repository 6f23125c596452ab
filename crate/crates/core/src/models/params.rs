use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Weight,
    Bias,
}

/// One named slice of a flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub layer: usize,
    pub kind: SegmentKind,
    /// Output width for weights, length for biases.
    pub rows: usize,
    /// Input width for weights, 1 for biases.
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_matrix(&self) -> bool {
        self.kind == SegmentKind::Weight && self.rows > 1 && self.cols > 1
    }
}

/// Maps flat offsets back to (layer, weight/bias) structure.
#[derive(Debug, Clone)]
pub struct ShapeRegistry {
    segments: Vec<Segment>,
    total: usize,
}

impl ShapeRegistry {
    pub fn new(segments: Vec<Segment>) -> Self {
        let total = segments.iter().map(Segment::len).sum();
        ShapeRegistry { segments, total }
    }

    /// Registry for a dense feed-forward stack given layer widths.
    pub fn for_layer_widths(widths: &[usize]) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (layer, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            segments.push(Segment {
                layer,
                kind: SegmentKind::Weight,
                rows: fan_out,
                cols: fan_in,
                offset,
            });
            offset += fan_out * fan_in;
            segments.push(Segment {
                layer,
                kind: SegmentKind::Bias,
                rows: fan_out,
                cols: 1,
                offset,
            });
            offset += fan_out;
        }
        ShapeRegistry {
            segments,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, layer: usize, kind: SegmentKind) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.layer == layer && s.kind == kind)
    }
}

/// Flat parameter or gradient vector with its shape registry.
///
/// The registry is shared behind an `Arc` so cloning parameters for local
/// training is a single buffer copy.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    registry: Arc<ShapeRegistry>,
}

impl ParamVector {
    pub fn zeros(registry: Arc<ShapeRegistry>) -> Self {
        let values = vec![0.0; registry.total_len()];
        ParamVector { values, registry }
    }

    pub fn from_values(registry: Arc<ShapeRegistry>, values: Vec<f64>) -> Result<Self> {
        if values.len() != registry.total_len() {
            return Err(Error::shape(format!(
                "parameter vector length {} does not match registry total {}",
                values.len(),
                registry.total_len()
            )));
        }
        Ok(ParamVector { values, registry })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn registry(&self) -> &Arc<ShapeRegistry> {
        &self.registry
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.values.len() == other.values.len()
    }

    pub fn zeros_like(&self) -> ParamVector {
        ParamVector::zeros(Arc::clone(&self.registry))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::from_values(Arc::clone(&self.registry), values)
    }

    pub fn segment_values(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.offset..seg.offset + seg.len()]
    }

    pub fn segment_values_mut(&mut self, seg: &Segment) -> &mut [f64] {
        &mut self.values[seg.offset..seg.offset + seg.len()]
    }

    /// Weight segment viewed as a matrix.
    pub fn segment_matrix(&self, seg: &Segment) -> DenseMatrix {
        DenseMatrix::from_vec(seg.rows, seg.cols, self.segment_values(seg).to_vec())
            .expect("registry segment is consistent")
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("add_scaled length mismatch"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self - other` as a new vector.
    pub fn minus(&self, other: &ParamVector) -> Result<ParamVector> {
        if !self.same_shape(other) {
            return Err(Error::shape("minus length mismatch"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        self.with_values(values)
    }
}
