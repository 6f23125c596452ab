//! Split neural networks for vertically partitioned features.
//!
//! Each party runs a bottom model over its own feature block up to the cut
//! layer; the server concatenates the cut activations (raw, with the next
//! nonlinearity living in the server's first layer) and finishes the forward
//! pass with its top model. Gradients flow back along the same route, so the
//! whole arrangement computes exactly what the equivalent single network
//! with block-diagonal lower layers would.

use crate::error::{Error, Result};
use crate::models::{
    backward_hidden, backward_with_input_grad, forward, forward_hidden, loss, ForwardCache,
    MlpSpec, ParamVector, Targets,
};
use crate::numkit::DenseMatrix;

/// Architecture of a split network: one bottom model per party plus the
/// server's top model, whose input width must equal the sum of the parties'
/// cut widths.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub bottoms: Vec<MlpSpec>,
    pub top: MlpSpec,
}

impl SplitSpec {
    pub fn new(bottoms: Vec<MlpSpec>, top: MlpSpec) -> Result<Self> {
        if bottoms.is_empty() {
            return Err(Error::invalid("split network needs at least one party"));
        }
        let cut_total: usize = bottoms.iter().map(MlpSpec::output_width).sum();
        if cut_total != top.input_width() {
            return Err(Error::shape(format!(
                "top model input {} != total cut width {}",
                top.input_width(),
                cut_total
            )));
        }
        Ok(SplitSpec { bottoms, top })
    }

    pub fn n_parties(&self) -> usize {
        self.bottoms.len()
    }

    pub fn cut_widths(&self) -> Vec<usize> {
        self.bottoms.iter().map(MlpSpec::output_width).collect()
    }
}

/// Activations retained from one split forward pass.
#[derive(Debug, Clone)]
pub struct SplitCache {
    pub bottom_caches: Vec<ForwardCache>,
    pub top_cache: ForwardCache,
}

/// Per-owner gradients from one split backward pass.
#[derive(Debug, Clone)]
pub struct SplitGrads {
    pub top: ParamVector,
    pub bottoms: Vec<ParamVector>,
    /// Gradient at each party's cut activations; this is what travels back
    /// over the wire to the parties.
    pub cut_grads: Vec<DenseMatrix>,
}

/// Runs all party bottoms and the server top over row-aligned batches.
pub fn split_forward(
    spec: &SplitSpec,
    bottom_params: &[ParamVector],
    party_batches: &[DenseMatrix],
    top_params: &ParamVector,
) -> Result<(DenseMatrix, SplitCache)> {
    if bottom_params.len() != spec.n_parties() || party_batches.len() != spec.n_parties() {
        return Err(Error::shape("one batch and parameter set per party"));
    }
    let rows = party_batches[0].rows();
    if party_batches.iter().any(|b| b.rows() != rows) {
        return Err(Error::shape("party batches must have aligned rows"));
    }
    let mut cut_outputs = Vec::with_capacity(spec.n_parties());
    let mut bottom_caches = Vec::with_capacity(spec.n_parties());
    for ((bottom, params), batch) in spec.bottoms.iter().zip(bottom_params).zip(party_batches) {
        let (out, cache) = forward_hidden(bottom, params, batch)?;
        cut_outputs.push(out);
        bottom_caches.push(cache);
    }
    let concat = DenseMatrix::hcat(&cut_outputs.iter().collect::<Vec<_>>())?;
    let (outputs, top_cache) = forward(&spec.top, top_params, &concat)?;
    Ok((
        outputs,
        SplitCache {
            bottom_caches,
            top_cache,
        },
    ))
}

/// Mean loss at the top head for a cached split forward pass.
pub fn split_loss(spec: &SplitSpec, cache: &SplitCache, targets: &Targets) -> Result<f64> {
    loss(&spec.top, &cache.top_cache, targets)
}

/// Backpropagates through the top model, splits the concatenated cut
/// gradient by party, and finishes each bottom backward pass.
pub fn split_backward(
    spec: &SplitSpec,
    bottom_params: &[ParamVector],
    top_params: &ParamVector,
    cache: &SplitCache,
    targets: &Targets,
) -> Result<SplitGrads> {
    let (top_grad, d_concat) =
        backward_with_input_grad(&spec.top, top_params, &cache.top_cache, targets)?;
    let mut bottoms = Vec::with_capacity(spec.n_parties());
    let mut cut_grads = Vec::with_capacity(spec.n_parties());
    let mut offset = 0;
    for ((bottom, params), bcache) in spec
        .bottoms
        .iter()
        .zip(bottom_params)
        .zip(&cache.bottom_caches)
    {
        let width = bottom.output_width();
        let d_cut = d_concat.col_slice(offset, width)?;
        offset += width;
        let (grad, _) = backward_hidden(bottom, params, bcache, d_cut.clone())?;
        bottoms.push(grad);
        cut_grads.push(d_cut);
    }
    Ok(SplitGrads {
        top: top_grad,
        bottoms,
        cut_grads,
    })
}
