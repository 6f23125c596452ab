use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, SeededRng};
use crate::streams;

use super::params::{ParamVector, SegmentKind, ShapeRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Output head: pairs the final linear layer with a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    SoftmaxCrossEntropy,
    SigmoidBce,
    LinearMse,
}

/// Training targets for one batch.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Reals(DenseMatrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Reals(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense feed-forward network description. `widths` includes the input and
/// output widths, so `[d, k]` is a linear model (logistic regression under a
/// softmax head) and `[d, h1, h2, k]` has two hidden layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(
                "model needs at least input and output widths",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(MlpSpec {
            widths,
            activation,
            head,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn registry(&self) -> Arc<ShapeRegistry> {
        Arc::new(ShapeRegistry::for_layer_widths(&self.widths))
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Per-layer activations kept for the backward pass. `acts[0]` is the input
/// batch; the final entry holds raw logits unless the forward pass activated
/// the last layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<DenseMatrix>,
    activated_last: bool,
}

/// Deterministic fan-in-scaled uniform initialization; biases start at zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let registry = spec.registry();
    let mut params = ParamVector::zeros(registry);
    let segments: Vec<_> = params.registry().segments().to_vec();
    for seg in segments {
        if seg.kind != SegmentKind::Weight {
            continue;
        }
        let mut rng = SeededRng::derive(seed, &[streams::INIT, seg.layer as u64]);
        let bound = 1.0 / (seg.cols as f64).sqrt();
        for v in params.segment_values_mut(&seg) {
            *v = (rng.uniform() * 2.0 - 1.0) * bound;
        }
    }
    params
}

fn layer_forward(params: &ParamVector, layer: usize, input: &DenseMatrix) -> Result<DenseMatrix> {
    let reg = params.registry();
    let w = reg
        .segment(layer, SegmentKind::Weight)
        .ok_or_else(|| Error::shape(format!("missing weight segment for layer {layer}")))?;
    let b = reg
        .segment(layer, SegmentKind::Bias)
        .ok_or_else(|| Error::shape(format!("missing bias segment for layer {layer}")))?;
    let weights = params.segment_matrix(w);
    let mut z = input.matmul_bt(&weights)?;
    z.add_row_vector(params.segment_values(b))?;
    Ok(z)
}

fn run_forward(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &DenseMatrix,
    activate_last: bool,
) -> Result<ForwardCache> {
    if batch.cols() != spec.input_width() {
        return Err(Error::shape(format!(
            "batch width {} does not match model input {}",
            batch.cols(),
            spec.input_width()
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::shape("parameter vector does not match model"));
    }
    let layers = spec.layer_count();
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(batch.clone());
    for layer in 0..layers {
        let z = layer_forward(params, layer, &acts[layer])?;
        let is_last = layer == layers - 1;
        if is_last && !activate_last {
            acts.push(z);
        } else {
            acts.push(z.map(|v| spec.activation.apply(v)));
        }
    }
    Ok(ForwardCache {
        acts,
        activated_last: activate_last,
    })
}

fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn head_outputs(head: Head, logits: &DenseMatrix) -> DenseMatrix {
    match head {
        Head::SoftmaxCrossEntropy => softmax_rows(logits),
        Head::SigmoidBce => logits.map(|z| 1.0 / (1.0 + (-z).exp())),
        Head::LinearMse => logits.clone(),
    }
}

fn check_targets(spec: &MlpSpec, batch_rows: usize, targets: &Targets) -> Result<()> {
    if targets.len() != batch_rows {
        return Err(Error::shape(format!(
            "target count {} does not match batch rows {}",
            targets.len(),
            batch_rows
        )));
    }
    match (spec.head, targets) {
        (Head::SoftmaxCrossEntropy, Targets::Classes(cs)) => {
            if cs.iter().any(|&c| c >= spec.output_width()) {
                return Err(Error::invalid("class index out of range"));
            }
        }
        (Head::SigmoidBce, Targets::Classes(cs)) => {
            if spec.output_width() != 1 {
                return Err(Error::shape("binary head needs output width 1"));
            }
            if cs.iter().any(|&c| c > 1) {
                return Err(Error::invalid("binary labels must be 0 or 1"));
            }
        }
        (Head::LinearMse, Targets::Reals(m)) => {
            if m.cols() != spec.output_width() {
                return Err(Error::shape("regression target width mismatch"));
            }
        }
        _ => {
            return Err(Error::invalid(
                "target kind does not match the model's output head",
            ))
        }
    }
    Ok(())
}

/// Runs the network over a batch. Returns head outputs (probabilities for
/// classification heads, raw values for regression) plus the cache needed by
/// `backward`.
pub fn forward(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &DenseMatrix,
) -> Result<(DenseMatrix, ForwardCache)> {
    let cache = run_forward(spec, params, batch, false)?;
    let outputs = head_outputs(spec.head, cache.acts.last().unwrap());
    Ok((outputs, cache))
}

/// Forward pass that also activates the final layer; used for the bottom
/// half of a split network whose last layer is a hidden layer of the full
/// model. The head is ignored.
pub fn forward_hidden(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &DenseMatrix,
) -> Result<(DenseMatrix, ForwardCache)> {
    let cache = run_forward(spec, params, batch, true)?;
    let out = cache.acts.last().unwrap().clone();
    Ok((out, cache))
}

/// Mean loss over the batch under the model's output head.
pub fn loss(spec: &MlpSpec, cache: &ForwardCache, targets: &Targets) -> Result<f64> {
    let logits = cache.acts.last().unwrap();
    check_targets(spec, logits.rows(), targets)?;
    let b = logits.rows() as f64;
    match (spec.head, targets) {
        (Head::SoftmaxCrossEntropy, Targets::Classes(cs)) => {
            let mut total = 0.0;
            for (r, &c) in cs.iter().enumerate() {
                let row = logits.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_sum: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                total += log_sum - row[c];
            }
            Ok(total / b)
        }
        (Head::SigmoidBce, Targets::Classes(cs)) => {
            let mut total = 0.0;
            for (r, &c) in cs.iter().enumerate() {
                let z = logits.get(r, 0);
                let y = c as f64;
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            }
            Ok(total / b)
        }
        (Head::LinearMse, Targets::Reals(y)) => {
            let d = logits.cols() as f64;
            let mut total = 0.0;
            for r in 0..logits.rows() {
                for c in 0..logits.cols() {
                    let e = logits.get(r, c) - y.get(r, c);
                    total += e * e;
                }
            }
            Ok(total / (b * d))
        }
        _ => unreachable!("check_targets filtered mismatches"),
    }
}

/// Gradient of the mean loss at the logits.
fn head_grad(spec: &MlpSpec, logits: &DenseMatrix, targets: &Targets) -> Result<DenseMatrix> {
    check_targets(spec, logits.rows(), targets)?;
    let b = logits.rows() as f64;
    match (spec.head, targets) {
        (Head::SoftmaxCrossEntropy, Targets::Classes(cs)) => {
            let mut d = softmax_rows(logits);
            for (r, &c) in cs.iter().enumerate() {
                let v = d.get(r, c);
                d.set(r, c, v - 1.0);
            }
            d.scale(1.0 / b);
            Ok(d)
        }
        (Head::SigmoidBce, Targets::Classes(cs)) => {
            let mut d = logits.map(|z| 1.0 / (1.0 + (-z).exp()));
            for (r, &c) in cs.iter().enumerate() {
                let v = d.get(r, 0);
                d.set(r, 0, v - c as f64);
            }
            d.scale(1.0 / b);
            Ok(d)
        }
        (Head::LinearMse, Targets::Reals(y)) => {
            let d_width = logits.cols() as f64;
            let mut d = logits.clone();
            for r in 0..d.rows() {
                for c in 0..d.cols() {
                    let v = 2.0 * (d.get(r, c) - y.get(r, c)) / (b * d_width);
                    d.set(r, c, v);
                }
            }
            Ok(d)
        }
        _ => unreachable!(),
    }
}

/// Backpropagates `d_last` (gradient at the final cached activation or logits)
/// down the stack. Returns the parameter gradient and the gradient at the
/// input batch.
fn run_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    d_last: DenseMatrix,
) -> Result<(ParamVector, DenseMatrix)> {
    let layers = spec.layer_count();
    if cache.acts.len() != layers + 1 {
        return Err(Error::shape("cache does not match model depth"));
    }
    let mut grad = params.zeros_like();
    let mut d_out = d_last;
    for layer in (0..layers).rev() {
        let is_last = layer == layers - 1;
        // Convert gradient at layer output to gradient at the pre-activation.
        let dz = if !is_last || cache.activated_last {
            let act_out = &cache.acts[layer + 1];
            if d_out.rows() != act_out.rows() || d_out.cols() != act_out.cols() {
                return Err(Error::shape("gradient shape mismatch in backward"));
            }
            let mut dz = d_out;
            for r in 0..dz.rows() {
                let arow = act_out.row(r);
                for (c, v) in dz.row_mut(r).iter_mut().enumerate() {
                    *v *= spec.activation.derivative_from_output(arow[c]);
                }
            }
            dz
        } else {
            d_out
        };

        let reg = Arc::clone(params.registry());
        let wseg = *reg.segment(layer, SegmentKind::Weight).unwrap();
        let bseg = *reg.segment(layer, SegmentKind::Bias).unwrap();
        let input = &cache.acts[layer];
        let dw = dz.matmul_at(input)?; // (out x in)
        grad.segment_values_mut(&wseg)
            .copy_from_slice(dw.as_slice());
        grad.segment_values_mut(&bseg)
            .copy_from_slice(&dz.col_sums());
        let weights = params.segment_matrix(&wseg);
        d_out = dz.matmul(&weights)?; // (B x in)
    }
    Ok((grad, d_out))
}

/// Gradient of the mean loss with respect to all parameters.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    targets: &Targets,
) -> Result<ParamVector> {
    backward_with_input_grad(spec, params, cache, targets).map(|(g, _)| g)
}

/// Like `backward` but also returns the gradient at the input batch, which a
/// split network routes to the party that produced the input.
pub fn backward_with_input_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    targets: &Targets,
) -> Result<(ParamVector, DenseMatrix)> {
    if cache.activated_last {
        return Err(Error::invalid(
            "cache came from forward_hidden; use backward_hidden",
        ));
    }
    let d_logits = head_grad(spec, cache.acts.last().unwrap(), targets)?;
    run_backward(spec, params, cache, d_logits)
}

/// Backward pass matching `forward_hidden`: `d_out` is the gradient at the
/// activated final layer.
pub fn backward_hidden(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    d_out: DenseMatrix,
) -> Result<(ParamVector, DenseMatrix)> {
    if !cache.activated_last {
        return Err(Error::invalid(
            "cache came from forward; use backward_with_input_grad",
        ));
    }
    run_backward(spec, params, cache, d_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec_343() -> MlpSpec {
        MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let spec = spec_343();
        let a = init_params(&spec, 9);
        let b = init_params(&spec, 9);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = init_params(&spec, 10);
        assert_ne!(a.as_slice(), c.as_slice());
        for seg in a.registry().segments() {
            if seg.kind == SegmentKind::Bias {
                assert!(a.segment_values(seg).iter().all(|&v| v == 0.0));
            }
        }
        assert_eq!(ShapeRegistry::for_layer_widths(&[4, 8, 2]).total_len(), 58);
    }

    #[test]
    fn affine_identity_case() {
        // 1 -> 1 network with w=2, b=1 maps x=3 to 7 under a linear head.
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu, Head::LinearMse).unwrap();
        let params = ParamVector::from_values(spec.registry(), vec![2.0, 1.0]).unwrap();
        let x = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        let (out, _) = forward(&spec, &params, &x).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 7.0);
    }

    #[test]
    fn zero_weights_linear_head_gives_zero() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu, Head::LinearMse).unwrap();
        let params = ParamVector::zeros(spec.registry());
        let x = DenseMatrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let (out, _) = forward(&spec, &params, &x).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = spec_343();
        let params = init_params(&spec, 3);
        let mut rng = SeededRng::new(5);
        let x = DenseMatrix::from_vec(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
        let (out, _) = forward(&spec, &params, &x).unwrap();
        for r in 0..out.rows() {
            let s: f64 = out.row(r).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let spec = spec_343();
        let params = init_params(&spec, 3);
        let x = DenseMatrix::zeros(2, 4);
        assert!(forward(&spec, &params, &x).is_err());
    }

    /// Central finite differences around each parameter; the independent
    /// oracle for all analytic gradients.
    fn fd_gradient(
        spec: &MlpSpec,
        params: &ParamVector,
        x: &DenseMatrix,
        t: &Targets,
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += step;
            let (_, cache) = forward(spec, &plus, x).unwrap();
            let lp = loss(spec, &cache, t).unwrap();
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= step;
            let (_, cache) = forward(spec, &minus, x).unwrap();
            let lm = loss(spec, &cache, t).unwrap();
            grad[i] = (lp - lm) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        for head in [Head::SoftmaxCrossEntropy, Head::SigmoidBce, Head::LinearMse] {
            let out_w = match head {
                Head::SoftmaxCrossEntropy => 2,
                _ => 1,
            };
            let spec = MlpSpec::new(vec![3, 4, out_w], Activation::Tanh, head).unwrap();
            let params = init_params(&spec, 21);
            let x = DenseMatrix::from_vec(8, 3, (0..24).map(|_| rng.normal()).collect()).unwrap();
            let targets = match head {
                Head::LinearMse => Targets::Reals(
                    DenseMatrix::from_vec(8, 1, (0..8).map(|_| rng.normal()).collect()).unwrap(),
                ),
                _ => Targets::Classes((0..8).map(|_| (rng.below(2)) as usize).collect()),
            };
            let (_, cache) = forward(&spec, &params, &x).unwrap();
            let analytic = backward(&spec, &params, &cache, &targets).unwrap();
            let numeric = fd_gradient(&spec, &params, &x, &targets, 1e-5);
            let scale = numeric
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
                .max(1e-8);
            for (a, n) in analytic.as_slice().iter().zip(&numeric) {
                assert!(
                    (a - n).abs() / scale < 1e-4,
                    "head {head:?}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn zero_residual_regression_gives_zero_gradient() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Tanh, Head::LinearMse).unwrap();
        let params = init_params(&spec, 4);
        let x =
            DenseMatrix::from_vec(4, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap();
        let (out, cache) = forward(&spec, &params, &x).unwrap();
        let grad = backward(&spec, &params, &cache, &Targets::Reals(out)).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn full_batch_descent_decreases_loss_monotonically() {
        // Separable two-blob problem: 50 plain SGD steps with a small rate
        // never increase the loss beyond tolerance.
        let spec = MlpSpec::new(vec![2, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
        let mut params = init_params(&spec, 13);
        let mut rng = SeededRng::new(14);
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let center = if c == 0 { 2.0 } else { -2.0 };
            rows.push(vec![
                center + 0.3 * rng.normal(),
                center + 0.3 * rng.normal(),
            ]);
            classes.push(c);
        }
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let t = Targets::Classes(classes);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (_, cache) = forward(&spec, &params, &x).unwrap();
            let l = loss(&spec, &cache, &t).unwrap();
            assert!(l <= last + 1e-9, "loss increased: {last} -> {l}");
            last = l;
            let grad = backward(&spec, &params, &cache, &t).unwrap();
            params.add_scaled(&grad, -0.05).unwrap();
        }
    }

    #[test]
    fn duplicating_batch_leaves_mean_gradient_unchanged() {
        let spec = spec_343();
        let params = init_params(&spec, 8);
        let x = DenseMatrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7]).unwrap();
        let t = Targets::Classes(vec![0, 1]);
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let g1 = backward(&spec, &params, &cache, &t).unwrap();

        let doubled = DenseMatrix::from_rows(&[
            x.row(0).to_vec(),
            x.row(1).to_vec(),
            x.row(0).to_vec(),
            x.row(1).to_vec(),
        ])
        .unwrap();
        let t2 = Targets::Classes(vec![0, 1, 0, 1]);
        let (_, cache) = forward(&spec, &params, &doubled).unwrap();
        let g2 = backward(&spec, &params, &cache, &t2).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
