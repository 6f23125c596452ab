//! Python bindings: the main dataset, partitioning, privacy, compression and
//! statistics operations plus the preset experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedbench::data::{self, Labels, QuantityMode};
use fedbench::experiment;
use fedbench::numkit::SeededRng;
use fedbench::secure_agg;
use fedbench::stats;

fn err(e: fedbench::Error) -> PyErr {
    match e {
        fedbench::Error::InvalidArgument(_) | fedbench::Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// An in-memory dataset: feature rows plus class or real labels.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    /// Feature matrix as a list of rows.
    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len())
            .map(|r| self.inner.features.row(r).to_vec())
            .collect()
    }

    /// Class labels as integers, or real targets as floats.
    fn labels(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(match &self.inner.labels {
            Labels::Classes(c) => c.clone().into_pyobject(py)?.into_any().unbind(),
            Labels::Reals(v) => v.clone().into_pyobject(py)?.into_any().unbind(),
        })
    }

    fn keys(&self) -> Option<Vec<String>> {
        self.inner.keys.clone()
    }

    /// Deterministic 83.33/8.33/8.33 train/test/validation split.
    fn split(&self, seed: u64) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
        let (train, test, val) = data::split_train_test_val(&self.inner, seed).map_err(err)?;
        Ok((
            PyDataset { inner: train },
            PyDataset { inner: test },
            PyDataset { inner: val },
        ))
    }
}

/// Gaussian blob classification data.
#[pyfunction]
#[pyo3(signature = (samples, features, classes, separation=2.0, noise=1.0, seed=0))]
fn synth_blobs(
    samples: usize,
    features: usize,
    classes: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::synth_blobs(samples, features, classes, separation, noise, seed)
            .map_err(err)?,
    })
}

/// Linear regression data; returns (dataset, generating_weights).
#[pyfunction]
#[pyo3(signature = (samples, features, noise=0.0, seed=0))]
fn synth_regression(
    samples: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(PyDataset, Vec<f64>)> {
    let (ds, w) = data::synth_regression(samples, features, noise, seed).map_err(err)?;
    Ok((PyDataset { inner: ds }, w))
}

#[pyfunction]
fn load_csv(path: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::load_csv(path).map_err(err)?,
    })
}

/// Equal-share shuffled partition; returns per-client index lists.
#[pyfunction]
fn partition_iid(samples: usize, clients: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(data::partition_iid(samples, clients, seed)
        .map_err(err)?
        .client_indices)
}

/// Dirichlet label-distribution skew partition.
#[pyfunction]
fn partition_label_skew(
    labels: Vec<usize>,
    alpha: f64,
    clients: usize,
    seed: u64,
) -> PyResult<Vec<Vec<usize>>> {
    Ok(data::partition_label_skew(&labels, alpha, clients, seed)
        .map_err(err)?
        .client_indices)
}

/// Dirichlet quantity-skew partition with stratified class fill.
#[pyfunction]
#[pyo3(signature = (labels, alpha, clients, seed, power_law=false))]
fn partition_quantity_skew(
    labels: Vec<usize>,
    alpha: f64,
    clients: usize,
    seed: u64,
    power_law: bool,
) -> PyResult<Vec<Vec<usize>>> {
    let mode = if power_law {
        QuantityMode::PowerLaw
    } else {
        QuantityMode::Dirichlet
    };
    Ok(
        data::partition_quantity_skew(&labels, alpha, clients, seed, mode)
            .map_err(err)?
            .client_indices,
    )
}

/// Euclidean norm.
#[pyfunction]
fn l2_norm(values: Vec<f64>) -> PyResult<f64> {
    fedbench::numkit::l2_norm(&values).map_err(err)
}

/// Rescale onto the L2 ball of radius `bound` when outside it.
#[pyfunction]
fn clip_to_norm(values: Vec<f64>, bound: f64) -> PyResult<Vec<f64>> {
    fedbench::numkit::clip_to_norm(&values, bound).map_err(err)
}

/// Privacy spent by `rounds` subsampled-Gaussian invocations.
#[pyfunction]
fn rdp_epsilon(q: f64, sigma: f64, rounds: usize, delta: f64) -> PyResult<f64> {
    fedbench::privacy::rdp_epsilon(q, sigma, rounds, delta).map_err(err)
}

/// Smallest noise multiplier meeting the epsilon target.
#[pyfunction]
fn calibrate_sigma(eps_target: f64, delta: f64, q: f64, rounds: usize) -> PyResult<f64> {
    fedbench::privacy::calibrate_sigma(eps_target, delta, q, rounds).map_err(err)
}

/// Bayesian correlated t-test over paired differences (A - B); returns
/// (p_left, p_rope, p_right).
#[pyfunction]
#[pyo3(signature = (diffs, rope, rho=0.0))]
fn bayes_corr_ttest(diffs: Vec<f64>, rope: f64, rho: f64) -> PyResult<(f64, f64, f64)> {
    let r = stats::bayes_corr_ttest(&diffs, rope, rho).map_err(err)?;
    Ok((r.p_left, r.p_rope, r.p_right))
}

/// TopK sparsification: returns (indices, values, wire_bytes).
#[pyfunction]
fn topk_compress(values: Vec<f64>, k_fraction: f64) -> PyResult<(Vec<u64>, Vec<f64>, usize)> {
    use fedbench::compression::CompressedPayload;
    use fedbench::models::{ParamVector, ShapeRegistry};
    use std::sync::Arc;
    if values.len() < 2 {
        return Err(PyValueError::new_err("need at least two values"));
    }
    let reg = Arc::new(ShapeRegistry::for_layer_widths(&[values.len() - 1, 1]));
    let g = ParamVector::from_values(reg, values).map_err(err)?;
    let c = fedbench::compression::topk_compress(&g, k_fraction).map_err(err)?;
    match c.payload {
        CompressedPayload::Sparse { indices, values } => Ok((indices, values, c.wire_bytes)),
        _ => unreachable!(),
    }
}

/// Uplink compression ratio from byte counts.
#[pyfunction]
fn wire_ratio(raw_bytes: usize, compressed_bytes: usize) -> PyResult<f64> {
    fedbench::compression::wire_ratio(raw_bytes, compressed_bytes).map_err(err)
}

/// End-to-end compression ratio: per-round ratio discounted by extra rounds.
#[pyfunction]
fn end_to_end_ratio(
    per_round_ratio: f64,
    baseline_rounds: f64,
    compressed_rounds: f64,
) -> PyResult<f64> {
    fedbench::compression::end_to_end_ratio(per_round_ratio, baseline_rounds, compressed_rounds)
        .map_err(err)
}

/// Full secret-sharing round trip: splits each vector into `parts_sent + 1`
/// additive parts, routes them, and returns the securely aggregated sum.
#[pyfunction]
fn secure_sum(vectors: Vec<Vec<f64>>, parts_sent: usize, seed: u64) -> PyResult<Vec<f64>> {
    use fedbench::models::{ParamVector, ShapeRegistry};
    use std::sync::Arc;
    let n = vectors.len();
    if n < 2 {
        return Err(PyValueError::new_err("need at least two clients"));
    }
    let len = vectors[0].len();
    if len < 2 || vectors.iter().any(|v| v.len() != len) {
        return Err(PyValueError::new_err(
            "vectors must share a common length of at least two",
        ));
    }
    let k = parts_sent + 1;
    let codec = secure_agg::FixedCodec::new(n);
    let reg = Arc::new(ShapeRegistry::for_layer_widths(&[len - 1, 1]));
    let mut bundles = Vec::with_capacity(n);
    for (i, v) in vectors.iter().enumerate() {
        let p = ParamVector::from_values(Arc::clone(&reg), v.clone()).map_err(err)?;
        let encoded = secure_agg::encode_fixed(&p, &codec).map_err(err)?;
        let mut rng = SeededRng::derive(seed, &[i as u64]);
        bundles.push(secure_agg::make_shares(&encoded, i, k, &codec, &mut rng).map_err(err)?);
    }
    let mut inbox: Vec<Vec<&[u64]>> = vec![Vec::new(); n];
    for bundle in &bundles {
        for part in 0..k - 1 {
            inbox[bundle.route(part, n)].push(&bundle.parts[part]);
        }
    }
    let masked: Vec<Vec<u64>> = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| secure_agg::combine_shares(b.kept_part(), &inbox[i], k - 1, &codec))
        .collect::<fedbench::Result<_>>()
        .map_err(err)?;
    let template = ParamVector::zeros(reg);
    let agg = secure_agg::secure_aggregate(&masked, &codec, &template).map_err(err)?;
    Ok(agg.as_slice().to_vec())
}

/// Names of the reference experiment presets.
#[pyfunction]
fn list_presets() -> Vec<String> {
    experiment::PRESET_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Full TOML text of a preset.
#[pyfunction]
fn preset_toml(name: &str) -> PyResult<String> {
    experiment::preset(name)
        .map(str::to_string)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))
}

fn record_dict<'py>(
    py: Python<'py>,
    r: &fedbench::stats::RunRecord,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("preset", &r.preset)?;
    d.set_item("seed", r.seed)?;
    d.set_item("final_metric", r.final_metric)?;
    d.set_item("convergence_rounds", r.convergence_rounds)?;
    d.set_item("throughput", r.throughput)?;
    d.set_item("overhead", r.overhead)?;
    d.set_item("uplink_ratio", r.uplink_ratio)?;
    d.set_item("eps_spent", r.eps_spent)?;
    Ok(d)
}

/// Runs an experiment from TOML text; writes round logs, ledgers and the
/// summary under `out_dir` and returns one dict per repetition.
#[pyfunction]
#[pyo3(signature = (toml_text, out_dir, repetitions=None, base_seed=None))]
fn run_config(
    py: Python<'_>,
    toml_text: &str,
    out_dir: PathBuf,
    repetitions: Option<usize>,
    base_seed: Option<u64>,
) -> PyResult<Vec<Py<PyDict>>> {
    let mut config = experiment::parse_config(toml_text).map_err(err)?;
    if let Some(r) = repetitions {
        config.repetitions = r;
    }
    if let Some(s) = base_seed {
        config.base_seed = s;
    }
    let output = experiment::run_to_dir(&config, &out_dir).map_err(err)?;
    output
        .records
        .iter()
        .map(|r| Ok(record_dict(py, r)?.unbind()))
        .collect()
}

/// Runs a named preset; see `run_config`.
#[pyfunction]
#[pyo3(signature = (name, out_dir, repetitions=None, base_seed=None))]
fn run_preset(
    py: Python<'_>,
    name: &str,
    out_dir: PathBuf,
    repetitions: Option<usize>,
    base_seed: Option<u64>,
) -> PyResult<Vec<Py<PyDict>>> {
    let text = experiment::preset(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
    run_config(py, text, out_dir, repetitions, base_seed)
}

#[pymodule]
fn fedbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(synth_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(synth_regression, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(partition_iid, m)?)?;
    m.add_function(wrap_pyfunction!(partition_label_skew, m)?)?;
    m.add_function(wrap_pyfunction!(partition_quantity_skew, m)?)?;
    m.add_function(wrap_pyfunction!(l2_norm, m)?)?;
    m.add_function(wrap_pyfunction!(clip_to_norm, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_corr_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(topk_compress, m)?)?;
    m.add_function(wrap_pyfunction!(wire_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(end_to_end_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(secure_sum, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    Ok(())
}
