use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{sample_dirichlet, SeededRng};
use crate::streams;

use super::assert_exact_partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    Iid,
    LabelSkewDirichlet,
    QuantitySkewDirichlet,
    PowerLaw,
}

/// How quantity-skew client weights are chosen. `Fixed` bypasses sampling and
/// is mainly a hook for tests and calibrated scenarios.
#[derive(Debug, Clone)]
pub enum QuantityMode {
    Dirichlet,
    PowerLaw,
    Fixed(Vec<f64>),
}

/// A realized division of one training set across clients.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
    pub client_indices: Vec<Vec<usize>>,
}

impl PartitionSpec {
    pub fn client_sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }
}

fn check_clients(n_samples: usize, n_clients: usize) -> Result<()> {
    if n_clients < 2 {
        return Err(Error::invalid("need at least 2 clients"));
    }
    if n_clients > n_samples {
        return Err(Error::invalid(format!(
            "cannot split {n_samples} samples across {n_clients} clients"
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` items across weights `p`.
fn apportion(total: usize, p: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    // Largest fractional part first; ties to the lower index for determinism.
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        counts[order[i % p.len()]] += 1;
    }
    counts
}

/// Shuffled equal-size assignment: client sizes differ by at most one.
pub fn partition_iid(n_samples: usize, n_clients: usize, seed: u64) -> Result<PartitionSpec> {
    check_clients(n_samples, n_clients)?;
    let mut idx: Vec<usize> = (0..n_samples).collect();
    let mut rng = SeededRng::derive(seed, &[streams::PARTITION]);
    rng.shuffle(&mut idx);
    let mut client_indices = vec![Vec::new(); n_clients];
    for (pos, i) in idx.into_iter().enumerate() {
        client_indices[pos % n_clients].push(i);
    }
    assert_exact_partition(&client_indices, n_samples)?;
    Ok(PartitionSpec {
        scheme: PartitionScheme::Iid,
        alpha: f64::INFINITY,
        n_clients,
        seed,
        client_indices,
    })
}

/// Label-distribution skew: for each class, a Dirichlet draw decides the
/// proportion of that class each client receives. Partitions that leave any
/// client empty are resampled, up to 100 attempts.
pub fn partition_label_skew(
    labels: &[usize],
    alpha: f64,
    n_clients: usize,
    seed: u64,
) -> Result<PartitionSpec> {
    check_clients(labels.len(), n_clients)?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let n_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }

    for attempt in 0..100 {
        let mut rng = SeededRng::derive(seed, &[streams::PARTITION, attempt]);
        let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for class_pool in &by_class {
            if class_pool.is_empty() {
                continue;
            }
            let mut pool = class_pool.clone();
            rng.shuffle(&mut pool);
            let p = sample_dirichlet(alpha, n_clients, &mut rng)?;
            let counts = apportion(pool.len(), &p);
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                client_indices[client].extend_from_slice(&pool[cursor..cursor + count]);
                cursor += count;
            }
        }
        if client_indices.iter().all(|c| !c.is_empty()) {
            assert_exact_partition(&client_indices, labels.len())?;
            return Ok(PartitionSpec {
                scheme: PartitionScheme::LabelSkewDirichlet,
                alpha,
                n_clients,
                seed,
                client_indices,
            });
        }
    }
    Err(Error::runtime(
        "label-skew partitioning left a client empty after 100 resamples",
    ))
}

/// Quantity skew: one weight vector decides each client's sample count while
/// per-client class composition stays proportional to the global one
/// (stratified fill).
pub fn partition_quantity_skew(
    labels: &[usize],
    alpha: f64,
    n_clients: usize,
    seed: u64,
    mode: QuantityMode,
) -> Result<PartitionSpec> {
    check_clients(labels.len(), n_clients)?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let n_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }

    let scheme = match mode {
        QuantityMode::PowerLaw => PartitionScheme::PowerLaw,
        _ => PartitionScheme::QuantitySkewDirichlet,
    };
    for attempt in 0..100 {
        let mut rng = SeededRng::derive(seed, &[streams::PARTITION, attempt]);
        let weights: Vec<f64> = match &mode {
            QuantityMode::Dirichlet => sample_dirichlet(alpha, n_clients, &mut rng)?,
            QuantityMode::PowerLaw => {
                let raw: Vec<f64> = (1..=n_clients).map(|i| (i as f64).powf(-alpha)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
            QuantityMode::Fixed(w) => {
                if w.len() != n_clients {
                    return Err(Error::invalid("fixed weights length mismatch"));
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::invalid("fixed weights must sum to a positive value"));
                }
                w.iter().map(|x| x / total).collect()
            }
        };

        // Stratified: split every class pool by the same client weights.
        let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for class_pool in &by_class {
            if class_pool.is_empty() {
                continue;
            }
            let mut pool = class_pool.clone();
            rng.shuffle(&mut pool);
            let counts = apportion(pool.len(), &weights);
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                client_indices[client].extend_from_slice(&pool[cursor..cursor + count]);
                cursor += count;
            }
        }
        if client_indices.iter().all(|c| !c.is_empty()) {
            assert_exact_partition(&client_indices, labels.len())?;
            return Ok(PartitionSpec {
                scheme,
                alpha,
                n_clients,
                seed,
                client_indices,
            });
        }
        if matches!(mode, QuantityMode::Fixed(_) | QuantityMode::PowerLaw) {
            break; // deterministic weights cannot be resampled out of trouble
        }
    }
    Err(Error::runtime(
        "quantity-skew partitioning left a client empty",
    ))
}
