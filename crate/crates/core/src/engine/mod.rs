//! The horizontal FL training loop: client sampling, local training with an
//! optional proximal term, and aggregation under FedSGD / FedAvg / FedProx /
//! FedNova, plus the centralized (combined/solo) and vertical split loops
//! that share its bookkeeping.

mod run;
mod vertical;

pub use run::{
    run_centralized, run_horizontal, ActorRoundRow, CentralizedSetup, CompressionMethod,
    CompressionStage, DpStage, ExperimentResult, HorizontalSetup, RoundRecord, SchedulerSettings,
    SecureStage, ServerOpt,
};
pub use vertical::{run_vertical, VerticalSetup};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{backward, forward, MlpSpec, OptimizerState, ParamVector};
use crate::numkit::SeededRng;
use crate::streams;

/// Aggregation algorithm. FedSGD averages one full-pass gradient per client
/// under full participation; the FedAvg family averages parameter deltas from
/// multi-step local training, with FedProx adding a proximal pull toward the
/// global model and FedNova normalizing each delta by its local step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    FedSgd,
    FedAvg,
    FedProx { mu: f64 },
    FedNova,
}

/// Federated loop configuration.
#[derive(Debug, Clone)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub max_rounds: usize,
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::invalid("client fraction must lie in (0, 1]"));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.max_rounds == 0 {
            return Err(Error::invalid(
                "local epochs, batch size and max rounds must be positive",
            ));
        }
        if self.algorithm == Algorithm::FedSgd
            && (self.client_fraction != 1.0 || self.local_epochs != 1)
        {
            return Err(Error::invalid(
                "fedsgd requires full participation and one local epoch",
            ));
        }
        if let Algorithm::FedProx { mu } = self.algorithm {
            if mu < 0.0 || !mu.is_finite() {
                return Err(Error::invalid("fedprox mu must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// One client's round output.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    /// Gradient for FedSGD, parameter delta for the FedAvg family.
    pub payload: ParamVector,
    /// Local optimizer steps taken this round.
    pub tau: usize,
    /// Samples in the client's shard.
    pub n_samples: usize,
    /// Serialized size of what this client put on the wire.
    pub wire_bytes: usize,
}

/// Uniform sample of `ceil(fraction * n)` distinct client ids, sorted so that
/// aggregation order never depends on scheduling.
pub fn sample_clients(n_clients: usize, fraction: f64, rng: &mut SeededRng) -> Vec<usize> {
    let count = ((n_clients as f64) * fraction).ceil().max(1.0) as usize;
    rng.sample_indices(n_clients, count.min(n_clients))
}

/// Runs one client's local phase and returns its update.
///
/// FedSGD computes a single full-pass mean gradient (tau = 1). The FedAvg
/// family runs `local_epochs` of plain mini-batch SGD from the broadcast
/// parameters; FedProx adds `mu (w - w_global)` to every step's gradient; the
/// returned payload is the parameter delta and tau counts optimizer steps.
pub fn local_train(
    spec: &MlpSpec,
    global: &ParamVector,
    shard: &Dataset,
    algo: &AlgoConfig,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<ClientUpdate> {
    if shard.is_empty() {
        return Err(Error::invalid("client shard is empty"));
    }
    let n = shard.len();
    if algo.algorithm == Algorithm::FedSgd {
        let (x, t) = shard.all_targets()?;
        let (_, cache) = forward(spec, global, &x)?;
        let grad = backward(spec, global, &cache, &t)?;
        return Ok(ClientUpdate {
            payload: grad,
            tau: 1,
            n_samples: n,
            wire_bytes: 0,
        });
    }

    let mut w = global.clone();
    let mut tau = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..algo.local_epochs {
        rng.shuffle(&mut order);
        for batch_idx in order.chunks(algo.batch_size) {
            let (x, t) = shard.gather_batch(batch_idx)?;
            let (_, cache) = forward(spec, &w, &x)?;
            let mut grad = backward(spec, &w, &cache, &t)?;
            if let Algorithm::FedProx { mu } = algo.algorithm {
                if mu != 0.0 {
                    let drift = w.minus(global)?;
                    grad.add_scaled(&drift, mu)?;
                }
            }
            w.add_scaled(&grad, -lr)?;
            tau += 1;
        }
    }
    let delta = w.minus(global)?;
    Ok(ClientUpdate {
        payload: delta,
        tau,
        n_samples: n,
        wire_bytes: 0,
    })
}

/// Sample-weighted mean of the update payloads.
pub fn weighted_mean_payload(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("no updates to aggregate"))?;
    let total: f64 = updates.iter().map(|u| u.n_samples as f64).sum();
    let mut out = first.payload.zeros_like();
    for u in updates {
        if !u.payload.same_shape(&first.payload) {
            return Err(Error::shape("update payload lengths differ"));
        }
        out.add_scaled(&u.payload, u.n_samples as f64 / total)?;
    }
    Ok(out)
}

/// Applies one aggregation step to the global parameters.
///
/// FedSGD feeds the weighted mean gradient to the server optimizer. FedAvg
/// and FedProx add the weighted mean delta. FedNova rescales: with
/// `tau_eff = sum w_i tau_i`, the applied update is
/// `tau_eff * sum w_i (delta_i / tau_i)`.
pub fn aggregate(
    updates: &[ClientUpdate],
    algorithm: Algorithm,
    params: &mut ParamVector,
    server_opt: Option<&mut OptimizerState>,
) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::invalid("no updates to aggregate"));
    }
    for u in updates {
        if !u.payload.is_finite() {
            return Err(Error::NonFinite("client update".into()));
        }
        if u.tau == 0 || u.n_samples == 0 {
            return Err(Error::invalid("updates need tau >= 1 and samples >= 1"));
        }
    }
    match algorithm {
        Algorithm::FedSgd => {
            let grad = weighted_mean_payload(updates)?;
            let opt = server_opt
                .ok_or_else(|| Error::invalid("fedsgd aggregation needs the server optimizer"))?;
            opt.step(params, &grad)?;
        }
        Algorithm::FedAvg | Algorithm::FedProx { .. } => {
            let delta = weighted_mean_payload(updates)?;
            params.add_scaled(&delta, 1.0)?;
        }
        Algorithm::FedNova => {
            let total: f64 = updates.iter().map(|u| u.n_samples as f64).sum();
            let tau_eff: f64 = updates
                .iter()
                .map(|u| u.n_samples as f64 / total * u.tau as f64)
                .sum();
            let mut combo = updates[0].payload.zeros_like();
            for u in updates {
                let w = u.n_samples as f64 / total / u.tau as f64;
                combo.add_scaled(&u.payload, w)?;
            }
            params.add_scaled(&combo, tau_eff)?;
        }
    }
    Ok(())
}

/// Derives the per-(client, round) generator for local batch order.
pub fn batch_rng(seed: u64, client: usize, round: usize) -> SeededRng {
    SeededRng::derive(seed, &[streams::BATCH, client as u64, round as u64])
}
