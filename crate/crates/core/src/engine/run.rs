use std::collections::BTreeMap;

use serde::Serialize;

use crate::compression::{
    dense_wire_bytes, lowrank_compress, randk_compress, topk_compress, EfState, WarmStart,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{
    init_params, MetricMode, MlpSpec, OptimizerState, ParamVector, PlateauScheduler,
};
use crate::netsim::{
    round_clock, Actor, Bucket, Channel, CostModel, RoundCharges, SimTime, TimeLedger,
};
use crate::numkit::SeededRng;
use crate::privacy::{dp_sanitize, LedgerRow, PrivacyLedger};
use crate::secure_agg::{
    combine_shares, encode_fixed, make_shares, secure_aggregate, share_wire_bytes, FixedCodec,
};
use crate::stats::{evaluate, Metric};
use crate::streams;

use super::{
    aggregate, batch_rng, local_train, sample_clients, AlgoConfig, Algorithm, ClientUpdate,
};

/// Learning-rate schedule settings shared by every loop.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerSettings {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    /// Training stops once the rate has been reduced this many times.
    pub target_reductions: usize,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        SchedulerSettings {
            lr: 0.1,
            factor: 0.1,
            patience: 10,
            target_reductions: 4,
        }
    }
}

/// Server-side optimizer kind (FedSGD) or the centralized loop's optimizer.
#[derive(Debug, Clone, Copy)]
pub enum ServerOpt {
    Sgd { momentum: f64 },
    Adam,
}

impl ServerOpt {
    pub(crate) fn build(&self, lr: f64, len: usize) -> OptimizerState {
        match self {
            ServerOpt::Sgd { momentum } => OptimizerState::sgd(lr, *momentum, len),
            ServerOpt::Adam => OptimizerState::adam(lr, len),
        }
    }
}

/// Differential-privacy stage, with the noise multiplier already calibrated.
#[derive(Debug, Clone, Copy)]
pub struct DpStage {
    pub clip: f64,
    pub sigma: f64,
    pub delta: f64,
    pub q: f64,
}

/// Secret-sharing stage: each client transmits `parts_sent` uniform parts and
/// keeps one, so the share count is `parts_sent + 1`.
#[derive(Debug, Clone, Copy)]
pub struct SecureStage {
    pub parts_sent: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum CompressionMethod {
    TopK { k_fraction: f64 },
    RandK { k_fraction: f64, rescale: bool },
    LowRank { rank: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct CompressionStage {
    pub method: CompressionMethod,
    pub error_feedback: bool,
    pub damping: f64,
}

/// Everything a horizontal federated run needs.
#[derive(Debug, Clone)]
pub struct HorizontalSetup {
    pub name: String,
    pub model: MlpSpec,
    pub metric: Metric,
    pub algo: AlgoConfig,
    pub shards: Vec<Dataset>,
    pub val: Dataset,
    pub test: Dataset,
    pub scheduler: SchedulerSettings,
    pub server_opt: ServerOpt,
    pub dp: Option<DpStage>,
    pub secure: Option<SecureStage>,
    pub compression: Option<CompressionStage>,
    pub channel: Channel,
    pub costs: CostModel,
    pub seed: u64,
}

/// One round's exported record (the JSONL schema).
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub format: u32,
    pub round: usize,
    pub metric: f64,
    pub lr: f64,
    pub reduction_count: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub train_s: f64,
    pub communicate_s: f64,
    pub encrypt_s: f64,
    pub idle_s: f64,
    pub other_s: f64,
}

/// Per-round, per-actor ledger export (the ledger CSV schema).
#[derive(Debug, Clone, Serialize)]
pub struct ActorRoundRow {
    pub round: usize,
    pub actor: String,
    pub train_s: f64,
    pub communicate_s: f64,
    pub encrypt_s: f64,
    pub idle_s: f64,
    pub other_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub seed: u64,
    /// Test-set metric of the final global model.
    pub final_metric: f64,
    /// Round at which the fourth rate reduction happened, when it did.
    pub convergence_rounds: Option<usize>,
    pub rounds_executed: usize,
    pub throughput: f64,
    pub overhead: f64,
    pub uplink_ratio: f64,
    pub eps_spent: Option<f64>,
    pub rounds: Vec<RoundRecord>,
    /// Sampled client ids per executed round.
    pub participants_per_round: Vec<Vec<usize>>,
    pub actor_rows: Vec<ActorRoundRow>,
    pub privacy_rows: Vec<LedgerRow>,
    pub ledger: TimeLedger,
    pub samples_processed: u64,
    pub params: ParamVector,
}

fn secs(t: SimTime) -> f64 {
    t.as_secs_f64()
}

pub(super) fn export_round(
    records: &mut Vec<RoundRecord>,
    actor_rows: &mut Vec<ActorRoundRow>,
    round: usize,
    outcome: &crate::netsim::RoundOutcome,
    metric: f64,
    lr: f64,
    reduction_count: usize,
) {
    let mut totals = crate::netsim::ActorLedger::default();
    let mut bytes_up = 0u64;
    let mut bytes_down = 0u64;
    for (actor, l) in &outcome.actors {
        totals.merge(l);
        match actor {
            Actor::Server => bytes_down += l.bytes_sent,
            Actor::Client(_) => bytes_up += l.bytes_sent,
        }
        actor_rows.push(ActorRoundRow {
            round,
            actor: actor.to_string(),
            train_s: secs(l.train),
            communicate_s: secs(l.communicate),
            encrypt_s: secs(l.encrypt),
            idle_s: secs(l.idle),
            other_s: secs(l.other),
            bytes_up: l.bytes_sent,
            bytes_down: l.bytes_received,
        });
    }
    records.push(RoundRecord {
        format: 1,
        round,
        metric,
        lr,
        reduction_count,
        bytes_up,
        bytes_down,
        train_s: secs(totals.train),
        communicate_s: secs(totals.communicate),
        encrypt_s: secs(totals.encrypt),
        idle_s: secs(totals.idle),
        other_s: secs(totals.other),
    });
}

/// Runs the synchronous horizontal FL loop to convergence (fourth rate
/// reduction) or the round cap.
pub fn run_horizontal(setup: &HorizontalSetup) -> Result<ExperimentResult> {
    setup.algo.validate()?;
    let n_clients = setup.shards.len();
    if n_clients < 2 {
        return Err(Error::invalid("need at least two clients"));
    }
    if setup.shards.iter().any(Dataset::is_empty) {
        return Err(Error::invalid("every client needs at least one sample"));
    }
    let p_len = setup.model.param_count();
    let min_participants = ((n_clients as f64) * setup.algo.client_fraction)
        .ceil()
        .max(1.0) as usize;
    if let Some(sec) = &setup.secure {
        if sec.parts_sent == 0 || sec.parts_sent + 1 > min_participants {
            return Err(Error::invalid(format!(
                "secret sharing needs 1 <= parts_sent <= participants-1 = {}",
                min_participants - 1
            )));
        }
    }

    let mut params = init_params(&setup.model, setup.seed);
    let mode = if setup.metric.higher_is_better() {
        MetricMode::HigherBetter
    } else {
        MetricMode::LowerBetter
    };
    let mut scheduler = PlateauScheduler::new(
        setup.scheduler.lr,
        setup.scheduler.factor,
        setup.scheduler.patience,
        mode,
    );
    let mut server_opt = match setup.algo.algorithm {
        Algorithm::FedSgd => Some(setup.server_opt.build(setup.scheduler.lr, params.len())),
        _ => None,
    };
    let mut privacy_ledger = match &setup.dp {
        Some(dp) => Some(PrivacyLedger::new(dp.delta)?),
        None => None,
    };
    let codec = FixedCodec::new(n_clients);
    let mut ef_states: BTreeMap<usize, EfState> = BTreeMap::new();
    let mut warm_states: BTreeMap<usize, WarmStart> = BTreeMap::new();

    let actors: Vec<Actor> = std::iter::once(Actor::Server)
        .chain((0..n_clients).map(Actor::Client))
        .collect();
    let mut ledger = TimeLedger::new(actors.clone());
    let mut records = Vec::new();
    let mut participants_per_round = Vec::new();
    let mut actor_rows = Vec::new();
    let mut raw_uplink = 0u64;
    let mut actual_uplink = 0u64;
    let mut samples_processed = 0u64;
    let mut convergence = None;
    let mut rounds_executed = 0;
    let mut best: Option<(f64, ParamVector)> = None;

    for round in 1..=setup.algo.max_rounds {
        rounds_executed = round;
        let mut charges = RoundCharges::new(actors.iter().copied());
        let lr = scheduler.lr();
        let mut sample_rng = SeededRng::derive(setup.seed, &[streams::CLIENT_SAMPLE, round as u64]);
        let participants = sample_clients(n_clients, setup.algo.client_fraction, &mut sample_rng);
        participants_per_round.push(participants.clone());

        // Broadcast current parameters.
        let down_bytes = dense_wire_bytes(p_len);
        for &c in &participants {
            charges.transfer(Actor::Server, Actor::Client(c), down_bytes, &setup.channel);
        }

        // Local phase.
        let mut updates: Vec<(usize, ClientUpdate)> = Vec::with_capacity(participants.len());
        for &c in &participants {
            let shard = &setup.shards[c];
            let mut rng = batch_rng(setup.seed, c, round);
            let timer = std::time::Instant::now();
            let mut update = local_train(&setup.model, &params, shard, &setup.algo, lr, &mut rng)?;
            let trained = timer.elapsed();
            let pass_samples = if setup.algo.algorithm == Algorithm::FedSgd {
                shard.len()
            } else {
                shard.len() * setup.algo.local_epochs
            };
            samples_processed += pass_samples as u64;
            charges.charge(
                Actor::Client(c),
                Bucket::Train,
                setup
                    .costs
                    .compute_charge(setup.costs.train_time(pass_samples, p_len), trained),
            );

            if let Some(dp) = &setup.dp {
                let mut noise_rng =
                    SeededRng::derive(setup.seed, &[streams::DP_NOISE, c as u64, round as u64]);
                let timer = std::time::Instant::now();
                update.payload = dp_sanitize(&update.payload, dp.clip, dp.sigma, &mut noise_rng)?;
                charges.charge(
                    Actor::Client(c),
                    Bucket::Train,
                    setup
                        .costs
                        .compute_charge(setup.costs.dp_time(p_len), timer.elapsed()),
                );
            }

            if let Some(comp) = &setup.compression {
                let timer = std::time::Instant::now();
                let effective = if comp.error_feedback {
                    let ef = ef_states
                        .entry(c)
                        .or_insert_with(|| EfState::new(&update.payload, comp.damping));
                    ef.apply(&update.payload)?
                } else {
                    update.payload.clone()
                };
                let compressed = match comp.method {
                    CompressionMethod::TopK { k_fraction } => {
                        topk_compress(&effective, k_fraction)?
                    }
                    CompressionMethod::RandK {
                        k_fraction,
                        rescale,
                    } => {
                        let mut rng = SeededRng::derive(
                            setup.seed,
                            &[streams::RANDK, c as u64, round as u64],
                        );
                        randk_compress(&effective, k_fraction, rescale, &mut rng)?
                    }
                    CompressionMethod::LowRank { rank } => {
                        let warm = warm_states.entry(c).or_default();
                        let mut rng = SeededRng::derive(
                            setup.seed,
                            &[streams::LOWRANK, c as u64, round as u64],
                        );
                        lowrank_compress(&effective, rank, warm, &mut rng)?
                    }
                };
                let decompressed = compressed.decompress(&effective)?;
                if comp.error_feedback {
                    let ef = ef_states.get_mut(&c).expect("state created above");
                    ef.update(&effective, &decompressed)?;
                }
                update.payload = decompressed;
                update.wire_bytes = compressed.wire_bytes;
                charges.charge(
                    Actor::Client(c),
                    Bucket::Train,
                    setup
                        .costs
                        .compute_charge(setup.costs.compress_time(p_len), timer.elapsed()),
                );
            } else {
                update.wire_bytes = dense_wire_bytes(p_len);
            }
            updates.push((c, update));
        }
        if let (Some(dp), Some(pledger)) = (&setup.dp, privacy_ledger.as_mut()) {
            pledger.record_round(dp.q, dp.sigma)?;
        }

        raw_uplink += (participants.len() * dense_wire_bytes(p_len)) as u64;

        // Upload and aggregate.
        if let Some(sec) = &setup.secure {
            let k = sec.parts_sent + 1;
            let total_n: f64 = updates.iter().map(|(_, u)| u.n_samples as f64).sum();
            let tau_eff: f64 = updates
                .iter()
                .map(|(_, u)| u.n_samples as f64 / total_n * u.tau as f64)
                .sum();

            // Clients pre-scale by their public aggregation weight so the
            // ring sum equals the weighted combination.
            let mut bundles = Vec::with_capacity(updates.len());
            for (pos, (c, u)) in updates.iter().enumerate() {
                let timer = std::time::Instant::now();
                let mut scaled = u.payload.clone();
                let mut weight = u.n_samples as f64 / total_n;
                if setup.algo.algorithm == Algorithm::FedNova {
                    weight /= u.tau as f64;
                }
                scaled.scale(weight);
                let encoded = encode_fixed(&scaled, &codec)?;
                let mut rng =
                    SeededRng::derive(setup.seed, &[streams::SHARES, *c as u64, round as u64]);
                let bundle = make_shares(&encoded, pos, k, &codec, &mut rng)?;
                charges.charge(
                    Actor::Client(*c),
                    Bucket::Encrypt,
                    setup
                        .costs
                        .compute_charge(setup.costs.encrypt_time(p_len, k), timer.elapsed()),
                );
                bundles.push(bundle);
            }
            // Route the transmitted parts around the participant ring.
            let share_bytes = share_wire_bytes(p_len);
            let mut inbox: Vec<Vec<&[u64]>> = vec![Vec::new(); updates.len()];
            for bundle in &bundles {
                for part in 0..k - 1 {
                    let dest = bundle.route(part, updates.len());
                    charges.transfer(
                        Actor::Client(updates[bundle.owner].0),
                        Actor::Client(updates[dest].0),
                        share_bytes,
                        &setup.channel,
                    );
                    inbox[dest].push(&bundle.parts[part]);
                }
            }
            let mut masked = Vec::with_capacity(updates.len());
            for (pos, bundle) in bundles.iter().enumerate() {
                let m = combine_shares(bundle.kept_part(), &inbox[pos], k - 1, &codec)?;
                charges.transfer(
                    Actor::Client(updates[pos].0),
                    Actor::Server,
                    share_bytes,
                    &setup.channel,
                );
                actual_uplink += ((k - 1) * share_bytes + share_bytes) as u64;
                masked.push(m);
            }
            let timer = std::time::Instant::now();
            let combined = secure_aggregate(&masked, &codec, &params)?;
            charges.charge(
                Actor::Server,
                Bucket::Encrypt,
                setup
                    .costs
                    .compute_charge(setup.costs.encrypt_time(p_len, 1), timer.elapsed()),
            );
            charges.charge(
                Actor::Server,
                Bucket::Other,
                setup.costs.aggregate_time(p_len, masked.len()),
            );
            match setup.algo.algorithm {
                Algorithm::FedSgd => {
                    let opt = server_opt.as_mut().expect("fedsgd server optimizer");
                    opt.step(&mut params, &combined)?;
                }
                Algorithm::FedAvg | Algorithm::FedProx { .. } => {
                    params.add_scaled(&combined, 1.0)?;
                }
                Algorithm::FedNova => {
                    params.add_scaled(&combined, tau_eff)?;
                }
            }
        } else {
            for (c, u) in &updates {
                charges.transfer(
                    Actor::Client(*c),
                    Actor::Server,
                    u.wire_bytes,
                    &setup.channel,
                );
                actual_uplink += u.wire_bytes as u64;
            }
            let plain: Vec<ClientUpdate> = updates.iter().map(|(_, u)| u.clone()).collect();
            charges.charge(
                Actor::Server,
                Bucket::Other,
                setup.costs.aggregate_time(p_len, plain.len()),
            );
            aggregate(
                &plain,
                setup.algo.algorithm,
                &mut params,
                server_opt.as_mut(),
            )?;
        }

        // Server-side evaluation drives the schedule; eval time counts as
        // training time in the overhead metric.
        let timer = std::time::Instant::now();
        let val_metric = evaluate(&setup.model, &params, &setup.val, setup.metric)?;
        charges.charge(
            Actor::Server,
            Bucket::Train,
            setup.costs.compute_charge(
                setup.costs.eval_time(setup.val.len(), p_len),
                timer.elapsed(),
            ),
        );
        charges.charge(Actor::Server, Bucket::Other, setup.costs.other_time());
        for &c in &participants {
            charges.charge(Actor::Client(c), Bucket::Other, setup.costs.other_time());
        }

        let outcome = round_clock(&mut ledger, &charges)?;
        let improved = match (&best, setup.metric.higher_is_better()) {
            (None, _) => true,
            (Some((b, _)), true) => val_metric > *b,
            (Some((b, _)), false) => val_metric < *b,
        };
        if improved {
            best = Some((val_metric, params.clone()));
        }
        let decision = scheduler.step(val_metric)?;
        if let Some(opt) = server_opt.as_mut() {
            opt.set_lr(decision.lr);
        }
        export_round(
            &mut records,
            &mut actor_rows,
            round,
            &outcome,
            val_metric,
            decision.lr,
            decision.reduction_count,
        );
        if decision.reduction_count >= setup.scheduler.target_reductions {
            convergence = Some(round);
            break;
        }
    }

    // The reported model is the best-validation checkpoint, so the final
    // metric does not depend on where the last round's noise left off.
    let reported = best.map(|(_, p)| p).unwrap_or_else(|| params.clone());
    let final_metric = evaluate(&setup.model, &reported, &setup.test, setup.metric)?;
    let (overhead, throughput) =
        crate::netsim::overhead_and_throughput(&ledger, samples_processed)?;
    let uplink_ratio = raw_uplink as f64 / actual_uplink.max(1) as f64;
    let (eps_spent, privacy_rows) = match privacy_ledger {
        Some(l) => (Some(l.epsilon()), l.rows()),
        None => (None, Vec::new()),
    };
    Ok(ExperimentResult {
        name: setup.name.clone(),
        seed: setup.seed,
        final_metric,
        convergence_rounds: convergence,
        rounds_executed,
        throughput,
        overhead,
        uplink_ratio,
        eps_spent,
        rounds: records,
        participants_per_round,
        actor_rows,
        privacy_rows,
        ledger,
        samples_processed,
        params: reported,
    })
}

/// A non-federated run (the combined baseline, or one party training solo):
/// one actor, one epoch per round, the same stopping rule.
#[derive(Debug, Clone)]
pub struct CentralizedSetup {
    pub name: String,
    pub model: MlpSpec,
    pub metric: Metric,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub optimizer: ServerOpt,
    pub scheduler: SchedulerSettings,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub costs: CostModel,
    pub seed: u64,
}

pub fn run_centralized(setup: &CentralizedSetup) -> Result<ExperimentResult> {
    if setup.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if setup.batch_size == 0 || setup.max_rounds == 0 {
        return Err(Error::invalid("batch size and max rounds must be positive"));
    }
    let p_len = setup.model.param_count();
    let mut params = init_params(&setup.model, setup.seed);
    let mode = if setup.metric.higher_is_better() {
        MetricMode::HigherBetter
    } else {
        MetricMode::LowerBetter
    };
    let mut scheduler = PlateauScheduler::new(
        setup.scheduler.lr,
        setup.scheduler.factor,
        setup.scheduler.patience,
        mode,
    );
    let mut opt = setup.optimizer.build(setup.scheduler.lr, params.len());

    let actor = Actor::Client(0);
    let mut ledger = TimeLedger::new([actor]);
    let mut records = Vec::new();
    let mut actor_rows = Vec::new();
    let mut samples_processed = 0u64;
    let mut convergence = None;
    let mut rounds_executed = 0;
    let mut best: Option<(f64, ParamVector)> = None;
    let n = setup.train.len();

    for round in 1..=setup.max_rounds {
        rounds_executed = round;
        let mut charges = RoundCharges::new([actor]);
        let mut order: Vec<usize> = (0..n).collect();
        batch_rng(setup.seed, 0, round).shuffle(&mut order);
        let timer = std::time::Instant::now();
        for batch_idx in order.chunks(setup.batch_size) {
            let (x, t) = setup.train.gather_batch(batch_idx)?;
            let (_, cache) = crate::models::forward(&setup.model, &params, &x)?;
            let grad = crate::models::backward(&setup.model, &params, &cache, &t)?;
            opt.step(&mut params, &grad)?;
        }
        samples_processed += n as u64;
        charges.charge(
            actor,
            Bucket::Train,
            setup
                .costs
                .compute_charge(setup.costs.train_time(n, p_len), timer.elapsed()),
        );

        let timer = std::time::Instant::now();
        let val_metric = evaluate(&setup.model, &params, &setup.val, setup.metric)?;
        charges.charge(
            actor,
            Bucket::Train,
            setup.costs.compute_charge(
                setup.costs.eval_time(setup.val.len(), p_len),
                timer.elapsed(),
            ),
        );
        charges.charge(actor, Bucket::Other, setup.costs.other_time());

        let outcome = round_clock(&mut ledger, &charges)?;
        let improved = match (&best, setup.metric.higher_is_better()) {
            (None, _) => true,
            (Some((b, _)), true) => val_metric > *b,
            (Some((b, _)), false) => val_metric < *b,
        };
        if improved {
            best = Some((val_metric, params.clone()));
        }
        let decision = scheduler.step(val_metric)?;
        opt.set_lr(decision.lr);
        export_round(
            &mut records,
            &mut actor_rows,
            round,
            &outcome,
            val_metric,
            decision.lr,
            decision.reduction_count,
        );
        if decision.reduction_count >= setup.scheduler.target_reductions {
            convergence = Some(round);
            break;
        }
    }

    let reported = best.map(|(_, p)| p).unwrap_or_else(|| params.clone());
    let final_metric = evaluate(&setup.model, &reported, &setup.test, setup.metric)?;
    let (overhead, throughput) =
        crate::netsim::overhead_and_throughput(&ledger, samples_processed)?;
    Ok(ExperimentResult {
        name: setup.name.clone(),
        seed: setup.seed,
        final_metric,
        convergence_rounds: convergence,
        rounds_executed,
        throughput,
        overhead,
        uplink_ratio: 1.0,
        eps_spent: None,
        rounds: records,
        participants_per_round: (0..rounds_executed).map(|_| vec![0]).collect(),
        actor_rows,
        privacy_rows: Vec::new(),
        ledger,
        samples_processed,
        params: reported,
    })
}
