use crate::compression::dense_wire_bytes;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{init_params, MetricMode, OptimizerState, ParamVector, PlateauScheduler};
use crate::netsim::{round_clock, Actor, Bucket, Channel, CostModel, RoundCharges, TimeLedger};
use crate::numkit::DenseMatrix;
use crate::numkit::SeededRng;
use crate::splitnn::{split_backward, split_forward, SplitSpec};
use crate::stats::Metric;
use crate::streams;

use super::run::{export_round, ExperimentResult, SchedulerSettings, ServerOpt};

/// A vertical (split network) run over an aligned dataset whose feature
/// columns are owned by parties in contiguous blocks.
#[derive(Debug, Clone)]
pub struct VerticalSetup {
    pub name: String,
    pub split: SplitSpec,
    /// Column spans of the aligned feature matrix, one `(offset, width)` per
    /// party, in party order.
    pub feature_blocks: Vec<(usize, usize)>,
    pub metric: Metric,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub optimizer: ServerOpt,
    pub scheduler: SchedulerSettings,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub channel: Channel,
    pub costs: CostModel,
    pub seed: u64,
}

fn party_views(ds: &Dataset, blocks: &[(usize, usize)]) -> Result<Vec<DenseMatrix>> {
    blocks
        .iter()
        .map(|&(off, width)| ds.features.col_slice(off, width))
        .collect()
}

fn metric_on(
    setup: &VerticalSetup,
    bottoms: &[ParamVector],
    top: &ParamVector,
    ds: &Dataset,
) -> Result<f64> {
    let views = party_views(ds, &setup.feature_blocks)?;
    let (outputs, _) = split_forward(&setup.split, bottoms, &views, top)?;
    crate::stats::metric_from_outputs(&outputs, &ds.labels, setup.metric)
}

/// Runs split training: the server coordinates shared mini-batch indices,
/// parties push cut activations up and receive cut gradients back each step.
pub fn run_vertical(setup: &VerticalSetup) -> Result<ExperimentResult> {
    let n_parties = setup.split.n_parties();
    if setup.feature_blocks.len() != n_parties {
        return Err(Error::shape("one feature block per party"));
    }
    for (party, (&(off, width), bottom)) in setup
        .feature_blocks
        .iter()
        .zip(&setup.split.bottoms)
        .enumerate()
    {
        if off + width > setup.train.dim() {
            return Err(Error::shape(format!("party {party} block out of range")));
        }
        if width != bottom.input_width() {
            return Err(Error::shape(format!(
                "party {party} block width {} != bottom input {}",
                width,
                bottom.input_width()
            )));
        }
    }
    if setup.batch_size == 0 || setup.max_rounds == 0 {
        return Err(Error::invalid("batch size and max rounds must be positive"));
    }

    let mut bottoms: Vec<ParamVector> = setup
        .split
        .bottoms
        .iter()
        .enumerate()
        .map(|(i, spec)| init_params(spec, setup.seed.wrapping_add(1 + i as u64)))
        .collect();
    let mut top = init_params(&setup.split.top, setup.seed);
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
    let mut party_opts: Vec<OptimizerState> = bottoms
        .iter()
        .map(|p| setup.optimizer.build(setup.scheduler.lr, p.len()))
        .collect();
    let mut top_opt = setup.optimizer.build(setup.scheduler.lr, top.len());

    let actors: Vec<Actor> = std::iter::once(Actor::Server)
        .chain((0..n_parties).map(Actor::Client))
        .collect();
    let mut ledger = TimeLedger::new(actors.clone());
    let mut records = Vec::new();
    let mut actor_rows = Vec::new();
    let mut samples_processed = 0u64;
    let mut convergence = None;
    let mut rounds_executed = 0;
    let mut best: Option<(f64, Vec<ParamVector>, ParamVector)> = None;
    let n = setup.train.len();
    let cut_widths = setup.split.cut_widths();
    let party_param_lens: Vec<usize> = setup
        .split
        .bottoms
        .iter()
        .map(|b| b.param_count())
        .collect();

    for round in 1..=setup.max_rounds {
        rounds_executed = round;
        let mut charges = RoundCharges::new(actors.iter().copied());
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::derive(setup.seed, &[streams::BATCH, round as u64]).shuffle(&mut order);

        for batch_idx in order.chunks(setup.batch_size) {
            let batch = setup.train.subset(batch_idx)?;
            let views = party_views(&batch, &setup.feature_blocks)?;
            let rows = batch.len();

            // Server broadcasts the shared row indices.
            let idx_bytes = 8 + 8 * rows;
            for p in 0..n_parties {
                charges.transfer(Actor::Server, Actor::Client(p), idx_bytes, &setup.channel);
            }

            let timer = std::time::Instant::now();
            let (_, cache) = split_forward(&setup.split, &bottoms, &views, &top)?;
            let (_, targets) = batch.all_targets()?;
            let grads = split_backward(&setup.split, &bottoms, &top, &cache, &targets)?;
            let step_elapsed = timer.elapsed();

            // Cut activations up, cut gradients back.
            for p in 0..n_parties {
                let cut_bytes = dense_wire_bytes(rows * cut_widths[p]);
                charges.transfer(Actor::Client(p), Actor::Server, cut_bytes, &setup.channel);
                charges.transfer(Actor::Server, Actor::Client(p), cut_bytes, &setup.channel);
                charges.charge(
                    Actor::Client(p),
                    Bucket::Train,
                    setup.costs.compute_charge(
                        setup.costs.train_time(rows, party_param_lens[p]),
                        step_elapsed / n_parties as u32,
                    ),
                );
                party_opts[p].step(&mut bottoms[p], &grads.bottoms[p])?;
            }
            charges.charge(
                Actor::Server,
                Bucket::Train,
                setup
                    .costs
                    .compute_charge(setup.costs.train_time(rows, top.len()), step_elapsed),
            );
            top_opt.step(&mut top, &grads.top)?;
        }
        samples_processed += n as u64;

        // Validation pass: parties forward once more and ship activations.
        let timer = std::time::Instant::now();
        let val_metric = metric_on(setup, &bottoms, &top, &setup.val)?;
        let eval_elapsed = timer.elapsed();
        for p in 0..n_parties {
            let cut_bytes = dense_wire_bytes(setup.val.len() * cut_widths[p]);
            charges.transfer(Actor::Client(p), Actor::Server, cut_bytes, &setup.channel);
            charges.charge(
                Actor::Client(p),
                Bucket::Train,
                setup.costs.compute_charge(
                    setup.costs.eval_time(setup.val.len(), party_param_lens[p]),
                    eval_elapsed / (n_parties as u32 + 1),
                ),
            );
            charges.charge(Actor::Client(p), Bucket::Other, setup.costs.other_time());
        }
        charges.charge(
            Actor::Server,
            Bucket::Train,
            setup.costs.compute_charge(
                setup.costs.eval_time(setup.val.len(), top.len()),
                eval_elapsed / (n_parties as u32 + 1),
            ),
        );
        charges.charge(Actor::Server, Bucket::Other, setup.costs.other_time());

        let outcome = round_clock(&mut ledger, &charges)?;
        let improved = match (&best, setup.metric.higher_is_better()) {
            (None, _) => true,
            (Some((b, _, _)), true) => val_metric > *b,
            (Some((b, _, _)), false) => val_metric < *b,
        };
        if improved {
            best = Some((val_metric, bottoms.clone(), top.clone()));
        }
        let decision = scheduler.step(val_metric)?;
        for opt in party_opts.iter_mut() {
            opt.set_lr(decision.lr);
        }
        top_opt.set_lr(decision.lr);
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

    let (bottoms, top) = match best {
        Some((_, b, t)) => (b, t),
        None => (bottoms, top),
    };
    let final_metric = metric_on(setup, &bottoms, &top, &setup.test)?;
    let (overhead, throughput) =
        crate::netsim::overhead_and_throughput(&ledger, samples_processed)?;

    // Pack party and top parameters into one flat vector for callers that
    // want to inspect the final model.
    let total_len: usize = party_param_lens.iter().sum::<usize>() + top.len();
    let mut flat = Vec::with_capacity(total_len);
    for b in &bottoms {
        flat.extend_from_slice(b.as_slice());
    }
    flat.extend_from_slice(top.as_slice());
    let reg = std::sync::Arc::new(crate::models::ShapeRegistry::for_layer_widths(&[
        total_len - 1,
        1,
    ]));
    let params = ParamVector::from_values(reg, flat)?;

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
        participants_per_round: (0..rounds_executed)
            .map(|_| (0..n_parties).collect())
            .collect(),
        actor_rows,
        privacy_rows: Vec::new(),
        ledger,
        samples_processed,
        params,
    })
}
