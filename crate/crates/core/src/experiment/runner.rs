use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{
    align_vertical, load_csv, partition_iid, partition_label_skew, partition_quantity_skew,
    split_train_test_val, synth_blobs, synth_regression, synth_vertical_blobs, Dataset, LabelOwner,
    QuantityMode,
};
use crate::engine::{
    run_centralized, run_horizontal, run_vertical, AlgoConfig, Algorithm, CentralizedSetup,
    CompressionMethod, CompressionStage, DpStage, ExperimentResult, HorizontalSetup,
    SchedulerSettings, SecureStage, ServerOpt, VerticalSetup,
};
use crate::error::{Error, Result};
use crate::models::{Activation, Head, MlpSpec};
use crate::netsim::Channel;
use crate::privacy::{calibrate_sigma, DpConfig};
use crate::splitnn::SplitSpec;
use crate::stats::{mean_std, Metric, RunRecord};

use super::config::{
    ActivationConfig, AlgorithmName, CompressionMethodConfig, ExperimentConfig, HeadConfig,
    LabelKindConfig, MetricConfig, OptimizerConfig, PartitionSchemeConfig, WorkloadKind,
};

fn activation(a: ActivationConfig) -> Activation {
    match a {
        ActivationConfig::Relu => Activation::Relu,
        ActivationConfig::Tanh => Activation::Tanh,
    }
}

fn head(h: HeadConfig) -> Head {
    match h {
        HeadConfig::Softmax => Head::SoftmaxCrossEntropy,
        HeadConfig::Sigmoid => Head::SigmoidBce,
        HeadConfig::Linear => Head::LinearMse,
    }
}

fn metric_for(config: &ExperimentConfig) -> Metric {
    match config.model.metric {
        Some(MetricConfig::Top1) => Metric::Top1,
        Some(MetricConfig::Binary) => Metric::Binary,
        Some(MetricConfig::Mae) => Metric::Mae,
        Some(MetricConfig::Mse) => Metric::Mse,
        None => match config.model.head {
            HeadConfig::Softmax => Metric::Top1,
            HeadConfig::Sigmoid => Metric::Binary,
            HeadConfig::Linear => Metric::Mse,
        },
    }
}

fn server_opt(config: &ExperimentConfig) -> ServerOpt {
    match config.model.optimizer {
        OptimizerConfig::Sgd => ServerOpt::Sgd {
            momentum: config.model.momentum,
        },
        OptimizerConfig::Adam => ServerOpt::Adam,
    }
}

fn scheduler(config: &ExperimentConfig) -> SchedulerSettings {
    SchedulerSettings {
        lr: config.model.lr,
        factor: config.model.factor,
        patience: config.model.patience,
        target_reductions: config.model.max_reductions,
    }
}

fn channel(config: &ExperimentConfig) -> Result<Channel> {
    let bandwidth = match config.channel.bandwidth_mbps {
        Some(b) if b > 0.0 => Some(b * 1e6),
        _ => None,
    };
    Channel::new(bandwidth, config.channel.latency_ms / 1e3)
}

/// Output width from the full dataset so a class missing from one split
/// cannot shrink the head.
fn output_width(config: &ExperimentConfig, full: &Dataset) -> usize {
    match config.model.head {
        HeadConfig::Softmax => full.labels.n_classes().unwrap_or(2).max(2),
        HeadConfig::Sigmoid | HeadConfig::Linear => 1,
    }
}

fn model_spec(config: &ExperimentConfig, input: usize, output: usize) -> Result<MlpSpec> {
    let mut widths = vec![input];
    widths.extend_from_slice(&config.model.hidden);
    widths.push(output);
    MlpSpec::new(
        widths,
        activation(config.model.activation),
        head(config.model.head),
    )
}

fn coerce_labels(mut ds: Dataset, kind: Option<LabelKindConfig>) -> Result<Dataset> {
    use crate::data::Labels;
    ds.labels = match (kind, ds.labels) {
        (Some(LabelKindConfig::Real), Labels::Classes(c)) => {
            Labels::Reals(c.into_iter().map(|v| v as f64).collect())
        }
        (Some(LabelKindConfig::Class), Labels::Reals(v)) => {
            if v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                return Err(Error::invalid(
                    "label_kind = class but the label column is not nonnegative integers",
                ));
            }
            Labels::Classes(v.into_iter().map(|x| x as usize).collect())
        }
        (_, labels) => labels,
    };
    Ok(ds)
}

fn horizontal_base(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let w = &config.workload;
    match w.kind {
        WorkloadKind::Blobs => synth_blobs(
            w.samples,
            w.features,
            w.classes,
            w.separation,
            w.noise,
            seed,
        ),
        WorkloadKind::Regression => Ok(synth_regression(w.samples, w.features, w.noise, seed)?.0),
        WorkloadKind::Csv => {
            coerce_labels(load_csv(w.path.as_ref().expect("validated"))?, w.label_kind)
        }
        _ => Err(Error::invalid("vertical workload in a horizontal run")),
    }
}

fn vertical_base(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Vec<(usize, usize)>)> {
    let w = &config.workload;
    let (left, right) = match w.kind {
        WorkloadKind::VerticalBlobs => synth_vertical_blobs(
            w.samples,
            w.features,
            w.features_right,
            w.classes,
            w.separation,
            w.noise,
            w.overlap,
            seed,
        )?,
        WorkloadKind::VerticalCsv => {
            let left = coerce_labels(load_csv(w.path.as_ref().expect("validated"))?, w.label_kind)?;
            let right = coerce_labels(
                load_csv(w.path_right.as_ref().expect("validated"))?,
                w.label_kind,
            )?;
            (left, right)
        }
        _ => return Err(Error::invalid("horizontal workload in a vertical run")),
    };
    let d_left = left.dim();
    let d_right = right.dim();
    let aligned = align_vertical(&left, &right, LabelOwner::Left)?;
    Ok((aligned, vec![(0, d_left), (d_left, d_right)]))
}

fn partition_shards(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<Vec<Dataset>> {
    let clients = config.partition.clients;
    let alpha = config.partition.alpha;
    let spec = match config.partition.scheme {
        PartitionSchemeConfig::Iid => partition_iid(train.len(), clients, seed)?,
        PartitionSchemeConfig::LabelSkew => {
            let labels = train
                .labels
                .class_slice()
                .ok_or_else(|| Error::invalid("label skew needs class labels"))?;
            partition_label_skew(labels, alpha, clients, seed)?
        }
        PartitionSchemeConfig::QuantitySkew | PartitionSchemeConfig::PowerLaw => {
            let labels: Vec<usize> = match train.labels.class_slice() {
                Some(l) => l.to_vec(),
                // Regression data has no classes; stratify on a single bin.
                None => vec![0; train.len()],
            };
            let mode = if config.partition.scheme == PartitionSchemeConfig::PowerLaw {
                QuantityMode::PowerLaw
            } else {
                QuantityMode::Dirichlet
            };
            partition_quantity_skew(&labels, alpha, clients, seed, mode)?
        }
    };
    spec.client_indices
        .iter()
        .map(|idx| train.subset(idx))
        .collect()
}

fn dp_stage(
    config: &ExperimentConfig,
    train_len: usize,
    shards: &[Dataset],
) -> Result<Option<(DpStage, usize)>> {
    let Some(dp) = &config.dp else {
        return Ok(None);
    };
    let delta = dp
        .delta
        .unwrap_or_else(|| DpConfig::default_delta(train_len));
    let q = if config.algorithm.name == AlgorithmName::FedSgd {
        1.0
    } else {
        let min_shard = shards.iter().map(Dataset::len).min().unwrap_or(1).max(1);
        (config.model.batch_size as f64 / min_shard as f64).min(1.0)
    };
    let sigma = match dp.sigma {
        Some(s) => s,
        None => calibrate_sigma(dp.epsilon.expect("validated"), delta, q, dp.max_rounds)?,
    };
    Ok(Some((
        DpStage {
            clip: dp.clip,
            sigma,
            delta,
            q,
        },
        dp.max_rounds,
    )))
}

/// Per-party tower shape: first hidden layer twice the input, second hidden
/// layer half of it.
fn vertical_tower(input: usize) -> Vec<usize> {
    vec![input, 2 * input, (input / 2).max(1)]
}

/// Runs one repetition of the configured experiment at the given seed. The
/// workload and its canonical train/test/val split come from the experiment's
/// base seed so every repetition sees the same data; the repetition seed
/// drives partitioning, initialization and training randomness.
pub fn execute_repetition(config: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    let data_seed = config.base_seed;
    match config.algorithm.name {
        AlgorithmName::FedSgd
        | AlgorithmName::FedAvg
        | AlgorithmName::FedProx
        | AlgorithmName::FedNova => {
            let base = horizontal_base(config, data_seed)?;
            let width = output_width(config, &base);
            let (train, test, val) = split_train_test_val(&base, data_seed)?;
            let shards = partition_shards(config, &train, seed)?;
            let spec = model_spec(config, train.dim(), width)?;
            let algorithm = match config.algorithm.name {
                AlgorithmName::FedSgd => Algorithm::FedSgd,
                AlgorithmName::FedAvg => Algorithm::FedAvg,
                AlgorithmName::FedProx => Algorithm::FedProx {
                    mu: config.algorithm.mu,
                },
                AlgorithmName::FedNova => Algorithm::FedNova,
                _ => unreachable!(),
            };
            let dp = dp_stage(config, train.len(), &shards)?;
            let mut max_rounds = config.algorithm.max_rounds;
            if let Some((_, cap)) = &dp {
                max_rounds = max_rounds.min(*cap);
            }
            let setup = HorizontalSetup {
                name: config.name.clone(),
                model: spec,
                metric: metric_for(config),
                algo: AlgoConfig {
                    algorithm,
                    client_fraction: config.algorithm.client_fraction,
                    local_epochs: config.algorithm.local_epochs,
                    batch_size: config.model.batch_size,
                    max_rounds,
                },
                shards,
                val,
                test,
                scheduler: scheduler(config),
                server_opt: server_opt(config),
                dp: dp.map(|(stage, _)| stage),
                secure: config.secure_agg.as_ref().map(|s| SecureStage {
                    parts_sent: s.parts_sent,
                }),
                compression: config.compression.as_ref().map(|c| CompressionStage {
                    method: match c.method {
                        CompressionMethodConfig::TopK => CompressionMethod::TopK {
                            k_fraction: c.k_fraction,
                        },
                        CompressionMethodConfig::RandK => CompressionMethod::RandK {
                            k_fraction: c.k_fraction,
                            rescale: c.rescale,
                        },
                        CompressionMethodConfig::LowRank => {
                            CompressionMethod::LowRank { rank: c.rank }
                        }
                    },
                    error_feedback: c.error_feedback,
                    damping: c.damping,
                }),
                channel: channel(config)?,
                costs: config.cost,
                seed,
            };
            run_horizontal(&setup)
        }
        AlgorithmName::Combined | AlgorithmName::Solo => {
            let (train, test, val, input, width) = if config.workload.kind.is_vertical() {
                let (aligned, _) = vertical_base(config, data_seed)?;
                let width = output_width(config, &aligned);
                let (train, test, val) = split_train_test_val(&aligned, data_seed)?;
                let d = train.dim();
                (train, test, val, d, width)
            } else {
                let base = horizontal_base(config, data_seed)?;
                let width = output_width(config, &base);
                let (train, test, val) = split_train_test_val(&base, data_seed)?;
                let d = train.dim();
                (train, test, val, d, width)
            };
            let train = if config.algorithm.name == AlgorithmName::Solo {
                let shards = partition_shards(config, &train, seed)?;
                shards
                    .into_iter()
                    .nth(config.algorithm.solo_client)
                    .ok_or_else(|| Error::invalid("solo client out of range"))?
            } else {
                train
            };
            let spec = if config.workload.kind.is_vertical() {
                // Combined vertical baseline mirrors the tower shape over the
                // full feature width.
                let mut widths = vertical_tower(input);
                widths.push(width);
                MlpSpec::new(
                    widths,
                    activation(config.model.activation),
                    head(config.model.head),
                )?
            } else {
                model_spec(config, input, width)?
            };
            let setup = CentralizedSetup {
                name: config.name.clone(),
                model: spec,
                metric: metric_for(config),
                train,
                val,
                test,
                optimizer: server_opt(config),
                scheduler: scheduler(config),
                batch_size: config.model.batch_size,
                max_rounds: config.algorithm.max_rounds,
                costs: config.cost,
                seed,
            };
            run_centralized(&setup)
        }
        AlgorithmName::SplitNn => {
            let (aligned, blocks) = vertical_base(config, data_seed)?;
            let out = output_width(config, &aligned);
            let (train, test, val) = split_train_test_val(&aligned, data_seed)?;
            let act = activation(config.model.activation);
            let bottoms: Vec<MlpSpec> = blocks
                .iter()
                .map(|&(_, width)| MlpSpec::new(vertical_tower(width), act, Head::LinearMse))
                .collect::<Result<_>>()?;
            let cut_total: usize = bottoms.iter().map(MlpSpec::output_width).sum();
            let top = MlpSpec::new(vec![cut_total, out], act, head(config.model.head))?;
            let setup = VerticalSetup {
                name: config.name.clone(),
                split: SplitSpec::new(bottoms, top)?,
                feature_blocks: blocks,
                metric: metric_for(config),
                train,
                val,
                test,
                optimizer: server_opt(config),
                scheduler: scheduler(config),
                batch_size: config.model.batch_size,
                max_rounds: config.algorithm.max_rounds,
                channel: channel(config)?,
                costs: config.cost,
                seed,
            };
            run_vertical(&setup)
        }
    }
}

fn record_from(result: &ExperimentResult) -> RunRecord {
    RunRecord {
        preset: result.name.clone(),
        seed: result.seed,
        final_metric: result.final_metric,
        convergence_rounds: result.convergence_rounds.unwrap_or(result.rounds_executed),
        throughput: result.throughput,
        overhead: result.overhead,
        uplink_ratio: result.uplink_ratio,
        eps_spent: result.eps_spent,
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta {
    format: u32,
    name: String,
    repetitions: usize,
    base_seed: u64,
    workload: super::config::WorkloadConfig,
}

/// Everything `run` produced on disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub summary_path: PathBuf,
    pub run_dirs: Vec<PathBuf>,
    pub records: Vec<RunRecord>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_summary_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "preset,seed,final_metric,convergence_rounds,throughput,overhead,uplink_ratio,eps_spent\n",
    );
    for r in records {
        let eps = r.eps_spent.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.preset,
            r.seed,
            fmt_f64(r.final_metric),
            r.convergence_rounds,
            fmt_f64(r.throughput),
            fmt_f64(r.overhead),
            fmt_f64(r.uplink_ratio),
            eps
        ));
    }
    // Aggregate row: mean +/- sample std per metric column.
    if !records.is_empty() {
        let agg = |f: fn(&RunRecord) -> f64| {
            let values: Vec<f64> = records.iter().map(f).collect();
            let (m, s) = mean_std(&values);
            format!("{m:.6}±{s:.6}")
        };
        let eps_agg = if records.iter().all(|r| r.eps_spent.is_some()) {
            let values: Vec<f64> = records.iter().map(|r| r.eps_spent.unwrap()).collect();
            let (m, s) = mean_std(&values);
            format!("{m:.6}±{s:.6}")
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{},aggregate,{},{},{},{},{},{}\n",
            records[0].preset,
            agg(|r| r.final_metric),
            agg(|r| r.convergence_rounds as f64),
            agg(|r| r.throughput),
            agg(|r| r.overhead),
            agg(|r| r.uplink_ratio),
            eps_agg
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_repetition(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = fs::File::create(dir.join("rounds.jsonl"))?;
    for record in &result.rounds {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::runtime(format!("serialize round: {e}")))?;
        writeln!(jsonl, "{line}")?;
    }
    let mut ledger = String::from(
        "round,actor,train_s,communicate_s,encrypt_s,idle_s,other_s,bytes_up,bytes_down\n",
    );
    for row in &result.actor_rows {
        ledger.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.round,
            row.actor,
            fmt_f64(row.train_s),
            fmt_f64(row.communicate_s),
            fmt_f64(row.encrypt_s),
            fmt_f64(row.idle_s),
            fmt_f64(row.other_s),
            row.bytes_up,
            row.bytes_down
        ));
    }
    fs::write(dir.join("ledger.csv"), ledger)?;
    if !result.privacy_rows.is_empty() {
        let mut privacy = String::from("round,q,sigma,eps_so_far\n");
        for row in &result.privacy_rows {
            privacy.push_str(&format!(
                "{},{},{},{}\n",
                row.round,
                fmt_f64(row.q),
                fmt_f64(row.sigma),
                fmt_f64(row.eps_so_far)
            ));
        }
        fs::write(dir.join("privacy.csv"), privacy)?;
    }
    Ok(())
}

/// Runs every repetition of a configuration and writes the result tree:
/// per-repetition round logs and ledgers plus a summary CSV with one row per
/// run and an aggregate row.
pub fn run_to_dir(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    let mut run_dirs = Vec::new();
    for rep in 0..config.repetitions {
        let seed = config.base_seed + rep as u64;
        let result = execute_repetition(config, seed)?;
        let dir = out_dir.join(format!("rep{rep}"));
        write_repetition(&dir, &result)?;
        records.push(record_from(&result));
        run_dirs.push(dir);
    }
    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, &records)?;
    let meta = RunMeta {
        format: 1,
        name: config.name.clone(),
        repetitions: config.repetitions,
        base_seed: config.base_seed,
        workload: config.workload.clone(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::runtime(format!("serialize meta: {e}")))?;
    fs::write(out_dir.join("meta.json"), meta_json)?;
    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        summary_path,
        run_dirs,
        records,
    })
}
