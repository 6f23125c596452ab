use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::CostModel;

/// Top-level experiment configuration, parsed from TOML with unknown keys
/// rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: u32,
    pub name: String,
    pub repetitions: usize,
    pub base_seed: u64,
    pub workload: WorkloadConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub dp: Option<DpConfigSection>,
    #[serde(default)]
    pub secure_agg: Option<SecureAggConfig>,
    #[serde(default)]
    pub compression: Option<CompressionConfig>,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub cost: CostModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Feature width of the right party for vertical workloads.
    #[serde(default = "default_features")]
    pub features_right: usize,
    /// Fraction of entities present on both sides of a vertical workload.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    /// CSV path (left side for vertical-csv).
    #[serde(default)]
    pub path: Option<String>,
    /// Right-side CSV path for vertical-csv.
    #[serde(default)]
    pub path_right: Option<String>,
    /// Overrides label detection for CSV workloads (integral regression
    /// targets would otherwise be read as classes).
    #[serde(default)]
    pub label_kind: Option<LabelKindConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKindConfig {
    Class,
    Real,
}

fn default_samples() -> usize {
    2500
}
fn default_features() -> usize {
    8
}
fn default_classes() -> usize {
    4
}
fn default_noise() -> f64 {
    1.0
}
fn default_separation() -> f64 {
    2.0
}
fn default_overlap() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    Blobs,
    Regression,
    Csv,
    VerticalBlobs,
    VerticalCsv,
}

impl WorkloadKind {
    pub fn is_vertical(&self) -> bool {
        matches!(
            self,
            WorkloadKind::VerticalBlobs | WorkloadKind::VerticalCsv
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationConfig,
    #[serde(default = "default_head")]
    pub head: HeadConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_reductions")]
    pub max_reductions: usize,
    /// Evaluation metric; defaults to the head's natural metric.
    #[serde(default)]
    pub metric: Option<MetricConfig>,
}

fn default_activation() -> ActivationConfig {
    ActivationConfig::Relu
}
fn default_head() -> HeadConfig {
    HeadConfig::Softmax
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::Sgd
}
fn default_momentum() -> f64 {
    0.9
}
fn default_lr() -> f64 {
    0.1
}
fn default_batch() -> usize {
    32
}
fn default_patience() -> usize {
    10
}
fn default_factor() -> f64 {
    0.1
}
fn default_reductions() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationConfig {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadConfig {
    Softmax,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricConfig {
    Top1,
    Binary,
    Mae,
    Mse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "default_scheme")]
    pub scheme: PartitionSchemeConfig,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            scheme: default_scheme(),
            clients: default_clients(),
            alpha: default_alpha(),
        }
    }
}

fn default_scheme() -> PartitionSchemeConfig {
    PartitionSchemeConfig::Iid
}
fn default_clients() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSchemeConfig {
    Iid,
    LabelSkew,
    QuantitySkew,
    PowerLaw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmName,
    #[serde(default = "default_fraction")]
    pub client_fraction: f64,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Which client trains alone under `solo`.
    #[serde(default)]
    pub solo_client: usize,
}

fn default_fraction() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    1
}
fn default_max_rounds() -> usize {
    400
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgorithmName {
    #[serde(rename = "fedsgd")]
    FedSgd,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fednova")]
    FedNova,
    #[serde(rename = "combined")]
    Combined,
    #[serde(rename = "solo")]
    Solo,
    #[serde(rename = "splitnn")]
    SplitNn,
}

impl AlgorithmName {
    pub fn is_federated_horizontal(&self) -> bool {
        matches!(
            self,
            AlgorithmName::FedSgd
                | AlgorithmName::FedAvg
                | AlgorithmName::FedProx
                | AlgorithmName::FedNova
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfigSection {
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Explicit noise multiplier; skips calibration when set.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Defaults to min(1e-5, 1/n_train).
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_dp_rounds")]
    pub max_rounds: usize,
}

fn default_clip() -> f64 {
    0.1
}
fn default_dp_rounds() -> usize {
    300
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecureAggConfig {
    pub parts_sent: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub method: CompressionMethodConfig,
    #[serde(default = "default_k")]
    pub k_fraction: f64,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub rescale: bool,
    #[serde(default = "default_ef")]
    pub error_feedback: bool,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_k() -> f64 {
    0.01
}
fn default_rank() -> usize {
    3
}
fn default_ef() -> bool {
    true
}
fn default_damping() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompressionMethodConfig {
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "randk")]
    RandK,
    #[serde(rename = "lowrank")]
    LowRank,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Omitted or zero means unlimited bandwidth.
    #[serde(default)]
    pub bandwidth_mbps: Option<f64>,
    #[serde(default)]
    pub latency_ms: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth_mbps: None,
            latency_ms: 0.0,
        }
    }
}

/// Parses and fully validates a configuration. Parse failures surface one
/// error; semantic problems are collected so all of them are reported at
/// once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(vec![format!("parse error: {e}")]))?;
    let problems = validate(&config);
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(problems))
    }
}

fn validate(c: &ExperimentConfig) -> Vec<String> {
    let mut problems = Vec::new();
    let mut err = |msg: String| problems.push(msg);

    if c.format != 1 {
        err(format!("format: unsupported version {}", c.format));
    }
    if c.name.is_empty() {
        err("name: must not be empty".into());
    }
    if c.repetitions == 0 {
        err("repetitions: must be at least 1".into());
    }

    // Workload.
    let w = &c.workload;
    match w.kind {
        WorkloadKind::Blobs | WorkloadKind::VerticalBlobs => {
            if w.samples < 12 {
                err("workload.samples: need at least 12".into());
            }
            if w.features == 0 || w.classes == 0 {
                err("workload.features/classes: must be positive".into());
            }
            if w.kind == WorkloadKind::VerticalBlobs && w.features_right == 0 {
                err("workload.features_right: must be positive".into());
            }
            if !(0.0..=1.0).contains(&w.overlap) {
                err("workload.overlap: must lie in [0, 1]".into());
            }
        }
        WorkloadKind::Regression => {
            if w.samples < 12 {
                err("workload.samples: need at least 12".into());
            }
            if w.features == 0 {
                err("workload.features: must be positive".into());
            }
        }
        WorkloadKind::Csv => {
            if w.path.is_none() {
                err("workload.path: required for csv workloads".into());
            }
        }
        WorkloadKind::VerticalCsv => {
            if w.path.is_none() || w.path_right.is_none() {
                err("workload.path/path_right: both required for vertical-csv".into());
            }
        }
    }

    // Model.
    if !(c.model.lr > 0.0) {
        err("model.lr: must be positive".into());
    }
    if c.model.batch_size == 0 {
        err("model.batch_size: must be positive".into());
    }
    if !(c.model.factor > 0.0 && c.model.factor < 1.0) {
        err("model.factor: must lie in (0, 1)".into());
    }
    if c.model.patience == 0 {
        err("model.patience: must be positive".into());
    }
    if c.model.head == HeadConfig::Sigmoid
        && matches!(w.kind, WorkloadKind::Blobs | WorkloadKind::VerticalBlobs)
        && w.classes != 2
    {
        err("model.head: sigmoid head needs a 2-class workload".into());
    }
    if c.model.head == HeadConfig::Linear
        && matches!(w.kind, WorkloadKind::Blobs | WorkloadKind::VerticalBlobs)
    {
        err("model.head: linear head does not fit a classification workload".into());
    }
    if c.model.head != HeadConfig::Linear && w.kind == WorkloadKind::Regression {
        err("model.head: regression workloads need the linear head".into());
    }
    if let Some(metric) = c.model.metric {
        let compatible = matches!(
            (metric, c.model.head),
            (MetricConfig::Top1, HeadConfig::Softmax)
                | (MetricConfig::Binary, HeadConfig::Sigmoid)
                | (MetricConfig::Mae | MetricConfig::Mse, HeadConfig::Linear)
        );
        if !compatible {
            err("model.metric: incompatible with the output head".into());
        }
    }

    // Algorithm vs workload.
    let a = &c.algorithm;
    if a.name == AlgorithmName::SplitNn && !w.kind.is_vertical() {
        err("algorithm.name: splitnn needs a vertical workload".into());
    }
    if a.name != AlgorithmName::SplitNn && a.name != AlgorithmName::Combined && w.kind.is_vertical()
    {
        err("algorithm.name: vertical workloads support splitnn or combined only".into());
    }
    if !(a.client_fraction > 0.0 && a.client_fraction <= 1.0) {
        err("algorithm.client_fraction: must lie in (0, 1]".into());
    }
    if a.local_epochs == 0 {
        err("algorithm.local_epochs: must be positive".into());
    }
    if a.max_rounds == 0 {
        err("algorithm.max_rounds: must be positive".into());
    }
    if a.name == AlgorithmName::FedSgd && (a.client_fraction != 1.0 || a.local_epochs != 1) {
        err("algorithm: fedsgd requires client_fraction = 1.0 and local_epochs = 1".into());
    }
    if a.name == AlgorithmName::FedProx && !(a.mu >= 0.0 && a.mu.is_finite()) {
        err("algorithm.mu: must be a nonnegative number".into());
    }
    if a.name == AlgorithmName::Solo && a.solo_client >= c.partition.clients {
        err("algorithm.solo_client: out of range".into());
    }

    // Partition.
    if c.partition.clients < 2 {
        err("partition.clients: need at least 2".into());
    }
    if c.partition.scheme != PartitionSchemeConfig::Iid && !(c.partition.alpha > 0.0) {
        err("partition.alpha: must be positive for skewed schemes".into());
    }

    // Add-on stages only apply to horizontal federated algorithms.
    if (c.dp.is_some() || c.secure_agg.is_some() || c.compression.is_some())
        && !a.name.is_federated_horizontal()
    {
        err("dp/secure_agg/compression: only valid for federated horizontal algorithms".into());
    }
    if let Some(dp) = &c.dp {
        if !(dp.clip > 0.0) {
            err("dp.clip: must be positive".into());
        }
        match (dp.epsilon, dp.sigma) {
            (None, None) => err("dp: set epsilon (to calibrate) or sigma (explicit)".into()),
            (Some(e), _) if !(e > 0.0) => err("dp.epsilon: must be positive".into()),
            (_, Some(s)) if !(s > 0.0) => err("dp.sigma: must be positive".into()),
            _ => {}
        }
        if let Some(d) = dp.delta {
            if !(0.0 < d && d < 1.0) {
                err("dp.delta: must lie in (0, 1)".into());
            }
        }
        if dp.max_rounds == 0 {
            err("dp.max_rounds: must be positive".into());
        }
    }
    if let Some(sec) = &c.secure_agg {
        let participants = ((c.partition.clients as f64) * a.client_fraction).ceil() as usize;
        if sec.parts_sent == 0 {
            err("secure_agg.parts_sent: must be at least 1".into());
        } else if sec.parts_sent + 1 > participants {
            err(format!(
                "secure_agg.parts_sent: {} exceeds participants-1 = {}",
                sec.parts_sent,
                participants.saturating_sub(1)
            ));
        }
    }
    if let Some(comp) = &c.compression {
        if !(comp.k_fraction > 0.0 && comp.k_fraction <= 1.0) {
            err("compression.k_fraction: must lie in (0, 1]".into());
        }
        if comp.rank == 0 {
            err("compression.rank: must be at least 1".into());
        }
        if !(comp.damping > 0.0 && comp.damping <= 1.0) {
            err("compression.damping: must lie in (0, 1]".into());
        }
    }
    if let Some(b) = c.channel.bandwidth_mbps {
        if b < 0.0 {
            err("channel.bandwidth_mbps: must be nonnegative".into());
        }
    }
    if c.channel.latency_ms < 0.0 {
        err("channel.latency_ms: must be nonnegative".into());
    }

    let costs = [
        ("train_per_sample_param", c.cost.train_per_sample_param),
        ("eval_factor", c.cost.eval_factor),
        ("encrypt_per_element", c.cost.encrypt_per_element),
        ("dp_per_element", c.cost.dp_per_element),
        ("compress_per_element", c.cost.compress_per_element),
        ("aggregate_per_element", c.cost.aggregate_per_element),
        ("per_round_other", c.cost.per_round_other),
    ];
    for (name, value) in costs {
        if !(value >= 0.0 && value.is_finite()) {
            err(format!("cost.{name}: must be a nonnegative number"));
        }
    }

    problems
}
