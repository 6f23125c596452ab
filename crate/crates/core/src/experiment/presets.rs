//! Reference experiment catalog. Each preset is a complete configuration for
//! the bundled synthetic workload; variants differ from the baseline in a
//! single module so runs stay directly comparable.

/// Preset names in catalog order.
pub const PRESET_NAMES: [&str; 9] = [
    "baseline",
    "noniid-label",
    "noniid-quantity",
    "algorithms",
    "smc",
    "dp",
    "compression",
    "hybrid",
    "vertical-baseline",
];

/// FedSGD over IID shards with no add-ons; the reference point everything
/// else is compared against.
const BASELINE: &str = r#"
format = 1
name = "baseline"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 16
classes = 8
noise = 2.5
separation = 1.5

[model]
hidden = [24]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.2
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedsgd"
client_fraction = 1.0
local_epochs = 1
max_rounds = 400
"#;

/// Label-distribution skew at a strongly non-IID concentration; client
/// sampling and several local epochs let the shard drift actually bite.
const NONIID_LABEL: &str = r#"
format = 1
name = "noniid-label"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 3000
features = 8
classes = 6
noise = 2.2
separation = 2.0

[model]
hidden = [16]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.3
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "label-skew"
clients = 10
alpha = 0.2

[algorithm]
name = "fedavg"
client_fraction = 0.2
local_epochs = 8
max_rounds = 150
"#;

/// Quantity skew at the same concentration for a direct comparison.
const NONIID_QUANTITY: &str = r#"
format = 1
name = "noniid-quantity"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 3000
features = 8
classes = 6
noise = 2.2
separation = 2.0

[model]
hidden = [16]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.3
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "quantity-skew"
clients = 10
alpha = 0.2

[algorithm]
name = "fedavg"
client_fraction = 0.2
local_epochs = 8
max_rounds = 150
"#;

/// Algorithm variant: FedProx with client sampling.
const ALGORITHMS: &str = r#"
format = 1
name = "algorithms"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 16
classes = 8
noise = 2.5
separation = 1.5

[model]
hidden = [24]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.05
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedprox"
client_fraction = 0.4
local_epochs = 2
mu = 0.01
max_rounds = 250
"#;

/// Baseline plus secret-sharing secure aggregation (two transmitted parts).
const SMC: &str = r#"
format = 1
name = "smc"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 16
classes = 8
noise = 2.5
separation = 1.5

[model]
hidden = [24]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.2
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedsgd"
client_fraction = 1.0
local_epochs = 1
max_rounds = 400

[secure_agg]
parts_sent = 2
"#;

/// Local differential privacy at a practical budget.
const DP: &str = r#"
format = 1
name = "dp"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 8
classes = 4
noise = 2.0
separation = 2.0

[model]
hidden = []
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.1
batch_size = 40
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedavg"
client_fraction = 1.0
local_epochs = 1
max_rounds = 300

[dp]
clip = 0.1
epsilon = 2.0
max_rounds = 300
"#;

/// Uplink TopK compression with damped error feedback.
const COMPRESSION: &str = r#"
format = 1
name = "compression"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 16
classes = 8
noise = 2.5
separation = 1.5

[model]
hidden = [24]
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.2
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedsgd"
client_fraction = 1.0
local_epochs = 1
max_rounds = 400

[compression]
method = "topk"
k_fraction = 0.01
error_feedback = true
damping = 0.5
"#;

/// Everything at once: secret sharing, differential privacy, TopK, and a
/// 100 Mbps channel.
const HYBRID: &str = r#"
format = 1
name = "hybrid"
repetitions = 3
base_seed = 42

[workload]
kind = "blobs"
samples = 5000
features = 8
classes = 4
noise = 2.0
separation = 2.0

[model]
hidden = []
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.1
batch_size = 40
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5

[algorithm]
name = "fedavg"
client_fraction = 1.0
local_epochs = 1
max_rounds = 300

[dp]
clip = 0.1
epsilon = 1.0
max_rounds = 300

[secure_agg]
parts_sent = 2

[compression]
method = "topk"
k_fraction = 0.01
error_feedback = true
damping = 0.5

[channel]
bandwidth_mbps = 100.0
latency_ms = 0.0
"#;

/// Split network over a vertically partitioned synthetic task.
const VERTICAL_BASELINE: &str = r#"
format = 1
name = "vertical-baseline"
repetitions = 3
base_seed = 42

[workload]
kind = "vertical-blobs"
samples = 2000
features = 4
features_right = 4
classes = 3
noise = 0.8
separation = 2.0
overlap = 1.0

[model]
activation = "tanh"
head = "softmax"
optimizer = "adam"
lr = 0.01
batch_size = 32
patience = 10
factor = 0.1

[algorithm]
name = "splitnn"
max_rounds = 150
"#;

/// Full preset text by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "baseline" => Some(BASELINE),
        "noniid-label" => Some(NONIID_LABEL),
        "noniid-quantity" => Some(NONIID_QUANTITY),
        "algorithms" => Some(ALGORITHMS),
        "smc" => Some(SMC),
        "dp" => Some(DP),
        "compression" => Some(COMPRESSION),
        "hybrid" => Some(HYBRID),
        "vertical-baseline" => Some(VERTICAL_BASELINE),
        _ => None,
    }
}
