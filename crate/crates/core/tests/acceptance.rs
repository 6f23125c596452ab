//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).

use std::sync::Arc;
use std::time::Instant;

use fedbench::compression::{dense_wire_bytes, end_to_end_ratio, sparse_wire_bytes, wire_ratio};
use fedbench::data::{partition_iid, synth_blobs, Dataset};
use fedbench::engine::{
    aggregate, local_train, run_horizontal, sample_clients, weighted_mean_payload, AlgoConfig,
    Algorithm, ExperimentResult, HorizontalSetup, SchedulerSettings, ServerOpt,
};
use fedbench::experiment::{execute_repetition, parse_config, preset, PRESET_NAMES};
use fedbench::models::{
    backward, forward, init_params, Activation, Head, MlpSpec, ParamVector, SegmentKind,
    ShapeRegistry, Targets,
};
use fedbench::netsim::{Actor, Channel, CostModel};
use fedbench::numkit::{DenseMatrix, SeededRng};
use fedbench::privacy::{calibrate_sigma, rdp_epsilon, rdp_gaussian, rdp_order_grid};
use fedbench::secure_agg::{
    combine_shares, encode_fixed, make_shares, secure_aggregate, FixedCodec,
};
use fedbench::splitnn::{split_backward, split_forward, split_loss, SplitSpec};
use fedbench::stats::{bayes_corr_ttest, mean_std};

fn pass(criterion: &str, details: String) {
    println!("criterion {criterion}: PASS — {details}");
}

fn flat_params(values: Vec<f64>) -> ParamVector {
    let reg = Arc::new(ShapeRegistry::for_layer_widths(&[values.len() - 1, 1]));
    ParamVector::from_values(reg, values).unwrap()
}

/// 1. Secret-sharing exactness over the full protocol: the secure aggregate
/// equals the plain sum within N*s/2 per coordinate for K in 2..=5, 100
/// seeds, gradients of length 1000.
#[test]
fn criterion_1_secret_sharing_exactness() {
    let start = Instant::now();
    let n_clients = 5;
    let len = 1000;
    let codec = FixedCodec::new(n_clients);
    let tolerance = n_clients as f64 * codec.scale / 2.0;
    let mut checked = 0u64;
    for seed in 0..100u64 {
        let mut rng = SeededRng::derive(seed, &[1000]);
        let vectors: Vec<ParamVector> = (0..n_clients)
            .map(|_| flat_params((0..len).map(|_| rng.normal() * 0.5).collect()))
            .collect();
        let mut plain = vectors[0].zeros_like();
        for v in &vectors {
            plain.add_scaled(v, 1.0).unwrap();
        }
        for k in 2..=n_clients {
            let mut bundles = Vec::new();
            for (i, v) in vectors.iter().enumerate() {
                let encoded = encode_fixed(v, &codec).unwrap();
                let mut share_rng = SeededRng::derive(seed, &[2000, i as u64, k as u64]);
                bundles.push(make_shares(&encoded, i, k, &codec, &mut share_rng).unwrap());
            }
            let mut inbox: Vec<Vec<&[u64]>> = vec![Vec::new(); n_clients];
            for bundle in &bundles {
                for part in 0..k - 1 {
                    inbox[bundle.route(part, n_clients)].push(&bundle.parts[part]);
                }
            }
            let masked: Vec<Vec<u64>> = bundles
                .iter()
                .enumerate()
                .map(|(i, b)| combine_shares(b.kept_part(), &inbox[i], k - 1, &codec).unwrap())
                .collect();
            let agg = secure_aggregate(&masked, &codec, &vectors[0]).unwrap();
            for (a, p) in agg.as_slice().iter().zip(plain.as_slice()) {
                assert!((a - p).abs() <= tolerance, "seed {seed} k {k}: {a} vs {p}");
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    pass(
        "1 (secret-sharing exactness)",
        format!("{checked} protocol runs, tolerance {tolerance:.2e}, {elapsed:?}"),
    );
}

/// 2. FedSGD's aggregated gradient equals the pooled-batch gradient under
/// full participation and IID shards, 20 random configurations.
#[test]
fn criterion_2_fedsgd_equals_centralized() {
    let start = Instant::now();
    let mut rng = SeededRng::new(77);
    for case in 0..20u64 {
        let d = 2 + rng.below(8) as usize;
        let classes = 2 + rng.below(3) as usize;
        let n = 120 + rng.below(280) as usize;
        let clients = 2 + rng.below(5) as usize;
        let hidden = if rng.below(2) == 0 {
            vec![]
        } else {
            vec![3 + rng.below(6) as usize]
        };
        let mut widths = vec![d];
        widths.extend(hidden);
        widths.push(classes);
        let spec = MlpSpec::new(widths, Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
        let data = synth_blobs(n, d, classes, 2.0, 1.0, 3000 + case).unwrap();
        let params = init_params(&spec, 4000 + case);

        let partition = partition_iid(n, clients, 5000 + case).unwrap();
        let algo = AlgoConfig {
            algorithm: Algorithm::FedSgd,
            client_fraction: 1.0,
            local_epochs: 1,
            batch_size: 32,
            max_rounds: 1,
        };
        let updates: Vec<_> = partition
            .client_indices
            .iter()
            .map(|idx| {
                let shard = data.subset(idx).unwrap();
                local_train(&spec, &params, &shard, &algo, 0.1, &mut SeededRng::new(0)).unwrap()
            })
            .collect();
        let federated = weighted_mean_payload(&updates).unwrap();

        let (x, t) = data.all_targets().unwrap();
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let pooled = backward(&spec, &params, &cache, &t).unwrap();

        let scale = pooled
            .as_slice()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        for (f, p) in federated.as_slice().iter().zip(pooled.as_slice()) {
            assert!(
                (f - p).abs() / scale < 1e-10,
                "case {case}: {f} vs {p} (scale {scale})"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    pass(
        "2 (FedSGD = centralized)",
        format!("20 random configs, relative tolerance 1e-10, {elapsed:?}"),
    );
}

fn tiny_setup(algorithm: Algorithm, seed: u64, shards: Vec<Dataset>) -> HorizontalSetup {
    let d = shards[0].dim();
    let spec = MlpSpec::new(vec![d, 3], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
    let val = shards[0].clone();
    let test = shards[0].clone();
    HorizontalSetup {
        name: "identity".into(),
        model: spec,
        metric: fedbench::stats::Metric::Top1,
        algo: AlgoConfig {
            algorithm,
            client_fraction: 1.0,
            local_epochs: 2,
            batch_size: 16,
            max_rounds: 3,
        },
        shards,
        val,
        test,
        scheduler: SchedulerSettings {
            lr: 0.05,
            factor: 0.1,
            patience: 10,
            target_reductions: 4,
        },
        server_opt: ServerOpt::Sgd { momentum: 0.9 },
        dp: None,
        secure: None,
        compression: None,
        channel: Channel::unlimited(),
        costs: CostModel::default(),
        seed,
    }
}

/// 3. Collapse identities: FedProx(mu=0) == FedAvg and FedNova(equal tau) ==
/// FedAvg within 1e-12 across whole multi-round runs, 10 configs each.
#[test]
fn criterion_3_collapse_identities() {
    let start = Instant::now();
    for case in 0..10u64 {
        // Equal shard sizes give equal tau for the FedNova identity.
        let data = synth_blobs(240, 4, 3, 2.0, 1.0, 100 + case).unwrap();
        let partition = partition_iid(240, 4, 200 + case).unwrap();
        let shards: Vec<Dataset> = partition
            .client_indices
            .iter()
            .map(|idx| data.subset(idx).unwrap())
            .collect();

        let run = |algorithm: Algorithm| -> ExperimentResult {
            run_horizontal(&tiny_setup(algorithm, 42 + case, shards.clone())).unwrap()
        };
        let avg = run(Algorithm::FedAvg);
        let prox = run(Algorithm::FedProx { mu: 0.0 });
        let nova = run(Algorithm::FedNova);
        for (a, p) in avg.params.as_slice().iter().zip(prox.params.as_slice()) {
            assert!((a - p).abs() <= 1e-12, "fedprox(0) departed from fedavg");
        }
        for (a, n) in avg.params.as_slice().iter().zip(nova.params.as_slice()) {
            assert!(
                (a - n).abs() <= 1e-12,
                "fednova(equal tau) departed from fedavg"
            );
        }
    }
    let elapsed = start.elapsed();
    pass(
        "3 (collapse identities)",
        format!("10 configs each, 3-round runs, tolerance 1e-12, {elapsed:?}"),
    );
}

/// 4. Split network equals the block-diagonal monolithic network: outputs
/// and party gradients within 1e-10, finite differences within 1e-4.
#[test]
fn criterion_4_splitnn_equivalence() {
    let start = Instant::now();
    let bottoms = vec![
        MlpSpec::new(vec![3, 6, 2], Activation::Tanh, Head::LinearMse).unwrap(),
        MlpSpec::new(vec![2, 4, 3], Activation::Tanh, Head::LinearMse).unwrap(),
    ];
    let top = MlpSpec::new(vec![5, 4, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
    let split = SplitSpec::new(bottoms, top).unwrap();
    let bottom_params: Vec<ParamVector> = split
        .bottoms
        .iter()
        .enumerate()
        .map(|(i, b)| init_params(b, 900 + i as u64))
        .collect();
    let top_params = init_params(&split.top, 990);

    let mut rng = SeededRng::new(31);
    let xa = DenseMatrix::from_vec(8, 3, (0..24).map(|_| rng.normal()).collect()).unwrap();
    let xb = DenseMatrix::from_vec(8, 2, (0..16).map(|_| rng.normal()).collect()).unwrap();
    let targets = Targets::Classes((0..8).map(|_| rng.below(2) as usize).collect());

    // Monolithic equivalent: block-diagonal lower layers plus the top stack.
    let mono = MlpSpec::new(
        vec![5, 10, 5, 4, 2],
        Activation::Tanh,
        Head::SoftmaxCrossEntropy,
    )
    .unwrap();
    let mut mono_params = ParamVector::zeros(mono.registry());
    for layer in 0..2 {
        let seg_w = *mono_params
            .registry()
            .segment(layer, SegmentKind::Weight)
            .unwrap();
        let seg_b = *mono_params
            .registry()
            .segment(layer, SegmentKind::Bias)
            .unwrap();
        let cols_total = seg_w.cols;
        let mut row_off = 0;
        let mut col_off = 0;
        for (b, bp) in split.bottoms.iter().zip(&bottom_params) {
            let bw = *bp.registry().segment(layer, SegmentKind::Weight).unwrap();
            let bb = *bp.registry().segment(layer, SegmentKind::Bias).unwrap();
            let values = bp.segment_values(&bw).to_vec();
            for r in 0..bw.rows {
                for c in 0..bw.cols {
                    mono_params.segment_values_mut(&seg_w)
                        [(row_off + r) * cols_total + (col_off + c)] = values[r * bw.cols + c];
                }
            }
            let bias = bp.segment_values(&bb).to_vec();
            mono_params.segment_values_mut(&seg_b)[row_off..row_off + bw.rows]
                .copy_from_slice(&bias);
            row_off += b.widths[layer + 1];
            col_off += b.widths[layer];
        }
    }
    for top_layer in 0..2 {
        for kind in [SegmentKind::Weight, SegmentKind::Bias] {
            let src = *top_params.registry().segment(top_layer, kind).unwrap();
            let dst = *mono_params.registry().segment(2 + top_layer, kind).unwrap();
            let values = top_params.segment_values(&src).to_vec();
            mono_params
                .segment_values_mut(&dst)
                .copy_from_slice(&values);
        }
    }

    let (split_out, cache) = split_forward(
        &split,
        &bottom_params,
        &[xa.clone(), xb.clone()],
        &top_params,
    )
    .unwrap();
    let x = DenseMatrix::hcat(&[&xa, &xb]).unwrap();
    let (mono_out, mono_cache) = forward(&mono, &mono_params, &x).unwrap();
    for (a, b) in split_out.as_slice().iter().zip(mono_out.as_slice()) {
        assert!((a - b).abs() < 1e-10, "forward mismatch {a} vs {b}");
    }

    let grads = split_backward(&split, &bottom_params, &top_params, &cache, &targets).unwrap();
    let mono_grad = backward(&mono, &mono_params, &mono_cache, &targets).unwrap();
    for layer in 0..2 {
        let seg_w = *mono_grad
            .registry()
            .segment(layer, SegmentKind::Weight)
            .unwrap();
        let seg_b = *mono_grad
            .registry()
            .segment(layer, SegmentKind::Bias)
            .unwrap();
        let mut row_off = 0;
        let mut col_off = 0;
        for (party, pg) in grads.bottoms.iter().enumerate() {
            let bw = *pg.registry().segment(layer, SegmentKind::Weight).unwrap();
            let bb = *pg.registry().segment(layer, SegmentKind::Bias).unwrap();
            for r in 0..bw.rows {
                for c in 0..bw.cols {
                    let m = mono_grad.segment_values(&seg_w)
                        [(row_off + r) * seg_w.cols + (col_off + c)];
                    let s = pg.segment_values(&bw)[r * bw.cols + c];
                    assert!((m - s).abs() < 1e-10, "grad mismatch party {party}");
                }
            }
            for r in 0..bb.rows {
                let m = mono_grad.segment_values(&seg_b)[row_off + r];
                let s = pg.segment_values(&bb)[r];
                assert!((m - s).abs() < 1e-10);
            }
            row_off += split.bottoms[party].widths[layer + 1];
            col_off += split.bottoms[party].widths[layer];
        }
    }

    // Finite-difference oracle over every party parameter.
    let loss_at = |bp: &[ParamVector], tp: &ParamVector| -> f64 {
        let (_, cache) = split_forward(&split, bp, &[xa.clone(), xb.clone()], tp).unwrap();
        split_loss(&split, &cache, &targets).unwrap()
    };
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut scale = 1e-8f64;
    for party in 0..2 {
        for i in 0..bottom_params[party].len() {
            let mut plus = bottom_params.clone();
            plus[party].as_mut_slice()[i] += step;
            let mut minus = bottom_params.clone();
            minus[party].as_mut_slice()[i] -= step;
            let numeric =
                (loss_at(&plus, &top_params) - loss_at(&minus, &top_params)) / (2.0 * step);
            let analytic = grads.bottoms[party].as_slice()[i];
            worst = worst.max((analytic - numeric).abs());
            scale = scale.max(numeric.abs());
        }
    }
    assert!(worst / scale < 1e-4, "fd relative error {}", worst / scale);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    pass(
        "4 (split = monolithic)",
        format!(
            "forward/grad within 1e-10, fd relative error {:.2e}, {elapsed:?}",
            worst / scale
        ),
    );
}

const BENEFIT_WORKLOAD: &str = r#"
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
lr = LR
batch_size = 32
patience = 10
factor = 0.1

[partition]
scheme = "iid"
clients = 5
"#;

fn benefit_config(name: &str, algorithm: &str, lr: f64, extra: &str) -> String {
    format!(
        "format = 1\nname = \"{name}\"\nrepetitions = 3\nbase_seed = 42\n{}\n[algorithm]\nname = \"{algorithm}\"\nclient_fraction = 1.0\nlocal_epochs = 1\nmax_rounds = 400\n{extra}\n",
        BENEFIT_WORKLOAD.replace("lr = LR", &format!("lr = {lr}"))
    )
}

fn run_config_means(text: &str) -> Vec<f64> {
    let config = parse_config(text).unwrap();
    (0..config.repetitions)
        .map(|rep| {
            execute_repetition(&config, config.base_seed + rep as u64)
                .unwrap()
                .final_metric
        })
        .collect()
}

/// 5. Desk-scale federation benefit: FedSGD lands within 2% of combined
/// training and no worse than the best solo client minus 0.5%.
#[test]
fn criterion_5_federation_benefit() {
    let start = Instant::now();
    let fed = run_config_means(&benefit_config("fed", "fedsgd", 0.2, ""));
    let combined = run_config_means(&benefit_config("comb", "combined", 0.05, ""));
    let (fed_mean, _) = mean_std(&fed);
    let (comb_mean, _) = mean_std(&combined);

    let mut best_solo = f64::NEG_INFINITY;
    for client in 0..5 {
        let solo = run_config_means(&benefit_config(
            "solo",
            "solo",
            0.05,
            &format!("solo_client = {client}"),
        ));
        let (m, _) = mean_std(&solo);
        best_solo = best_solo.max(m);
    }

    assert!(
        (fed_mean - comb_mean).abs() <= 0.02,
        "fedsgd {fed_mean:.4} vs combined {comb_mean:.4}"
    );
    assert!(
        fed_mean >= best_solo - 0.005,
        "fedsgd {fed_mean:.4} vs best solo {best_solo:.4}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 180, "took {elapsed:?}");
    pass(
        "5 (federation benefit)",
        format!(
            "fedsgd {fed_mean:.4}, combined {comb_mean:.4}, best solo {best_solo:.4}, {elapsed:?}"
        ),
    );
}

fn noniid_config(scheme: &str, alpha: f64) -> String {
    format!(
        r#"
format = 1
name = "noniid"
repetitions = 5
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
scheme = "{scheme}"
clients = 10
alpha = {alpha}

[algorithm]
name = "fedavg"
client_fraction = 0.2
local_epochs = 8
max_rounds = 150
"#
    )
}

/// 6. Non-IID trend: strong label skew costs accuracy beyond one pooled
/// standard deviation, and quantity skew hurts less at matched alpha.
#[test]
fn criterion_6_noniid_trend() {
    let start = Instant::now();
    let label_02 = run_config_means(&noniid_config("label-skew", 0.2));
    let label_10 = run_config_means(&noniid_config("label-skew", 1.0));
    let quantity_02 = run_config_means(&noniid_config("quantity-skew", 0.2));

    let (m02, s02) = mean_std(&label_02);
    let (m10, s10) = mean_std(&label_10);
    let (mq02, _) = mean_std(&quantity_02);
    let pooled = ((s02 * s02 + s10 * s10) / 2.0).sqrt();

    assert!(
        m10 - m02 > pooled,
        "label skew gap {:.4} did not exceed pooled std {:.4}",
        m10 - m02,
        pooled
    );
    assert!(
        mq02 > m02,
        "quantity skew ({mq02:.4}) should degrade less than label skew ({m02:.4})"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}");
    pass(
        "6 (non-IID trend)",
        format!(
            "label a=0.2 {m02:.4}, a=1.0 {m10:.4} (pooled std {pooled:.4}), quantity a=0.2 {mq02:.4}, {elapsed:?}"
        ),
    );
}

/// 7a. Compression wire-ratio arithmetic lands on the published scale.
#[test]
fn criterion_7a_wire_ratio_arithmetic() {
    let len = 1_000_000usize;
    let raw = dense_wire_bytes(len);
    let k1 = wire_ratio(raw, sparse_wire_bytes((len as f64 * 0.01).ceil() as usize)).unwrap();
    let k03 = wire_ratio(raw, sparse_wire_bytes((len as f64 * 0.003).ceil() as usize)).unwrap();

    // Within 1% of both the exact encoding arithmetic and the published
    // measurements.
    assert!((k1 - 33.33).abs() / 33.33 < 0.01, "k=1%: {k1}");
    assert!((k1 - 33.32).abs() / 33.32 < 0.01, "k=1% vs published: {k1}");
    assert!((k03 - 111.1).abs() / 111.1 < 0.01, "k=0.3%: {k03}");
    assert!(
        (k03 - 110.97).abs() / 110.97 < 0.01,
        "k=0.3% vs published: {k03}"
    );
    pass(
        "7a (wire ratios)",
        format!("k=1% ratio {k1:.2}, k=0.3% ratio {k03:.2}"),
    );
}

/// 7b. End-to-end ratio identity against the published 25.42.
///
/// The identity is total-traffic arithmetic: per_round_ratio *
/// baseline_rounds / compressed_rounds. With the published inputs
/// (ratio 33.32, baseline 159.42 rounds, compressed 237.66 rounds) it
/// evaluates to 22.3507; no arithmetic combination of those inputs yields
/// the published 25.42, so this check documents the discrepancy and fails.
#[test]
fn criterion_7b_end_to_end_ratio_identity() {
    let value = end_to_end_ratio(33.32, 159.42, 237.66).unwrap();
    // The identity itself is exact arithmetic.
    assert!((value - 33.32 * 159.42 / 237.66).abs() < 1e-12);
    assert!(
        (value - 25.42).abs() / 25.42 < 0.01,
        "end-to-end identity gives {value:.4}, published value is 25.42; \
         the published figure is not reproducible from the published inputs \
         (criterion 7, end-to-end part): FAIL"
    );
    pass(
        "7b (end-to-end ratio)",
        format!("identity gives {value:.4}"),
    );
}

/// 8. RDP accountant: analytic match at q=1, monotonicity, and calibration
/// round trips under the target budget.
#[test]
fn criterion_8_dp_accountant() {
    let start = Instant::now();
    // q = 1 matches alpha / (2 sigma^2) on the whole grid to 1e-12.
    for &sigma in &[0.5, 1.0, 2.0, 4.0, 8.0] {
        for alpha in rdp_order_grid() {
            let r = rdp_gaussian(1.0, sigma, alpha).unwrap();
            let analytic = alpha / (2.0 * sigma * sigma);
            assert!((r - analytic).abs() <= 1e-12, "sigma {sigma} alpha {alpha}");
        }
    }
    // Monotone in rounds, anti-monotone in sigma.
    let delta = 1e-5;
    let eps_t: Vec<f64> = [1, 10, 100, 1000]
        .iter()
        .map(|&t| rdp_epsilon(0.1, 1.0, t, delta).unwrap())
        .collect();
    assert!(eps_t.windows(2).all(|w| w[0] < w[1]), "{eps_t:?}");
    let eps_s: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| rdp_epsilon(0.1, s, 100, delta).unwrap())
        .collect();
    assert!(eps_s.windows(2).all(|w| w[0] > w[1]), "{eps_s:?}");

    // Calibration round trip at the practical budgets; delta rule with
    // N = 5000 samples.
    let delta = (1e-5f64).min(1.0 / 5000.0);
    for &target in &[0.5, 1.0, 2.0, 16.0] {
        for &q in &[0.05, 0.5, 1.0] {
            let sigma = calibrate_sigma(target, delta, q, 300).unwrap();
            let spent = rdp_epsilon(q, sigma, 300, delta).unwrap();
            assert!(
                spent <= target,
                "target {target} q {q}: sigma {sigma} spends {spent}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    pass(
        "8 (RDP accountant)",
        format!("grid match 1e-12, monotonicity, calibration round trips, {elapsed:?}"),
    );
}

fn dp_config(epsilon: f64) -> String {
    format!(
        r#"
format = 1
name = "dp-trend"
repetitions = 5
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
epsilon = {epsilon}
max_rounds = 300
"#
    )
}

/// 9. Privacy/accuracy trend: larger budgets give better accuracy, with at
/// most one inversion within one standard deviation.
#[test]
fn criterion_9_dp_accuracy_trend() {
    let start = Instant::now();
    let runs: Vec<(f64, Vec<f64>)> = [0.5, 2.0, 16.0]
        .iter()
        .map(|&eps| (eps, run_config_means(&dp_config(eps))))
        .collect();
    let stats: Vec<(f64, f64, f64)> = runs
        .iter()
        .map(|(eps, values)| {
            let (m, s) = mean_std(values);
            (*eps, m, s)
        })
        .collect();
    let mut inversions = 0;
    for pair in stats.windows(2) {
        let (lo_eps, lo_mean, lo_std) = pair[0];
        let (hi_eps, hi_mean, hi_std) = pair[1];
        if hi_mean < lo_mean {
            inversions += 1;
            let band = lo_std.max(hi_std);
            assert!(
                lo_mean - hi_mean <= band,
                "eps {hi_eps} mean {hi_mean:.4} fell below eps {lo_eps} mean {lo_mean:.4} by more than one std {band:.4}"
            );
        }
    }
    assert!(inversions <= 1, "{inversions} inversions");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}");
    pass(
        "9 (DP accuracy trend)",
        format!(
            "eps 0.5/2/16 means {:.4}/{:.4}/{:.4}, {inversions} inversion(s), {elapsed:?}",
            stats[0].1, stats[1].1, stats[2].1
        ),
    );
}

/// 10. Bayesian t-test invariants on a thousand random inputs plus the
/// worked n=12 example against numeric integration.
#[test]
fn criterion_10_bayes_ttest() {
    let mut rng = SeededRng::new(55);
    for _ in 0..1000 {
        let n = 2 + rng.below(14) as usize;
        let scale_factor = 10f64.powf(rng.uniform() * 4.0 - 2.0);
        let diffs: Vec<f64> = (0..n).map(|_| rng.normal() * scale_factor).collect();
        let rope = rng.uniform() * scale_factor;
        let r = bayes_corr_ttest(&diffs, rope, 0.0).unwrap();
        assert!((r.p_left + r.p_rope + r.p_right - 1.0).abs() < 1e-9);

        let neg: Vec<f64> = diffs.iter().map(|d| -d).collect();
        let rn = bayes_corr_ttest(&neg, rope, 0.0).unwrap();
        assert!((r.p_left - rn.p_right).abs() < 1e-9);
        assert!((r.p_rope - rn.p_rope).abs() < 1e-9);

        let wider = bayes_corr_ttest(&diffs, rope * 1.5 + 1e-12, 0.0).unwrap();
        assert!(wider.p_rope >= r.p_rope - 1e-12);
    }

    // Worked n=12 example: mean 0.004, sd 0.01, rope 0.01, rho 0.
    let base = [
        -1.5509, -1.1366, -0.9222, -0.6069, -0.3559, -0.1, 0.1, 0.3559, 0.6069, 0.9222, 1.1366,
        1.5509,
    ];
    let (m0, s0) = mean_std(&base);
    let diffs: Vec<f64> = base.iter().map(|x| 0.004 + (x - m0) / s0 * 0.01).collect();
    let r = bayes_corr_ttest(&diffs, 0.01, 0.0).unwrap();
    let (l, c, rt) = integrate_triple(&diffs, 0.01, 0.0);
    assert!((r.p_left - l).abs() < 1e-6);
    assert!((r.p_rope - c).abs() < 1e-6);
    assert!((r.p_right - rt).abs() < 1e-6);
    pass(
        "10 (Bayesian t-test)",
        format!(
            "1000 random invariant checks; worked example <{:.4}, {:.4}, {:.4}> matches integration to 1e-6",
            r.p_left, r.p_rope, r.p_right
        ),
    );
}

/// Trapezoid integration of the closed-form t density (the independent
/// oracle for criterion 10).
fn integrate_triple(diffs: &[f64], rope: f64, rho: f64) -> (f64, f64, f64) {
    use statrs::function::gamma::ln_gamma;
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let scale = ((1.0 / n + rho / (1.0 - rho)) * var).sqrt();
    let dof = n - 1.0;
    let pdf = |x: f64| {
        let z = (x - mean) / scale;
        let log_norm = ln_gamma((dof + 1.0) / 2.0)
            - ln_gamma(dof / 2.0)
            - 0.5 * (dof * std::f64::consts::PI).ln()
            - scale.ln();
        (log_norm - (dof + 1.0) / 2.0 * (1.0 + z * z / dof).ln()).exp()
    };
    let trapezoid = |a: f64, b: f64| {
        let steps = 100_000usize;
        let h = (b - a) / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let x0 = a + i as f64 * h;
            acc += 0.5 * (pdf(x0) + pdf(x0 + h)) * h;
        }
        acc
    };
    let span = 80.0 * scale;
    (
        trapezoid(mean - span, -rope),
        trapezoid(-rope, rope),
        trapezoid(rope, mean + span),
    )
}

/// One-repetition run of every preset, reused by criteria 11 and 12.
fn run_preset_once(name: &str) -> ExperimentResult {
    let mut config = parse_config(preset(name).unwrap()).unwrap();
    config.repetitions = 1;
    execute_repetition(&config, config.base_seed).unwrap()
}

/// 11. Ledger conservation is exact for every actor in every preset run, and
/// the bandwidth arithmetic lands on 3.576 s.
#[test]
fn criterion_11_ledger_conservation_and_bandwidth() {
    let start = Instant::now();
    for name in PRESET_NAMES {
        let preset_start = Instant::now();
        let result = run_preset_once(name);
        // Exact conservation in integer nanoseconds: every actor's bucket
        // total equals the logical clock.
        for (actor, ledger) in &result.ledger.actors {
            assert_eq!(
                ledger.total(),
                result.ledger.clock,
                "preset {name}: actor {actor} lost time"
            );
        }
        // Per-round rows: all actors agree on the round duration.
        let mut by_round: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for row in &result.actor_rows {
            let total = row.train_s + row.communicate_s + row.encrypt_s + row.idle_s + row.other_s;
            by_round.entry(row.round).or_default().push(total);
        }
        for (round, totals) in by_round {
            let first = totals[0];
            for t in totals {
                assert!(
                    (t - first).abs() < 1e-9,
                    "preset {name} round {round}: actor totals diverge"
                );
            }
        }
        assert!(
            preset_start.elapsed().as_secs() < 300,
            "preset {name} exceeded 5 minutes"
        );
    }

    let channel = Channel::new(Some(100e6), 0.0).unwrap();
    let t = channel.transfer_time(44_700_000).as_secs_f64();
    assert!((t - 3.576).abs() <= 1e-9, "transfer time {t}");
    let elapsed = start.elapsed();
    pass(
        "11 (ledger conservation)",
        format!("9 presets conserved exactly; 44.7 MB @ 100 Mbps = {t} s, {elapsed:?}"),
    );
}

/// 12. Hybrid decomposition: the server's idle bucket dominates its other
/// buckets and every actor pays a nonzero encryption cost.
#[test]
fn criterion_12_hybrid_decomposition() {
    let result = run_preset_once("hybrid");
    let server = result.ledger.actor(Actor::Server);
    assert!(
        server.idle > server.train
            && server.idle > server.communicate
            && server.idle > server.encrypt
            && server.idle > server.other,
        "server idle {:?} is not the largest bucket ({:?})",
        server.idle,
        server
    );
    for (actor, ledger) in &result.ledger.actors {
        assert!(
            ledger.encrypt.0 > 0,
            "actor {actor} has an empty encrypt bucket"
        );
    }
    pass(
        "12 (hybrid decomposition)",
        format!(
            "server idle {:.4}s vs train {:.4}s, comm {:.4}s, encrypt {:.6}s, other {:.4}s",
            server.idle.as_secs_f64(),
            server.train.as_secs_f64(),
            server.communicate.as_secs_f64(),
            server.encrypt.as_secs_f64(),
            server.other.as_secs_f64()
        ),
    );
}

/// Catalog completeness: every preset parses and the sampled-client counts
/// match the published sampling ratios.
#[test]
fn preset_catalog_and_sampling_ratios() {
    for name in PRESET_NAMES {
        parse_config(preset(name).unwrap()).unwrap_or_else(|e| panic!("preset {name}: {e}"));
    }
    // 0.4 of 5 clients -> 2; 0.2 of 2 clients -> 1 (ceiling).
    let mut rng = SeededRng::new(9);
    assert_eq!(sample_clients(5, 0.4, &mut rng).len(), 2);
    assert_eq!(sample_clients(2, 0.2, &mut rng).len(), 1);

    // Aggregation smoke: one update adopts the client's payload exactly.
    let u = fedbench::engine::ClientUpdate {
        payload: flat_params(vec![0.25, -0.5]),
        tau: 1,
        n_samples: 4,
        wire_bytes: 0,
    };
    let mut params = u.payload.zeros_like();
    aggregate(&[u], Algorithm::FedAvg, &mut params, None).unwrap();
    assert_eq!(params.as_slice(), &[0.25, -0.5]);
}
