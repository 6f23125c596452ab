//! Reproducibility contracts: identical configuration and seed produce
//! byte-identical output files, and distinct seeds do not.

use std::fs;

use fedbench::experiment::{parse_config, run_to_dir};

const SMALL: &str = r#"
format = 1
name = "det"
repetitions = 2
base_seed = 7

[workload]
kind = "blobs"
samples = 400
features = 4
classes = 3
noise = 1.5
separation = 2.0

[model]
hidden = []
activation = "relu"
head = "softmax"
optimizer = "sgd"
momentum = 0.9
lr = 0.1
batch_size = 16
patience = 5
factor = 0.1

[partition]
scheme = "iid"
clients = 3

[algorithm]
name = "fedavg"
client_fraction = 1.0
local_epochs = 1
max_rounds = 40
"#;

#[test]
fn rerun_is_byte_identical() {
    let config = parse_config(SMALL).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_to_dir(&config, dir_a.path()).unwrap();
    run_to_dir(&config, dir_b.path()).unwrap();

    for file in [
        "summary.csv",
        "meta.json",
        "rep0/rounds.jsonl",
        "rep0/ledger.csv",
        "rep1/rounds.jsonl",
        "rep1/ledger.csv",
    ] {
        let a = fs::read(dir_a.path().join(file)).unwrap();
        let b = fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
        assert!(!a.is_empty(), "{file} is empty");
    }
}

#[test]
fn different_seed_changes_rounds() {
    let config = parse_config(SMALL).unwrap();
    let mut other = config.clone();
    other.base_seed = 8;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_to_dir(&config, dir_a.path()).unwrap();
    run_to_dir(&other, dir_b.path()).unwrap();
    let a = fs::read(dir_a.path().join("rep0/rounds.jsonl")).unwrap();
    let b = fs::read(dir_b.path().join("rep0/rounds.jsonl")).unwrap();
    assert_ne!(a, b, "different seeds should change the round stream");
}

#[test]
fn repetitions_produce_expected_file_tree() {
    let mut config = parse_config(SMALL).unwrap();
    config.repetitions = 3;
    let dir = tempfile::tempdir().unwrap();
    let output = run_to_dir(&config, dir.path()).unwrap();
    assert_eq!(output.run_dirs.len(), 3);
    for rep in 0..3 {
        assert!(dir.path().join(format!("rep{rep}/rounds.jsonl")).exists());
        assert!(dir.path().join(format!("rep{rep}/ledger.csv")).exists());
    }
    // Summary has one header, three run rows, one aggregate row.
    let summary = fs::read_to_string(output.summary_path).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let aggregate = summary.lines().last().unwrap();
    assert!(aggregate.contains("aggregate"));
    assert!(aggregate.contains('±'));
}
