//! Deterministic federated-learning systems benchmark.
//!
//! The crate implements a desk-scale federated learning stack: synthetic and
//! CSV workloads, non-IID partitioners, FedSGD/FedAvg/FedProx/FedNova
//! aggregation, split networks for vertically partitioned features, additive
//! secret sharing over a fixed-point ring, local differential privacy with an
//! RDP accountant, uplink gradient compression, and a logical-clock transport
//! simulation that prices every byte and second. Every run is a pure function
//! of its configuration and seed.

pub mod compression;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod models;
pub mod netsim;
pub mod numkit;
pub mod privacy;
pub mod secure_agg;
pub mod splitnn;
pub mod stats;

pub use error::{Error, Result};

/// Stream tags for deriving independent random generators from one
/// experiment seed. Keeping them in one table avoids accidental collisions.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CLIENT_SAMPLE: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const DP_NOISE: u64 = 7;
    pub const SHARES: u64 = 8;
    pub const RANDK: u64 = 9;
    pub const LOWRANK: u64 = 10;
}
