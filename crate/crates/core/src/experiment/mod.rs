//! Experiment driver: configuration parsing and validation, the preset
//! catalog, seeded repetition orchestration, and report emission.

pub mod config;
mod presets;
mod report;
mod runner;

pub use config::{parse_config, ExperimentConfig};
pub use presets::{preset, PRESET_NAMES};
pub use report::{load_run_set, report, Report, RunSet};
pub use runner::{execute_repetition, run_to_dir, RunOutput};
