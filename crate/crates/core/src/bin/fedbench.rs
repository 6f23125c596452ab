use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fedbench::data::{save_csv, synth_blobs, synth_regression, synth_vertical_blobs};
use fedbench::experiment::{load_run_set, parse_config, preset, report, run_to_dir, PRESET_NAMES};

#[derive(Parser)]
#[command(
    name = "fedbench",
    version,
    about = "Deterministic federated-learning systems benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration (TOML file or --preset) to an output
    /// directory.
    Run {
        /// Path to a TOML experiment configuration.
        config: Option<PathBuf>,
        /// Run a named preset from the catalog instead of a file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Output directory; defaults to runs/<name>.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compare two or more finished run directories.
    Report {
        /// Run directories produced by `run`.
        dirs: Vec<PathBuf>,
        /// Region of practical equivalence for the final metric.
        #[arg(long, default_value_t = 0.01)]
        rope: f64,
        /// Run correlation for the correlated t-test (0 = independent runs).
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
    },
    /// List the reference experiment presets.
    ListPresets,
    /// Generate a synthetic dataset CSV from a small TOML spec.
    GenData {
        /// TOML spec: kind, samples, features, classes, noise, separation,
        /// seed, out.
        spec: PathBuf,
    },
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataSpec {
    kind: String,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_features")]
    features: usize,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default)]
    noise: f64,
    #[serde(default = "default_separation")]
    separation: f64,
    #[serde(default = "default_overlap")]
    overlap: f64,
    #[serde(default)]
    seed: u64,
    out: PathBuf,
    #[serde(default)]
    out_right: Option<PathBuf>,
}

fn default_samples() -> usize {
    1000
}
fn default_features() -> usize {
    8
}
fn default_classes() -> usize {
    4
}
fn default_separation() -> f64 {
    2.0
}
fn default_overlap() -> f64 {
    1.0
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            preset: preset_name,
            out,
        } => {
            let text = match (&config, &preset_name) {
                (Some(path), None) => fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                (None, Some(name)) => preset(name)
                    .with_context(|| {
                        format!("unknown preset {name:?}; see `fedbench list-presets`")
                    })?
                    .to_string(),
                _ => bail!("provide a config file or --preset <name>"),
            };
            let parsed = parse_config(&text)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&parsed.name));
            let output = run_to_dir(&parsed, &out_dir)?;
            for record in &output.records {
                println!(
                    "{} seed={} metric={:.4} rounds={} throughput={:.1} overhead={:.4} uplink_ratio={:.2}{}",
                    record.preset,
                    record.seed,
                    record.final_metric,
                    record.convergence_rounds,
                    record.throughput,
                    record.overhead,
                    record.uplink_ratio,
                    record
                        .eps_spent
                        .map(|e| format!(" eps={e:.3}"))
                        .unwrap_or_default()
                );
            }
            println!("summary: {}", output.summary_path.display());
            Ok(())
        }
        Command::Report { dirs, rope, rho } => {
            if dirs.len() < 2 {
                bail!("need at least two run directories");
            }
            let sets = dirs
                .iter()
                .map(|d| load_run_set(d))
                .collect::<fedbench::Result<Vec<_>>>()?;
            let tables = report(&sets, rope, rho)?;
            print!("{tables}");
            Ok(())
        }
        Command::ListPresets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(())
        }
        Command::GenData { spec } => {
            let text =
                fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: GenDataSpec = toml::from_str(&text).context("parsing gen-data spec")?;
            match spec.kind.as_str() {
                "blobs" => {
                    let ds = synth_blobs(
                        spec.samples,
                        spec.features,
                        spec.classes,
                        spec.separation,
                        spec.noise,
                        spec.seed,
                    )?;
                    save_csv(&ds, &spec.out)?;
                    println!("wrote {}", spec.out.display());
                }
                "regression" => {
                    let (ds, _) =
                        synth_regression(spec.samples, spec.features, spec.noise, spec.seed)?;
                    save_csv(&ds, &spec.out)?;
                    println!("wrote {}", spec.out.display());
                }
                "vertical-blobs" => {
                    let right_path = spec
                        .out_right
                        .context("vertical-blobs needs out_right for the second party")?;
                    let (left, right) = synth_vertical_blobs(
                        spec.samples,
                        spec.features,
                        spec.features,
                        spec.classes,
                        spec.separation,
                        spec.noise,
                        spec.overlap,
                        spec.seed,
                    )?;
                    save_csv(&left, &spec.out)?;
                    save_csv(&right, &right_path)?;
                    println!("wrote {} and {}", spec.out.display(), right_path.display());
                }
                other => bail!("unknown dataset kind {other:?}"),
            }
            Ok(())
        }
    }
}
