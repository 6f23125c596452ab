use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::stats::{bayes_corr_ttest, mean_std, ComparisonResult, RunRecord};

/// Convergence-time comparisons use a fixed rope of +/- 10 rounds.
pub const CONVERGENCE_ROPE: f64 = 10.0;

#[derive(Debug, Clone, Deserialize)]
struct MetaFile {
    format: u32,
    name: String,
    #[allow(dead_code)]
    repetitions: usize,
    #[allow(dead_code)]
    base_seed: u64,
    workload: serde_json::Value,
}

/// One run directory's summary rows plus its workload fingerprint.
#[derive(Debug, Clone)]
pub struct RunSet {
    pub name: String,
    pub workload_fingerprint: String,
    pub records: Vec<RunRecord>,
}

/// Loads `summary.csv` and `meta.json` from a run directory produced by the
/// runner.
pub fn load_run_set(dir: &Path) -> Result<RunSet> {
    let meta_text = fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| Error::invalid(format!("{}: no meta.json ({e})", dir.display())))?;
    let meta: MetaFile = serde_json::from_str(&meta_text)
        .map_err(|e| Error::invalid(format!("{}: bad meta.json ({e})", dir.display())))?;
    if meta.format != 1 {
        return Err(Error::invalid(format!(
            "{}: unsupported meta format {}",
            dir.display(),
            meta.format
        )));
    }
    let summary = fs::read_to_string(dir.join("summary.csv"))
        .map_err(|e| Error::invalid(format!("{}: no summary.csv ({e})", dir.display())))?;
    let mut records = Vec::new();
    for (i, line) in summary.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::invalid(format!("summary row {i}: wrong arity")));
        }
        if fields[1] == "aggregate" {
            continue;
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid(format!("summary row {i}: bad {what}: {s:?}")))
        };
        records.push(RunRecord {
            preset: fields[0].to_string(),
            seed: fields[1]
                .parse()
                .map_err(|_| Error::invalid(format!("summary row {i}: bad seed")))?,
            final_metric: parse(fields[2], "final_metric")?,
            convergence_rounds: fields[3]
                .parse()
                .map_err(|_| Error::invalid(format!("summary row {i}: bad rounds")))?,
            throughput: parse(fields[4], "throughput")?,
            overhead: parse(fields[5], "overhead")?,
            uplink_ratio: parse(fields[6], "uplink_ratio")?,
            eps_spent: if fields[7].is_empty() {
                None
            } else {
                Some(parse(fields[7], "eps_spent")?)
            },
        });
    }
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "{}: summary.csv has no run rows",
            dir.display()
        )));
    }
    Ok(RunSet {
        name: meta.name,
        workload_fingerprint: meta.workload.to_string(),
        records,
    })
}

#[derive(Debug, Clone)]
pub struct SummaryLine {
    pub name: String,
    pub metric: (f64, f64),
    pub convergence: (f64, f64),
    pub throughput: (f64, f64),
    pub overhead: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct PairLine {
    pub left: String,
    pub right: String,
    pub metric: ComparisonResult,
    pub convergence: ComparisonResult,
}

/// Mean +/- std table plus all pairwise posterior comparisons.
#[derive(Debug, Clone)]
pub struct Report {
    pub rope: f64,
    pub rho: f64,
    pub summaries: Vec<SummaryLine>,
    pub pairs: Vec<PairLine>,
}

/// Builds the comparison report across one or more run sets with matching
/// workloads. Runs are paired by seed for the correlated t-test.
pub fn report(sets: &[RunSet], rope: f64, rho: f64) -> Result<Report> {
    if sets.len() < 2 {
        return Err(Error::invalid("need at least two run sets to compare"));
    }
    let fingerprint = &sets[0].workload_fingerprint;
    for s in sets {
        if &s.workload_fingerprint != fingerprint {
            return Err(Error::invalid(format!(
                "run sets have different workloads: {} vs {}",
                sets[0].name, s.name
            )));
        }
    }

    let mut summaries = Vec::new();
    for s in sets {
        let col = |f: fn(&RunRecord) -> f64| {
            let values: Vec<f64> = s.records.iter().map(f).collect();
            mean_std(&values)
        };
        summaries.push(SummaryLine {
            name: s.name.clone(),
            metric: col(|r| r.final_metric),
            convergence: col(|r| r.convergence_rounds as f64),
            throughput: col(|r| r.throughput),
            overhead: col(|r| r.overhead),
        });
    }

    let mut pairs = Vec::new();
    for i in 0..sets.len() {
        for j in (i + 1)..sets.len() {
            let by_seed: BTreeMap<u64, &RunRecord> =
                sets[j].records.iter().map(|r| (r.seed, r)).collect();
            let mut metric_diffs = Vec::new();
            let mut conv_diffs = Vec::new();
            for a in &sets[i].records {
                if let Some(b) = by_seed.get(&a.seed) {
                    metric_diffs.push(a.final_metric - b.final_metric);
                    conv_diffs.push(a.convergence_rounds as f64 - b.convergence_rounds as f64);
                }
            }
            if metric_diffs.len() < 2 {
                return Err(Error::invalid(format!(
                    "{} vs {}: fewer than two seed-paired runs",
                    sets[i].name, sets[j].name
                )));
            }
            pairs.push(PairLine {
                left: sets[i].name.clone(),
                right: sets[j].name.clone(),
                metric: bayes_corr_ttest(&metric_diffs, rope, rho)?,
                convergence: bayes_corr_ttest(&conv_diffs, CONVERGENCE_ROPE, rho)?,
            });
        }
    }
    Ok(Report {
        rope,
        rho,
        summaries,
        pairs,
    })
}

// Table layout: first slot is P(A - B > rope), last is P(A - B < -rope).
fn triple(c: &ComparisonResult) -> String {
    format!("<{:.3e}, {:.3e}, {:.3e}>", c.p_right, c.p_rope, c.p_left)
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "run set            metric            convergence       throughput        overhead"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{:<18} {:>7.4}±{:<8.4} {:>7.1}±{:<9.1} {:>8.1}±{:<8.1} {:>6.4}±{:<6.4}",
                s.name,
                s.metric.0,
                s.metric.1,
                s.convergence.0,
                s.convergence.1,
                s.throughput.0,
                s.throughput.1,
                s.overhead.0,
                s.overhead.1
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "pairwise posterior p(A, Equal, B); metric rope ±{}, convergence rope ±{}",
            self.rope, CONVERGENCE_ROPE
        )?;
        for p in &self.pairs {
            writeln!(
                f,
                "p({}, Equal, {}) metric      = {}",
                p.left,
                p.right,
                triple(&p.metric)
            )?;
            writeln!(
                f,
                "p({}, Equal, {}) convergence = {}",
                p.left,
                p.right,
                triple(&p.convergence)
            )?;
        }
        Ok(())
    }
}
