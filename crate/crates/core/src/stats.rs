//! Evaluation metrics, convergence detection, run aggregation, and the
//! Bayesian correlated t-test with a region of practical equivalence.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::models::{forward, Head, MlpSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Top1,
    Binary,
    Mae,
    Mse,
}

impl Metric {
    /// Whether larger metric values are better (accuracy) or worse (errors).
    pub fn higher_is_better(&self) -> bool {
        matches!(self, Metric::Top1 | Metric::Binary)
    }
}

fn check_head(spec: &MlpSpec, metric: Metric) -> Result<()> {
    let ok = match metric {
        Metric::Top1 => spec.head == Head::SoftmaxCrossEntropy,
        Metric::Binary => spec.head == Head::SigmoidBce,
        Metric::Mae | Metric::Mse => spec.head == Head::LinearMse,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "metric {metric:?} does not match output head {:?}",
            spec.head
        )))
    }
}

/// Computes a metric from already-produced head outputs; the entry point for
/// split networks whose forward pass lives elsewhere.
pub fn metric_from_outputs(
    outputs: &crate::numkit::DenseMatrix,
    labels: &Labels,
    metric: Metric,
) -> Result<f64> {
    if outputs.rows() != labels.len() {
        return Err(Error::shape("output rows do not match label count"));
    }
    if outputs.rows() == 0 {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let n = outputs.rows() as f64;
    match (metric, labels) {
        (Metric::Top1, Labels::Classes(classes)) => {
            let mut hits = 0usize;
            for (r, &c) in classes.iter().enumerate() {
                let row = outputs.row(r);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                if argmax == c {
                    hits += 1;
                }
            }
            Ok(hits as f64 / n)
        }
        (Metric::Binary, Labels::Classes(classes)) => {
            let hits = classes
                .iter()
                .enumerate()
                .filter(|&(r, &c)| (outputs.get(r, 0) >= 0.5) == (c == 1))
                .count();
            Ok(hits as f64 / n)
        }
        (Metric::Mae, Labels::Reals(ys)) => Ok(ys
            .iter()
            .enumerate()
            .map(|(r, y)| (outputs.get(r, 0) - y).abs())
            .sum::<f64>()
            / n),
        (Metric::Mse, Labels::Reals(ys)) => Ok(ys
            .iter()
            .enumerate()
            .map(|(r, y)| {
                let e = outputs.get(r, 0) - y;
                e * e
            })
            .sum::<f64>()
            / n),
        _ => Err(Error::invalid("metric does not match the label kind")),
    }
}

/// Evaluates a model on a dataset under the named metric.
pub fn evaluate(
    spec: &MlpSpec,
    params: &ParamVector,
    dataset: &Dataset,
    metric: Metric,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    check_head(spec, metric)?;
    let (outputs, _) = forward(spec, params, &dataset.features)?;
    metric_from_outputs(&outputs, &dataset.labels, metric)
}

/// First round (1-based) at which the learning rate has been reduced for the
/// fourth time; `None` when the run never converged.
pub fn convergence_rounds(reduction_curve: &[usize]) -> Result<Option<usize>> {
    if reduction_curve.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("reduction counts must be nondecreasing"));
    }
    Ok(reduction_curve
        .iter()
        .position(|&c| c >= 4)
        .map(|idx| idx + 1))
}

/// Posterior probability triple of the Bayesian correlated t-test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub p_left: f64,
    pub p_rope: f64,
    pub p_right: f64,
    pub rope: f64,
    pub n_runs: usize,
}

/// Bayesian correlated t-test over paired per-seed metric differences
/// (A - B).
///
/// The posterior over the mean difference is Student-t with `n-1` degrees of
/// freedom, location at the sample mean and scale
/// `sqrt((1/n + rho/(1-rho)) * s^2)`, where `rho` is the run correlation
/// (zero for independent repetitions). `p_left` is the posterior mass below
/// `-rope`, `p_right` above `+rope`, `p_rope` inside.
pub fn bayes_corr_ttest(diffs: &[f64], rope: f64, rho: f64) -> Result<ComparisonResult> {
    if diffs.len() < 2 {
        return Err(Error::invalid("need at least two paired differences"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid("correlation must lie in [0, 1)"));
    }
    if rope < 0.0 || !rope.is_finite() {
        return Err(Error::invalid("rope must be a nonnegative number"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let scale = ((1.0 / n + rho / (1.0 - rho)) * var).sqrt();

    let (p_left, p_rope, p_right) = if scale == 0.0 {
        // Degenerate posterior: a point mass at the mean.
        if mean < -rope {
            (1.0, 0.0, 0.0)
        } else if mean > rope {
            (0.0, 0.0, 1.0)
        } else {
            (0.0, 1.0, 0.0)
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::runtime(format!("t distribution: {e}")))?;
        let left = t.cdf((-rope - mean) / scale);
        let right = 1.0 - t.cdf((rope - mean) / scale);
        (left, (1.0 - left - right).max(0.0), right)
    };
    Ok(ComparisonResult {
        p_left,
        p_rope,
        p_right,
        rope,
        n_runs: diffs.len(),
    })
}

/// Sample mean and standard deviation (n-1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One finished repetition, as recorded in the run summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub preset: String,
    pub seed: u64,
    pub final_metric: f64,
    /// Rounds to the fourth rate reduction, or the round cap when the run
    /// was stopped by it.
    pub convergence_rounds: usize,
    pub throughput: f64,
    pub overhead: f64,
    pub uplink_ratio: f64,
    pub eps_spent: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Activation};
    use crate::numkit::DenseMatrix;
    use approx::assert_abs_diff_eq;
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn metric_definitions() {
        // Perfect predictor: x > 0 maps to class 0 through a big weight gap.
        let spec = MlpSpec::new(vec![1, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let mut params = init_params(&spec, 1);
        for v in params.as_mut_slice() {
            *v = 0.0;
        }
        params.as_mut_slice()[0] = 10.0;
        params.as_mut_slice()[1] = -10.0;
        let ds = Dataset::new(
            "t",
            DenseMatrix::from_vec(4, 1, vec![1.0, 2.0, -1.0, -2.0]).unwrap(),
            Labels::Classes(vec![0, 0, 1, 1]),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(evaluate(&spec, &params, &ds, Metric::Top1).unwrap(), 1.0);

        // Constant predictor on balanced binary data scores one half.
        let bspec = MlpSpec::new(vec![1, 1], Activation::Relu, Head::SigmoidBce).unwrap();
        let bparams = ParamVector::from_values(bspec.registry(), vec![0.0, 3.0]).unwrap();
        let bds = Dataset::new(
            "b",
            DenseMatrix::from_vec(4, 1, vec![0.5, 0.5, 0.5, 0.5]).unwrap(),
            Labels::Classes(vec![0, 1, 0, 1]),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(
            evaluate(&bspec, &bparams, &bds, Metric::Binary).unwrap(),
            0.5
        );

        // mae([1,2],[1,4]) = 1.0 with an identity model.
        let rspec = MlpSpec::new(vec![1, 1], Activation::Relu, Head::LinearMse).unwrap();
        let rparams = ParamVector::from_values(rspec.registry(), vec![1.0, 0.0]).unwrap();
        let rds = Dataset::new(
            "r",
            DenseMatrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap(),
            Labels::Reals(vec![1.0, 4.0]),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(evaluate(&rspec, &rparams, &rds, Metric::Mae).unwrap(), 1.0);
        assert_abs_diff_eq!(evaluate(&rspec, &rparams, &rds, Metric::Mse).unwrap(), 2.0);
    }

    #[test]
    fn incompatible_head_rejected() {
        let spec = MlpSpec::new(vec![1, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let params = init_params(&spec, 1);
        let ds = Dataset::new(
            "t",
            DenseMatrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap(),
            Labels::Reals(vec![0.0, 1.0]),
            None,
        )
        .unwrap();
        assert!(evaluate(&spec, &params, &ds, Metric::Mae).is_err());
        assert!(evaluate(&spec, &params, &ds, Metric::Top1).is_err());
    }

    #[test]
    fn convergence_round_detection() {
        assert_eq!(
            convergence_rounds(&[0, 0, 1, 1, 2, 2, 3, 3, 3, 4, 4]).unwrap(),
            Some(10)
        );
        assert_eq!(convergence_rounds(&[0, 1, 2, 3]).unwrap(), None);
        assert!(convergence_rounds(&[0, 2, 1]).is_err());
    }

    #[test]
    fn ttest_point_mass_cases() {
        let r = bayes_corr_ttest(&[0.0; 5], 0.01, 0.0).unwrap();
        assert_eq!(r.p_rope, 1.0);

        let r = bayes_corr_ttest(&[0.5, 0.5, 0.5], 0.01, 0.0).unwrap();
        assert_eq!(r.p_right, 1.0);

        let r = bayes_corr_ttest(&[-0.5, -0.5], 0.01, 0.0).unwrap();
        assert_eq!(r.p_left, 1.0);
    }

    #[test]
    fn ttest_far_from_rope_with_tiny_variance() {
        let diffs = vec![0.1, 0.1001, 0.0999, 0.1, 0.1];
        let r = bayes_corr_ttest(&diffs, 0.01, 0.0).unwrap();
        assert!(r.p_right > 0.999999);
    }

    /// Numeric-integration oracle: trapezoid rule over the closed-form t
    /// density with 10^5 points.
    fn triple_by_integration(diffs: &[f64], rope: f64, rho: f64) -> (f64, f64, f64) {
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
        // Trapezoid rule with 10^5 points per region, boundaries exact.
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
        let left = trapezoid(mean - span, -rope);
        let rope_mass = trapezoid(-rope, rope);
        let right = trapezoid(rope, mean + span);
        (left, rope_mass, right)
    }

    #[test]
    fn worked_example_matches_numeric_integration() {
        // n=12, mean 0.004, sd 0.01: construct the sample explicitly.
        let base = [
            -1.5509, -1.1366, -0.9222, -0.6069, -0.3559, -0.1, 0.1, 0.3559, 0.6069, 0.9222, 1.1366,
            1.5509,
        ];
        let (m0, s0) = mean_std(&base);
        let diffs: Vec<f64> = base.iter().map(|x| 0.004 + (x - m0) / s0 * 0.01).collect();
        let (m, s) = mean_std(&diffs);
        assert_abs_diff_eq!(m, 0.004, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.01, epsilon = 1e-12);

        let r = bayes_corr_ttest(&diffs, 0.01, 0.0).unwrap();
        let (l, c, rt) = triple_by_integration(&diffs, 0.01, 0.0);
        assert_abs_diff_eq!(r.p_left, l, epsilon = 1e-6);
        assert_abs_diff_eq!(r.p_rope, c, epsilon = 1e-6);
        assert_abs_diff_eq!(r.p_right, rt, epsilon = 1e-6);
    }

    #[test]
    fn ttest_invariants() {
        let mut rng = crate::numkit::SeededRng::new(17);
        for _ in 0..200 {
            let n = 2 + (rng.below(10) as usize);
            let diffs: Vec<f64> = (0..n).map(|_| rng.normal() * 0.05).collect();
            let rope = rng.uniform() * 0.05;
            let r = bayes_corr_ttest(&diffs, rope, 0.0).unwrap();

            // Triple sums to one.
            assert_abs_diff_eq!(r.p_left + r.p_rope + r.p_right, 1.0, epsilon = 1e-9);

            // Antisymmetry under swapping A and B.
            let neg: Vec<f64> = diffs.iter().map(|d| -d).collect();
            let rn = bayes_corr_ttest(&neg, rope, 0.0).unwrap();
            assert_abs_diff_eq!(r.p_left, rn.p_right, epsilon = 1e-9);
            assert_abs_diff_eq!(r.p_rope, rn.p_rope, epsilon = 1e-9);

            // Widening the rope never shrinks its mass.
            let wider = bayes_corr_ttest(&diffs, rope * 2.0 + 1e-3, 0.0).unwrap();
            assert!(wider.p_rope >= r.p_rope - 1e-12);

            // Location-scale family: scaling diffs and rope together changes
            // nothing.
            let scaled: Vec<f64> = diffs.iter().map(|d| d * 3.5).collect();
            let rs = bayes_corr_ttest(&scaled, rope * 3.5, 0.0).unwrap();
            assert_abs_diff_eq!(r.p_left, rs.p_left, epsilon = 1e-9);
            assert_abs_diff_eq!(r.p_rope, rs.p_rope, epsilon = 1e-9);
        }
    }

    #[test]
    fn ttest_rejects_bad_input() {
        assert!(bayes_corr_ttest(&[1.0], 0.01, 0.0).is_err());
        assert!(bayes_corr_ttest(&[1.0, 2.0], 0.01, 1.0).is_err());
        assert!(bayes_corr_ttest(&[1.0, f64::NAN], 0.01, 0.0).is_err());
        assert!(bayes_corr_ttest(&[1.0, 2.0], -0.1, 0.0).is_err());
    }

    #[test]
    fn mean_std_uses_sample_denominator() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 1.0);
    }
}
