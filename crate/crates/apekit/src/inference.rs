//! Nonparametric row bootstrap around any estimator. Each resample reruns
//! the whole pipeline, learners and fold draws included.

use crate::datamodel::{normal_critical, Dataset};
use crate::error::{ApeError, Result};
use crate::estimators::EstimatorSpec;
use crate::numkit::{mean, quantile_sorted, sorted_copy, std_dev};
use crate::rng::{derive_seed, rng_from, tags};
use rand::Rng as _;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiMethod {
    #[default]
    Percentile,
    NormalApprox,
}

impl CiMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CiMethod::Percentile => "percentile",
            CiMethod::NormalApprox => "normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Successful resample estimates in resample-index order.
    pub estimates: Vec<f64>,
    /// Full-sample estimate.
    pub point: f64,
    /// SD of the estimates, denominator `B - 1`.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: CiMethod,
    pub alpha: f64,
    /// Resamples that failed on the first attempt.
    pub retried: usize,
    /// Resamples that failed twice and were dropped.
    pub skipped: usize,
}

impl BootstrapResult {
    /// The same estimates with the other interval construction.
    pub fn with_method(&self, method: CiMethod) -> BootstrapResult {
        let (ci_low, ci_high) = interval(&self.estimates, self.point, self.se, self.alpha, method);
        BootstrapResult {
            ci_low,
            ci_high,
            method,
            ..self.clone()
        }
    }
}

fn interval(est: &[f64], point: f64, se: f64, alpha: f64, method: CiMethod) -> (f64, f64) {
    match method {
        CiMethod::Percentile => {
            let s = sorted_copy(est);
            (
                quantile_sorted(&s, alpha / 2.0),
                quantile_sorted(&s, 1.0 - alpha / 2.0),
            )
        }
        CiMethod::NormalApprox => {
            let z = normal_critical(alpha);
            (point - z * se, point + z * se)
        }
    }
}

pub fn resample_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap an arbitrary statistic `f(data, seed)`. Resample `b` draws its
/// rows and its inner seed from `derive_seed(seed, BOOT, b)`; after a failure
/// it is retried once from `BOOT_RETRY`. More than 10% dropped resamples is
/// an error.
pub fn bootstrap_with<F>(
    data: &Dataset,
    f: F,
    reps: usize,
    alpha: f64,
    seed: u64,
    method: CiMethod,
) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<f64> + Sync,
{
    if reps < 50 {
        return Err(ApeError::Parameter(format!(
            "bootstrap needs B >= 50, got {reps}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ApeError::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let point = f(data, seed)?;
    let n = data.n();
    let attempt = |s: u64| {
        let d = data.select_rows(&resample_rows(n, s));
        f(&d, s).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ApeError::Degenerate("non-finite resample estimate".into()))
            }
        })
    };
    // (estimate, retried, last error)
    let outcomes: Vec<(Option<f64>, bool, Option<String>)> = (0..reps)
        .into_par_iter()
        .map(|b| match attempt(derive_seed(seed, tags::BOOT, b as u64)) {
            Ok(v) => (Some(v), false, None),
            Err(_) => match attempt(derive_seed(seed, tags::BOOT_RETRY, b as u64)) {
                Ok(v) => (Some(v), true, None),
                Err(e) => (None, true, Some(e.to_string())),
            },
        })
        .collect();
    let retried = outcomes.iter().filter(|o| o.1).count();
    let skipped = outcomes.iter().filter(|o| o.0.is_none()).count();
    if skipped * 10 > reps {
        let last = outcomes
            .iter()
            .rev()
            .find_map(|o| o.2.clone())
            .unwrap_or_default();
        return Err(ApeError::Aggregate {
            failed: skipped,
            total: reps,
            last,
        });
    }
    let estimates: Vec<f64> = outcomes.iter().filter_map(|o| o.0).collect();
    let se = std_dev(&estimates);
    let (ci_low, ci_high) = interval(&estimates, point, se, alpha, method);
    Ok(BootstrapResult {
        estimates,
        point,
        se,
        ci_low,
        ci_high,
        method,
        alpha,
        retried,
        skipped,
    })
}

/// Bootstrap the point estimate of `estimator`.
pub fn bootstrap(
    data: &Dataset,
    estimator: &EstimatorSpec,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_with(
        data,
        |d, s| estimator.run(d, s).map(|e| e.point),
        reps,
        alpha,
        seed,
        CiMethod::Percentile,
    )
}

/// Mean of the bootstrap estimates minus the full-sample point.
pub fn bootstrap_bias(r: &BootstrapResult) -> f64 {
    mean(&r.estimates) - r.point
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;

    fn toy(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(y, x, Matrix::zeros(n, 0), None, None).unwrap()
    }

    #[test]
    fn too_few_reps() {
        let d = toy(20);
        assert!(matches!(
            bootstrap_with(
                &d,
                |d, _| Ok(mean(d.y())),
                10,
                0.05,
                1,
                CiMethod::Percentile
            ),
            Err(ApeError::Parameter(_))
        ));
    }

    #[test]
    fn failures_become_aggregate_error() {
        let d = toy(20);
        let r = bootstrap_with(
            &d,
            |d, _| {
                if d.y()[0] > 5.0 {
                    Err(ApeError::Degenerate("x".into()))
                } else {
                    Ok(1.0)
                }
            },
            60,
            0.05,
            2,
            CiMethod::Percentile,
        );
        // the full-sample call passes (y[0] = 0) but about half the resamples fail twice
        assert!(matches!(r, Err(ApeError::Aggregate { total: 60, .. })));
    }

    #[test]
    fn percentile_bounds_are_quantiles() {
        let d = toy(30);
        let r =
            bootstrap_with(&d, |d, _| Ok(mean(d.y())), 99, 0.1, 3, CiMethod::Percentile).unwrap();
        let s = sorted_copy(&r.estimates);
        assert_eq!(r.ci_low, quantile_sorted(&s, 0.05));
        assert_eq!(r.ci_high, quantile_sorted(&s, 0.95));
        let nr = r.with_method(CiMethod::NormalApprox);
        assert!((nr.ci_high - nr.point - normal_critical(0.1) * r.se).abs() < 1e-12);
    }
}
