use crate::distributions::ErrorDistribution;
use crate::error::{ApeError, Result};
use crate::estimators::EstimatorSpec;
use crate::nuisance::LearnerSpec;

use super::dgp::Family;
use super::grid::GridConfig;

/// Names accepted by [`preset`]; `figure1` is handled by the imperfect-training
/// experiment instead of a grid.
pub const PRESETS: &[&str] = &["table3", "table4", "table5", "table6", "table7", "figure1"];

/// GBT used for residualising `X` in the table presets, chosen by five-fold
/// CV prediction error on a pilot draw of the simple treatment design.
pub fn preset_gbt() -> LearnerSpec {
    LearnerSpec::gbt(300, 3, 0.03, 5)
}

pub fn preset_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::SimpleOls,
        EstimatorSpec::InteractedOls { degree: 3 },
        EstimatorSpec::PlSpline {
            degree: 3,
            knots: 5,
        },
        EstimatorSpec::RolsMl {
            learner: preset_gbt(),
            folds: 5,
            in_sample: false,
        },
        EstimatorSpec::RolsKnown,
    ]
}

/// Desk-scale versions of the simulation tables: 500 replications at
/// `n in {100, 1000, 5000}`.
pub fn preset(name: &str) -> Result<GridConfig> {
    let normal = ErrorDistribution::standard_normal();
    let (y, xs, ms, err): (Family, Vec<Family>, Vec<usize>, ErrorDistribution) = match name {
        "table3" => (
            Family::Additive,
            vec![Family::Additive, Family::Simple, Family::Complex],
            vec![1],
            normal,
        ),
        "table4" => (Family::Complex, vec![Family::Simple], vec![1, 2, 3], normal),
        "table5" => (
            Family::Complex,
            vec![Family::Complex],
            vec![1, 2, 3],
            normal,
        ),
        "table6" => (
            Family::Complex,
            vec![Family::Complex],
            vec![1, 2, 3],
            ErrorDistribution::GaussianMixture { mu: 0.9 },
        ),
        "table7" => (
            Family::Complex,
            vec![Family::Additive],
            vec![1, 2, 3],
            normal,
        ),
        "figure1" => {
            return Err(ApeError::Parameter(
                "figure1 is not a grid preset; run `apekit figure1`".into(),
            ))
        }
        other => {
            return Err(ApeError::Parameter(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(GridConfig {
        name: name.to_string(),
        y_family: y,
        x_families: xs,
        m_values: ms,
        n_values: vec![100, 1000, 5000],
        error_dist: err,
        estimators: preset_estimators(),
        reps: 500,
        seed: 1,
        oracle_n: 1_000_000,
    })
}
