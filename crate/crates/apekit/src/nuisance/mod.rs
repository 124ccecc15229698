//! Nuisance regressions `r(Z) = E[X|Z]` and `l(Z) = E[Y|Z]`, and the
//! cross-fitting engine that turns them into out-of-fold residuals.

mod gbt;
pub mod mlp;
mod spec;

pub use gbt::GbtModel;
pub use mlp::{MlpConfig, MlpRegressor};
pub use spec::{LearnerKind, LearnerSpec};

use crate::datamodel::{make_folds, Dataset, FoldAssignment};
use crate::error::{ApeError, Result};
use crate::numkit::{correlation, solve_ls, AdditiveSplineBasis, DesignMatrix, Matrix, PolyBasis};
use crate::rng::{derive_seed, tags};
use rayon::prelude::*;

/// Predictions plus a warning when the training target had no variance and a
/// constant predictor was substituted.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub warning: Option<String>,
}

fn z_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("z{j}")).collect()
}

/// Polynomial ridge on the controls: the intercept is not penalised.
fn ridge_fit_predict(
    z_train: &Matrix,
    t: &[f64],
    z_eval: &Matrix,
    degree: usize,
    lambda: f64,
) -> Result<Vec<f64>> {
    let basis = PolyBasis::new(z_names(z_train.ncols()), degree)?;
    fn cols(m: &Matrix) -> Vec<&[f64]> {
        m.columns().collect()
    }
    let train = basis.design(&cols(z_train))?;
    let coef = if lambda == 0.0 {
        solve_ls(&train, t)?.coefficients
    } else {
        let (n, q) = (train.nrows(), train.ncols());
        let s = lambda.sqrt();
        let mut aug = Matrix::zeros(n + q - 1, q);
        for j in 0..q {
            let c = aug.col_mut(j);
            c[..n].copy_from_slice(train.values().col(j));
            if j > 0 {
                c[n + j - 1] = s;
            }
        }
        let mut ty = t.to_vec();
        ty.resize(n + q - 1, 0.0);
        solve_ls(&DesignMatrix::new(aug, train.labels().to_vec())?, &ty)?.coefficients
    };
    Ok(basis.design(&cols(z_eval))?.values().matvec(&coef))
}

pub fn fit_predict(
    spec: &LearnerSpec,
    z_train: &Matrix,
    t_train: &[f64],
    z_eval: &Matrix,
) -> Result<Prediction> {
    spec.validate()?;
    let n = t_train.len();
    if z_train.nrows() != n {
        return Err(ApeError::Shape(format!(
            "{} control rows for {n} targets",
            z_train.nrows()
        )));
    }
    if z_eval.ncols() != z_train.ncols() {
        return Err(ApeError::Shape(format!(
            "train has {} controls, eval has {}",
            z_train.ncols(),
            z_eval.ncols()
        )));
    }
    if n == 0 {
        return Err(ApeError::Size("empty training set".into()));
    }
    let mean = t_train.iter().sum::<f64>() / n as f64;
    if t_train.iter().all(|&v| v == t_train[0]) {
        return Ok(Prediction {
            values: vec![mean; z_eval.nrows()],
            warning: Some(format!(
                "constant training target ({mean}); using a constant predictor"
            )),
        });
    }
    let values = match spec.kind {
        LearnerKind::PolyRidge { degree, lambda } => {
            ridge_fit_predict(z_train, t_train, z_eval, degree, lambda)?
        }
        LearnerKind::SplineAdditive { degree, knots } => {
            let basis = AdditiveSplineBasis::fit(z_train, degree, knots)?;
            let coef = solve_ls(&basis.design(z_train)?, t_train)?.coefficients;
            basis.design(z_eval)?.values().matvec(&coef)
        }
        LearnerKind::Gbt {
            trees,
            depth,
            learning_rate,
            min_leaf,
        } => {
            if n < 10 {
                return Err(ApeError::Size(format!("boosting needs n >= 10, got {n}")));
            }
            GbtModel::fit(z_train, t_train, trees, depth, learning_rate, min_leaf).predict(z_eval)
        }
        LearnerKind::Mlp {
            layers,
            width,
            epochs,
            learning_rate,
            batch,
        } => {
            if n < 10 {
                return Err(ApeError::Size(format!("network needs n >= 10, got {n}")));
            }
            let cfg = MlpConfig {
                layers,
                width,
                epochs,
                learning_rate,
                batch,
            };
            MlpRegressor::fit(z_train, t_train, &cfg, spec.seed).predict(z_eval)
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ApeError::Degenerate(format!(
            "{spec} produced non-finite predictions"
        )));
    }
    Ok(Prediction {
        values,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Treatment,
    Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitQuality {
    pub rmse: f64,
    /// `max_k |corr(residual, Z_k)|`.
    pub corr_resid_z_max: f64,
    pub corr_resid_z: Vec<f64>,
    pub degenerate_folds: usize,
}

#[derive(Debug, Clone)]
pub struct CrossFitResult {
    pub predictions: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fold_assignment: FoldAssignment,
    pub fit_quality: FitQuality,
    pub warnings: Vec<String>,
    pub in_sample: bool,
}

/// Fold driver. `fit(train_idx, eval_idx, fold)` must return predictions for
/// `eval_idx` in order. Folds may run concurrently; results are assembled by
/// index, so the output equals sequential execution.
pub fn crossfit_with<F>(fa: &FoldAssignment, fit: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize], &[usize], usize) -> Result<Vec<f64>> + Sync,
{
    let n = fa.fold_of.len();
    let parts: Vec<(Vec<usize>, Vec<f64>)> = (0..fa.folds)
        .into_par_iter()
        .map(|f| {
            let eval = fa.eval_indices(f);
            let train = fa.train_indices(f);
            let p = fit(&train, &eval, f)?;
            if p.len() != eval.len() {
                return Err(ApeError::Shape(format!(
                    "fold {f}: {} predictions for {} rows",
                    p.len(),
                    eval.len()
                )));
            }
            Ok((eval, p))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![f64::NAN; n];
    for (eval, p) in parts {
        for (i, v) in eval.into_iter().zip(p) {
            out[i] = v;
        }
    }
    Ok(out)
}

fn target_of(data: &Dataset, target: Target) -> &[f64] {
    match target {
        Target::Treatment => data.x(),
        Target::Outcome => data.y(),
    }
}

fn quality(residuals: &[f64], z: &Matrix, degenerate_folds: usize) -> FitQuality {
    let n = residuals.len() as f64;
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let corr: Vec<f64> = z.columns().map(|c| correlation(residuals, c)).collect();
    let corr_resid_z_max = corr.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    FitQuality {
        rmse,
        corr_resid_z_max,
        corr_resid_z: corr,
        degenerate_folds,
    }
}

/// Cross-fit on a given partition. Fold `f` trains with seed
/// `derive_seed(seed, FOLD_FIT, f)`.
pub fn crossfit_on_folds(
    data: &Dataset,
    target: Target,
    spec: &LearnerSpec,
    fa: &FoldAssignment,
    seed: u64,
) -> Result<CrossFitResult> {
    if data.k() == 0 {
        return Err(ApeError::Precondition(
            "cross-fitting needs at least one control".into(),
        ));
    }
    if fa.fold_of.len() != data.n() {
        return Err(ApeError::Shape(
            "fold assignment does not match the data".into(),
        ));
    }
    let t = target_of(data, target);
    let z = data.z();
    let warnings = std::sync::Mutex::new(Vec::new());
    let predictions = crossfit_with(fa, |train, eval, f| {
        let zt = z.select_rows(train);
        let tt: Vec<f64> = train.iter().map(|&i| t[i]).collect();
        let ze = z.select_rows(eval);
        let p = fit_predict(
            &spec.with_seed(derive_seed(seed, tags::FOLD_FIT, f as u64)),
            &zt,
            &tt,
            &ze,
        )?;
        if let Some(w) = p.warning {
            warnings.lock().unwrap().push((f, w));
        }
        Ok(p.values)
    })?;
    let mut w = warnings.into_inner().unwrap();
    w.sort();
    let degenerate = w.len();
    let residuals: Vec<f64> = t.iter().zip(&predictions).map(|(a, b)| a - b).collect();
    Ok(CrossFitResult {
        fit_quality: quality(&residuals, z, degenerate),
        predictions,
        residuals,
        fold_assignment: fa.clone(),
        warnings: w
            .into_iter()
            .map(|(f, m)| format!("fold {f}: {m}"))
            .collect(),
        in_sample: false,
    })
}

/// Out-of-fold residuals of `target` on the controls. The partition is
/// `make_folds(n, folds, derive_seed(seed, FOLDS, 0))`.
pub fn crossfit_residualise(
    data: &Dataset,
    target: Target,
    spec: &LearnerSpec,
    folds: usize,
    seed: u64,
) -> Result<CrossFitResult> {
    if data.k() == 0 {
        return Err(ApeError::Precondition(
            "cross-fitting needs at least one control".into(),
        ));
    }
    let fa = make_folds(data.n(), folds, derive_seed(seed, tags::FOLDS, 0))?;
    crossfit_on_folds(data, target, spec, &fa, seed)
}

/// Residuals from one learner trained and evaluated on the full sample.
pub fn in_sample_residualise(
    data: &Dataset,
    target: Target,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<CrossFitResult> {
    if data.k() == 0 {
        return Err(ApeError::Precondition(
            "residualising needs at least one control".into(),
        ));
    }
    let t = target_of(data, target);
    let p = fit_predict(
        &spec.with_seed(derive_seed(seed, tags::FOLD_FIT, 0)),
        data.z(),
        t,
        data.z(),
    )?;
    let residuals: Vec<f64> = t.iter().zip(&p.values).map(|(a, b)| a - b).collect();
    let degenerate = usize::from(p.warning.is_some());
    Ok(CrossFitResult {
        fit_quality: quality(&residuals, data.z(), degenerate),
        predictions: p.values,
        residuals,
        fold_assignment: FoldAssignment {
            fold_of: vec![0; data.n()],
            folds: 1,
            seed,
        },
        warnings: p.warning.into_iter().collect(),
        in_sample: true,
    })
}

/// Out-of-fold mean squared error of each candidate on one shared partition.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub best: LearnerSpec,
    pub scores: Vec<(LearnerSpec, f64)>,
}

/// Pick the candidate with the lowest cross-validated prediction error for
/// `target`; ties go to the earlier candidate. Candidates that fail to fit are
/// scored `inf`.
pub fn select_by_cv(
    data: &Dataset,
    target: Target,
    candidates: &[LearnerSpec],
    folds: usize,
    seed: u64,
) -> Result<CvSelection> {
    if candidates.is_empty() {
        return Err(ApeError::Parameter("no candidate learners".into()));
    }
    let fa = make_folds(data.n(), folds, derive_seed(seed, tags::FOLDS, 0))?;
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mse = match crossfit_on_folds(data, target, c, &fa, seed) {
            Ok(cf) => cf.fit_quality.rmse * cf.fit_quality.rmse,
            Err(_) => f64::INFINITY,
        };
        scores.push((c.clone(), mse));
    }
    let best = scores
        .iter()
        .fold(None::<&(LearnerSpec, f64)>, |b, s| match b {
            Some(b) if b.1 <= s.1 => Some(b),
            _ => Some(s),
        })
        .map(|s| s.0.clone())
        .unwrap();
    if scores.iter().all(|s| !s.1.is_finite()) {
        return Err(ApeError::Degenerate(
            "every candidate learner failed".into(),
        ));
    }
    Ok(CvSelection { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_poly_recovers_exactly() {
        let zc: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let t: Vec<f64> = zc.iter().map(|v| 2.0 * v).collect();
        let z = Matrix::from_columns(30, &[zc]).unwrap();
        let ze = Matrix::from_columns(3, &[vec![-1.0, 0.5, 7.0]]).unwrap();
        let p = fit_predict(&LearnerSpec::poly(1, 0.0), &z, &t, &ze).unwrap();
        for (a, b) in p.values.iter().zip([-2.0, 1.0, 14.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_target_warns() {
        let z = Matrix::from_columns(20, &[(0..20).map(f64::from).collect()]).unwrap();
        let p = fit_predict(&LearnerSpec::gbt(10, 2, 0.1, 2), &z, &[4.0; 20], &z).unwrap();
        assert!(p.warning.is_some());
        assert!(p.values.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn shape_mismatch() {
        let z = Matrix::zeros(5, 1);
        let ze = Matrix::zeros(5, 2);
        assert!(matches!(
            fit_predict(
                &LearnerSpec::poly(1, 0.0),
                &z,
                &[1.0, 2.0, 3.0, 4.0, 5.0],
                &ze
            ),
            Err(ApeError::Shape(_))
        ));
    }

    #[test]
    fn ridge_shrinks_towards_intercept() {
        let zc: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let t: Vec<f64> = zc.iter().map(|v| 1.0 + 3.0 * v).collect();
        let z = Matrix::from_columns(50, &[zc]).unwrap();
        let ze = Matrix::from_columns(2, &[vec![0.0, 4.0]]).unwrap();
        let p0 = fit_predict(&LearnerSpec::poly(1, 0.0), &z, &t, &ze)
            .unwrap()
            .values;
        let p1 = fit_predict(&LearnerSpec::poly(1, 1e4), &z, &t, &ze)
            .unwrap()
            .values;
        assert!((p1[1] - p1[0]).abs() < (p0[1] - p0[0]).abs());
    }
}
