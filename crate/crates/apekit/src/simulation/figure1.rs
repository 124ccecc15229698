use crate::datamodel::make_folds;
use crate::error::{ApeError, Result};
use crate::estimators::{dml_from_residuals, rols};
use crate::nuisance::{crossfit_on_folds, LearnerKind, LearnerSpec, Target};
use crate::numkit::{mean, sandwich_variance, solve_ls, DesignMatrix};
use crate::rng::{derive_seed, rng_from, tags};
use rand::Rng as _;
use rayon::prelude::*;
use std::fmt::Write as _;

use super::dgp::{draw, true_ape, DgpSpec};

/// Settings of the imperfect-training experiment. Both nuisance functions are
/// fit by the same MLP architecture; only the epoch count varies.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Options {
    pub reps: usize,
    pub n: usize,
    pub epochs_lo: usize,
    pub epochs_hi: usize,
    pub folds: usize,
    pub layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub oracle_n: usize,
    pub seed: u64,
}

impl Figure1Options {
    pub fn new(reps: usize, n: usize, epochs: (usize, usize), seed: u64) -> Self {
        Figure1Options {
            reps,
            n,
            epochs_lo: epochs.0,
            epochs_hi: epochs.1,
            folds: 4,
            layers: 3,
            width: 64,
            learning_rate: 0.001,
            batch: 200,
            oracle_n: 1_000_000,
            seed,
        }
    }

    fn learner(&self, epochs: usize) -> LearnerSpec {
        LearnerSpec::new(LearnerKind::Mlp {
            layers: self.layers,
            width: self.width,
            epochs,
            learning_rate: self.learning_rate,
            batch: self.batch,
        })
    }

    pub fn describe(&self) -> String {
        format!(
            "figure1 reps={} n={} epochs={}..{} folds={} mlp(layers={},width={},lr={},batch={}) oracle_n={} seed={}",
            self.reps, self.n, self.epochs_lo, self.epochs_hi, self.folds, self.layers, self.width, self.learning_rate, self.batch, self.oracle_n, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Record {
    pub rep: usize,
    pub epochs: usize,
    /// Signed `corr(nu_hat, Z)`.
    pub corr_nu_z: f64,
    pub rols_estimate: f64,
    pub dml_estimate: f64,
    pub dml_se: f64,
    /// `E_n[(r - r_hat) Y] / E_n[nu^2]`, the first-order R-OLS bias implied
    /// by the nuisance error, using the true `nu`.
    pub rols_bias_formula: f64,
}

/// Least-squares line `estimate ~ 1 + corr` with an HC0 slope SE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub intercept: f64,
    pub slope: f64,
    pub se: f64,
    pub z: f64,
}

pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let n = x.len();
    let d = DesignMatrix::from_named(
        n,
        vec![("1".into(), vec![1.0; n]), ("corr".into(), x.to_vec())],
    )?;
    let fit = solve_ls(&d, y)?;
    let v = sandwich_variance(&d, &fit)?;
    let se = v.std_error(1);
    Ok(SlopeFit {
        intercept: fit.coefficients[0],
        slope: fit.coefficients[1],
        se,
        z: fit.coefficients[1] / se,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Result {
    pub records: Vec<Figure1Record>,
    pub skipped: usize,
    pub true_ape: f64,
    pub rols_slope: SlopeFit,
    pub dml_slope: SlopeFit,
    /// Slope of the bias formula on `corr`, the direction R-OLS should take.
    pub bias_formula_slope: SlopeFit,
    pub options: Figure1Options,
}

impl Figure1Result {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# {}\n# true_ape={} skipped={}\n",
            self.options.describe(),
            self.true_ape,
            self.skipped
        );
        s.push_str("rep,epochs,corr_nu_z,rols_estimate,dml_estimate,dml_se,rols_bias_formula\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.rep,
                r.epochs,
                r.corr_nu_z,
                r.rols_estimate,
                r.dml_estimate,
                r.dml_se,
                r.rols_bias_formula
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.options.describe());
        let _ = writeln!(
            s,
            "true APE {:.4}, {} replications ({} skipped)",
            self.true_ape,
            self.records.len(),
            self.skipped
        );
        let rm = mean(
            &self
                .records
                .iter()
                .map(|r| r.rols_estimate)
                .collect::<Vec<_>>(),
        );
        let dm = mean(
            &self
                .records
                .iter()
                .map(|r| r.dml_estimate)
                .collect::<Vec<_>>(),
        );
        let _ = writeln!(
            s,
            "{:10} {:>10} {:>10} {:>10} {:>8}",
            "estimator", "mean", "slope", "hc0 se", "z"
        );
        for (nm, m, f) in [
            ("R-OLS", rm, &self.rols_slope),
            ("DML", dm, &self.dml_slope),
        ] {
            let _ = writeln!(
                s,
                "{nm:10} {m:>10.4} {:>10.4} {:>10.4} {:>8.2}",
                f.slope, f.se, f.z
            );
        }
        s
    }
}

/// Per replication: draw the design, pick an epoch count uniformly in
/// `[epochs_lo, epochs_hi]`, cross-fit `r` and `l` on one partition, and
/// record R-OLS on the treatment residuals next to DML on both.
pub fn figure1_experiment_with(opts: &Figure1Options) -> Result<Figure1Result> {
    if opts.reps < 20 {
        return Err(ApeError::Parameter(format!(
            "figure1 needs reps >= 20, got {}",
            opts.reps
        )));
    }
    if opts.n < 200 {
        return Err(ApeError::Parameter(format!(
            "figure1 needs n >= 200, got {}",
            opts.n
        )));
    }
    if opts.epochs_lo == 0 || opts.epochs_lo > opts.epochs_hi {
        return Err(ApeError::Parameter(format!(
            "bad epoch range {}..{}",
            opts.epochs_lo, opts.epochs_hi
        )));
    }
    let spec = DgpSpec::figure1(opts.n);
    let truth = true_ape(&spec, opts.oracle_n, opts.seed)?.value;
    let out: Vec<Option<Figure1Record>> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = opts.seed.wrapping_add(rep as u64);
            let epochs = rng_from(derive_seed(opts.seed, tags::EPOCHS, rep as u64))
                .random_range(opts.epochs_lo..=opts.epochs_hi);
            one_replication(&spec, opts, rep, seed, epochs).ok()
        })
        .collect();
    let skipped = out.iter().filter(|o| o.is_none()).count();
    let records: Vec<Figure1Record> = out.into_iter().flatten().collect();
    if records.len() < 3 {
        return Err(ApeError::Degenerate(format!(
            "only {} replications succeeded",
            records.len()
        )));
    }
    let corr: Vec<f64> = records.iter().map(|r| r.corr_nu_z).collect();
    let col = |f: fn(&Figure1Record) -> f64| records.iter().map(f).collect::<Vec<_>>();
    Ok(Figure1Result {
        rols_slope: slope_fit(&corr, &col(|r| r.rols_estimate))?,
        dml_slope: slope_fit(&corr, &col(|r| r.dml_estimate))?,
        bias_formula_slope: slope_fit(&corr, &col(|r| r.rols_bias_formula))?,
        records,
        skipped,
        true_ape: truth,
        options: opts.clone(),
    })
}

pub fn figure1_experiment(
    reps: usize,
    n: usize,
    epochs: (usize, usize),
    seed: u64,
) -> Result<Figure1Result> {
    figure1_experiment_with(&Figure1Options::new(reps, n, epochs, seed))
}

fn one_replication(
    spec: &DgpSpec,
    opts: &Figure1Options,
    rep: usize,
    seed: u64,
    epochs: usize,
) -> Result<Figure1Record> {
    let d = draw(spec, seed)?;
    let data = &d.dataset;
    let learner = opts.learner(epochs);
    let fa = make_folds(data.n(), opts.folds, derive_seed(seed, tags::FOLDS, 0))?;
    let cf_r = crossfit_on_folds(
        data,
        Target::Treatment,
        &learner,
        &fa,
        derive_seed(seed, tags::LEARNER_R, 0),
    )?;
    let cf_l = crossfit_on_folds(
        data,
        Target::Outcome,
        &learner,
        &fa,
        derive_seed(seed, tags::LEARNER_L, 0),
    )?;
    let (dml, dml_se) = dml_from_residuals(&cf_r.residuals, &cf_l.residuals)?;
    let r = rols(&cf_r.residuals, data.y())?.point;
    let nu = &d.nu_true;
    let nn = nu.len() as f64;
    let e2 = nu.iter().map(|v| v * v).sum::<f64>() / nn;
    let bias = cf_r
        .residuals
        .iter()
        .zip(nu)
        .zip(data.y())
        .map(|((h, v), y)| (h - v) * y)
        .sum::<f64>()
        / nn
        / e2;
    Ok(Figure1Record {
        rep,
        epochs,
        corr_nu_z: cf_r.fit_quality.corr_resid_z[0],
        rols_estimate: r,
        dml_estimate: dml,
        dml_se,
        rols_bias_formula: bias,
    })
}
