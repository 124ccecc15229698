//! APE estimators: residualised-treatment OLS (known or estimated nu), the
//! OLS/FWL route with a known treatment form, DML partialling-out, and the
//! simple, interacted and partially linear spline baselines, plus the
//! just-identified IV ratio.

use crate::datamodel::{make_folds, ApeEstimate, Dataset, Method};
use crate::error::{ApeError, Result};
use crate::nuisance::{
    crossfit_on_folds, crossfit_residualise, in_sample_residualise, CrossFitResult, LearnerSpec,
    Target,
};
use crate::numkit::{
    correlation, dot, mean, polynomial_design, polynomial_terms, sandwich_variance, solve_ls,
    AdditiveSplineBasis, DesignMatrix, Matrix,
};
use crate::rng::{derive_seed, tags};
use std::fmt;
use std::str::FromStr;

fn check_pair(nu: &[f64], y: &[f64]) -> Result<()> {
    if nu.len() != y.len() {
        return Err(ApeError::Shape(format!(
            "nu has {} values, y has {}",
            nu.len(),
            y.len()
        )));
    }
    if nu.is_empty() {
        return Err(ApeError::Size("empty input".into()));
    }
    Ok(())
}

/// `sum(nu y) / sum(nu^2)` with the HC0 SE of the no-intercept regression of
/// `y` on `nu`.
pub fn rols(nu: &[f64], y: &[f64]) -> Result<ApeEstimate> {
    rols_with(nu, y, false, Method::RolsKnownNu)
}

/// `center_nu` demeans `nu` first, turning the raw-moment ratio into
/// `Cov(nu, y) / Var(nu)`.
pub fn rols_with(nu: &[f64], y: &[f64], center_nu: bool, method: Method) -> Result<ApeEstimate> {
    check_pair(nu, y)?;
    let centred;
    let nu = if center_nu {
        let m = mean(nu);
        centred = nu.iter().map(|v| v - m).collect::<Vec<_>>();
        &centred[..]
    } else {
        nu
    };
    let s2 = dot(nu, nu);
    if s2 == 0.0 || !s2.is_finite() {
        return Err(ApeError::Degenerate(
            "residualised treatment has no variation".into(),
        ));
    }
    let beta = dot(nu, y) / s2;
    let meat: f64 = nu
        .iter()
        .zip(y)
        .map(|(v, yi)| {
            let u = yi - beta * v;
            v * v * u * u
        })
        .sum();
    ApeEstimate::new(beta, Some(meat.sqrt() / s2), method, nu.len())
}

/// Residualised-treatment OLS on the dataset's known error column.
pub fn rols_known(data: &Dataset) -> Result<ApeEstimate> {
    let nu = data
        .nu_known()
        .ok_or_else(|| ApeError::Precondition("dataset has no known-error column".into()))?;
    rols(nu, data.y())
}

/// How nuisance residuals are produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitOptions {
    pub folds: usize,
    pub seed: u64,
    /// Train and predict on the full sample instead of cross-fitting.
    pub in_sample: bool,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        CrossFitOptions {
            folds: 5,
            seed: 0,
            in_sample: false,
        }
    }
}

fn add_fit_diagnostics(mut e: ApeEstimate, prefix: &str, cf: &CrossFitResult) -> ApeEstimate {
    for (k, c) in cf.fit_quality.corr_resid_z.iter().enumerate() {
        e.diagnostics
            .insert(format!("corr_{prefix}_z{}", k + 1), *c);
    }
    e.diagnostics.insert(
        format!("corr_{prefix}_z_max"),
        cf.fit_quality.corr_resid_z_max,
    );
    e.diagnostics
        .insert(format!("rmse_{prefix}"), cf.fit_quality.rmse);
    e.diagnostics.insert(
        format!("degenerate_folds_{prefix}"),
        cf.fit_quality.degenerate_folds as f64,
    );
    e
}

/// Two-step estimator: learn `r(Z)`, then R-OLS on `X - r_hat(Z)`. The SE
/// treats the residuals as fixed; bootstrap it for the estimation noise of
/// `r_hat`.
pub fn rols_ml(data: &Dataset, spec: &LearnerSpec, opts: &CrossFitOptions) -> Result<ApeEstimate> {
    let cf = if opts.in_sample {
        in_sample_residualise(data, Target::Treatment, spec, opts.seed)?
    } else {
        crossfit_residualise(data, Target::Treatment, spec, opts.folds, opts.seed)?
    };
    let e = rols_with(&cf.residuals, data.y(), false, Method::RolsMl)?;
    Ok(add_fit_diagnostics(e, "nu", &cf))
}

/// OLS of `Y` on `[X, r(Z), 1]` with the treatment form `r` known; returns the
/// `X` coefficient and its HC0 SE.
pub fn ols_fwl(data: &Dataset, r_values: &[f64]) -> Result<ApeEstimate> {
    let n = data.n();
    if r_values.len() != n {
        return Err(ApeError::Shape(format!(
            "{} treatment-form values for {n} rows",
            r_values.len()
        )));
    }
    let design = DesignMatrix::from_named(
        n,
        vec![
            ("x".into(), data.x().to_vec()),
            ("r(z)".into(), r_values.to_vec()),
            ("1".into(), vec![1.0; n]),
        ],
    )?;
    let fit = solve_ls(&design, data.y())?;
    let v = sandwich_variance(&design, &fit)?;
    ApeEstimate::new(fit.coefficients[0], Some(v.std_error(0)), Method::OlsFwl, n)
}

/// theta = E_n[nu_hat y_res] / E_n[nu_hat^2] with the plug-in influence SE
/// `sqrt(E_n[psi^2] / E_n[nu_hat^2]^2 / n)`.
pub fn dml_from_residuals(nu_hat: &[f64], y_res: &[f64]) -> Result<(f64, f64)> {
    check_pair(nu_hat, y_res)?;
    let n = nu_hat.len() as f64;
    let j = dot(nu_hat, nu_hat) / n;
    if j == 0.0 || !j.is_finite() {
        return Err(ApeError::Degenerate(
            "residualised treatment has no variation".into(),
        ));
    }
    let theta = dot(nu_hat, y_res) / n / j;
    let psi2: f64 = nu_hat
        .iter()
        .zip(y_res)
        .map(|(v, r)| {
            let psi = (r - theta * v) * v;
            psi * psi
        })
        .sum::<f64>()
        / n;
    Ok((theta, (psi2 / (j * j) / n).sqrt()))
}

/// Partialling-out DML. Both learners share one partition drawn from `seed`;
/// the learners themselves train from seeds derived per role and fold.
pub fn dml_plr(
    data: &Dataset,
    spec_r: &LearnerSpec,
    spec_l: &LearnerSpec,
    folds: usize,
    seed: u64,
) -> Result<ApeEstimate> {
    dml_plr_with(
        data,
        spec_r,
        spec_l,
        &CrossFitOptions {
            folds,
            seed,
            in_sample: false,
        },
    )
}

pub fn dml_plr_with(
    data: &Dataset,
    spec_r: &LearnerSpec,
    spec_l: &LearnerSpec,
    opts: &CrossFitOptions,
) -> Result<ApeEstimate> {
    if data.k() == 0 {
        return Err(ApeError::Precondition(
            "DML needs at least one control".into(),
        ));
    }
    let (seed_r, seed_l) = (
        derive_seed(opts.seed, tags::LEARNER_R, 0),
        derive_seed(opts.seed, tags::LEARNER_L, 0),
    );
    let (cf_r, cf_l) = if opts.in_sample {
        (
            in_sample_residualise(data, Target::Treatment, spec_r, seed_r)?,
            in_sample_residualise(data, Target::Outcome, spec_l, seed_l)?,
        )
    } else {
        let fa = make_folds(data.n(), opts.folds, derive_seed(opts.seed, tags::FOLDS, 0))?;
        (
            crossfit_on_folds(data, Target::Treatment, spec_r, &fa, seed_r)?,
            crossfit_on_folds(data, Target::Outcome, spec_l, &fa, seed_l)?,
        )
    };
    let (theta, se) = dml_from_residuals(&cf_r.residuals, &cf_l.residuals)?;
    let mut e = ApeEstimate::new(theta, Some(se), Method::DmlPlr, data.n())?;
    e = add_fit_diagnostics(e, "nu", &cf_r);
    e = add_fit_diagnostics(e, "yres", &cf_l);
    if let Ok(r) = rols(&cf_r.residuals, data.y()) {
        e.diagnostics.insert("rols_same_nu".into(), r.point);
    }
    Ok(e)
}

/// `Y ~ 1 + X + Z_1 + .. + Z_K`; the `X` coefficient with HC0 SE.
pub fn simple_ols(data: &Dataset) -> Result<ApeEstimate> {
    let (n, k) = (data.n(), data.k());
    if n <= k + 2 {
        return Err(ApeError::Size(format!(
            "simple OLS needs n > K + 2, got n={n}, K={k}"
        )));
    }
    let mut cols = vec![
        ("1".to_string(), vec![1.0; n]),
        ("x".to_string(), data.x().to_vec()),
    ];
    for (j, c) in data.z().columns().enumerate() {
        cols.push((format!("z{}", j + 1), c.to_vec()));
    }
    let design = DesignMatrix::from_named(n, cols)?;
    let fit = solve_ls(&design, data.y())?;
    let v = sandwich_variance(&design, &fit)?;
    ApeEstimate::new(
        fit.coefficients[1],
        Some(v.std_error(1)),
        Method::SimpleOls,
        n,
    )
}

/// Everything the interacted fit exposes, for delta-method checks.
#[derive(Debug, Clone)]
pub struct InteractedFit {
    pub estimate: ApeEstimate,
    pub coefficients: Vec<f64>,
    /// `d APE / d beta_j`: sample mean of the monomial's `x` derivative.
    pub gradient: Vec<f64>,
    pub covariance: Matrix,
    pub terms: Vec<Vec<u32>>,
}

/// Sample-average derivative in `x` of each monomial over the rows of `data`.
pub fn monomial_x_derivative_means(data: &Dataset, terms: &[Vec<u32>]) -> Vec<f64> {
    let n = data.n();
    terms
        .iter()
        .map(|e| {
            if e[0] == 0 {
                return 0.0;
            }
            let a = e[0] as i32;
            let mut s = 0.0;
            for i in 0..n {
                let mut v = a as f64 * data.x()[i].powi(a - 1);
                for (k, &b) in e[1..].iter().enumerate() {
                    if b > 0 {
                        v *= data.z().get(i, k).powi(b as i32);
                    }
                }
                s += v;
            }
            s / n as f64
        })
        .collect()
}

pub fn interacted_ols_detail(data: &Dataset, degree: usize) -> Result<InteractedFit> {
    let design = polynomial_design(data.x(), data.z(), degree)?;
    if data.n() <= design.ncols() {
        return Err(ApeError::Size(format!(
            "interacted OLS needs n > {} columns, got n={}",
            design.ncols(),
            data.n()
        )));
    }
    let fit = solve_ls(&design, data.y())?;
    let v = sandwich_variance(&design, &fit)?;
    let terms = polynomial_terms(1 + data.k(), degree);
    let gradient = monomial_x_derivative_means(data, &terms);
    let point = dot(&gradient, &fit.coefficients);
    let vg = v.matrix.matvec(&gradient);
    let var = dot(&gradient, &vg).max(0.0);
    let estimate = ApeEstimate::new(point, Some(var.sqrt()), Method::InteractedOls, data.n())?;
    Ok(InteractedFit {
        estimate,
        coefficients: fit.coefficients,
        gradient,
        covariance: v.matrix,
        terms,
    })
}

/// Full polynomial in `(X, Z)`; APE is the mean fitted derivative in `X`, SE
/// by the delta method on the HC0 coefficient covariance.
pub fn interacted_ols(data: &Dataset, degree: usize) -> Result<ApeEstimate> {
    Ok(interacted_ols_detail(data, degree)?.estimate)
}

/// `Y ~ X + additive B-splines of each control`, a least-squares stand-in for
/// the partially linear GAM.
pub fn pl_spline(data: &Dataset, spline_degree: usize, knots: usize) -> Result<ApeEstimate> {
    let basis = AdditiveSplineBasis::fit(data.z(), spline_degree, knots)?;
    let bd = basis.design(data.z())?;
    let mut m = bd.values().clone();
    m.push_column(data.x())?;
    let mut labels = bd.labels().to_vec();
    labels.push("x".into());
    let design = DesignMatrix::new(m, labels)?;
    if data.n() <= design.ncols() {
        return Err(ApeError::Size(format!(
            "spline fit needs n > {} columns",
            design.ncols()
        )));
    }
    let fit = solve_ls(&design, data.y())?;
    let j = design.ncols() - 1;
    let v = sandwich_variance(&design, &fit)?;
    ApeEstimate::new(
        fit.coefficients[j],
        Some(v.std_error(j)),
        Method::PlSpline,
        data.n(),
    )
}

/// Just-identified IV: `sum(w~ y) / sum(w~ x)` with `w~` the demeaned
/// instrument; SE from the influence function with HC0 meat.
pub fn iv_ape(w: &[f64], x: &[f64], y: &[f64]) -> Result<ApeEstimate> {
    check_pair(w, x)?;
    check_pair(w, y)?;
    let n = w.len();
    let wm = mean(w);
    let wt: Vec<f64> = w.iter().map(|v| v - wm).collect();
    let den = dot(&wt, x);
    let tol = 1e-12 * dot(&wt, &wt).sqrt() * dot(x, x).sqrt();
    if !(den.abs() > tol) {
        return Err(ApeError::Degenerate(
            "instrument has no first-stage covariation with the treatment".into(),
        ));
    }
    let beta = dot(&wt, y) / den;
    let alpha = mean(y) - beta * mean(x);
    let meat: f64 = (0..n)
        .map(|i| {
            let u = y[i] - alpha - beta * x[i];
            wt[i] * wt[i] * u * u
        })
        .sum();
    let e = ApeEstimate::new(beta, Some(meat.sqrt() / den.abs()), Method::IvApe, n)?;
    Ok(e.with_diag("first_stage_corr", correlation(w, x)))
}

/// Dataset-level IV using its instrument column.
pub fn iv_ape_data(data: &Dataset) -> Result<ApeEstimate> {
    let w = data
        .w()
        .ok_or_else(|| ApeError::Precondition("dataset has no instrument column".into()))?;
    iv_ape(w, data.x(), data.y())
}

/// An estimator with all its settings, as used by the Monte Carlo harness,
/// the bootstrap and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    RolsKnown,
    RolsMl {
        learner: LearnerSpec,
        folds: usize,
        in_sample: bool,
    },
    OlsFwl,
    Dml {
        learner_r: LearnerSpec,
        learner_l: LearnerSpec,
        folds: usize,
    },
    SimpleOls,
    InteractedOls {
        degree: usize,
    },
    PlSpline {
        degree: usize,
        knots: usize,
    },
    Iv,
}

impl EstimatorSpec {
    /// Run on a dataset. `seed` feeds folds and learners; `r_values`
    /// supplies the known treatment form for `ols_fwl`.
    pub fn run_with(
        &self,
        data: &Dataset,
        seed: u64,
        r_values: Option<&[f64]>,
    ) -> Result<ApeEstimate> {
        match self {
            EstimatorSpec::RolsKnown => rols_known(data),
            EstimatorSpec::RolsMl {
                learner,
                folds,
                in_sample,
            } => rols_ml(
                data,
                learner,
                &CrossFitOptions {
                    folds: *folds,
                    seed,
                    in_sample: *in_sample,
                },
            ),
            EstimatorSpec::OlsFwl => {
                let r = r_values.ok_or_else(|| {
                    ApeError::Precondition("ols_fwl needs the known treatment form r(Z)".into())
                })?;
                ols_fwl(data, r)
            }
            EstimatorSpec::Dml {
                learner_r,
                learner_l,
                folds,
            } => dml_plr(data, learner_r, learner_l, *folds, seed),
            EstimatorSpec::SimpleOls => simple_ols(data),
            EstimatorSpec::InteractedOls { degree } => interacted_ols(data, *degree),
            EstimatorSpec::PlSpline { degree, knots } => pl_spline(data, *degree, *knots),
            EstimatorSpec::Iv => iv_ape_data(data),
        }
    }

    pub fn run(&self, data: &Dataset, seed: u64) -> Result<ApeEstimate> {
        self.run_with(data, seed, None)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            EstimatorSpec::RolsMl { .. } | EstimatorSpec::Dml { .. }
        )
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::RolsKnown => write!(f, "rols_known"),
            EstimatorSpec::RolsMl {
                learner,
                folds,
                in_sample,
            } => {
                write!(f, "rols_ml(learner={learner},folds={folds}")?;
                if *in_sample {
                    write!(f, ",in_sample=true")?;
                }
                write!(f, ")")
            }
            EstimatorSpec::OlsFwl => write!(f, "ols_fwl"),
            EstimatorSpec::Dml {
                learner_r,
                learner_l,
                folds,
            } => write!(f, "dml(r={learner_r},l={learner_l},folds={folds})"),
            EstimatorSpec::SimpleOls => write!(f, "simple_ols"),
            EstimatorSpec::InteractedOls { degree } => write!(f, "interacted_ols(degree={degree})"),
            EstimatorSpec::PlSpline { degree, knots } => {
                write!(f, "pl_spline(degree={degree},knots={knots})")
            }
            EstimatorSpec::Iv => write!(f, "iv"),
        }
    }
}

/// Split on commas that are not nested inside parentheses.
pub fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

impl FromStr for EstimatorSpec {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| ApeError::Parameter(format!("cannot parse estimator `{s}`: {why}"));
        let s = s.trim();
        let (name, inner) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            Some(_) => return Err(bad("unbalanced parentheses")),
            None => (s, ""),
        };
        let mut kv = Vec::new();
        for a in split_top_level(inner) {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| bad("arguments must be key=value"))?;
            kv.push((k.trim(), v.trim()));
        }
        let get = |key: &str| kv.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        for (k, _) in &kv {
            let allowed: &[&str] = match name {
                "rols_ml" => &["learner", "folds", "in_sample"],
                "dml" => &["r", "l", "folds"],
                "interacted_ols" => &["degree"],
                "pl_spline" => &["degree", "knots"],
                _ => &[],
            };
            if !allowed.contains(k) {
                return Err(bad(&format!("unknown key `{k}`")));
            }
        }
        let int = |key: &str, default: usize| -> Result<usize> {
            get(key).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| bad(&format!("`{key}` needs an integer")))
            })
        };
        let learner = |key: &str| -> Result<LearnerSpec> {
            get(key).map_or_else(|| Ok(default_gbt()), str::parse)
        };
        let spec = match name.trim() {
            "rols_known" | "rols" => EstimatorSpec::RolsKnown,
            "rols_ml" => EstimatorSpec::RolsMl {
                learner: learner("learner")?,
                folds: int("folds", 5)?,
                in_sample: get("in_sample").map_or(Ok(false), |v| {
                    v.parse().map_err(|_| bad("in_sample is true/false"))
                })?,
            },
            "ols_fwl" => EstimatorSpec::OlsFwl,
            "dml" => EstimatorSpec::Dml {
                learner_r: learner("r")?,
                learner_l: learner("l")?,
                folds: int("folds", 5)?,
            },
            "simple_ols" => EstimatorSpec::SimpleOls,
            "interacted_ols" => EstimatorSpec::InteractedOls {
                degree: int("degree", 3)?,
            },
            "pl_spline" => EstimatorSpec::PlSpline {
                degree: int("degree", 3)?,
                knots: int("knots", 5)?,
            },
            "iv" | "iv_ape" => EstimatorSpec::Iv,
            other => return Err(bad(&format!("unknown estimator `{other}`"))),
        };
        match &spec {
            EstimatorSpec::RolsMl { folds, .. } | EstimatorSpec::Dml { folds, .. }
                if *folds < 2 =>
            {
                Err(bad("folds must be >= 2"))
            }
            EstimatorSpec::InteractedOls { degree: 0 } => Err(bad("degree must be >= 1")),
            _ => Ok(spec),
        }
    }
}

fn default_gbt() -> LearnerSpec {
    LearnerSpec::default_for("gbt").expect("gbt is a known learner")
}
