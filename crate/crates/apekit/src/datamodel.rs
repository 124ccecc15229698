//! Samples, column roles, fold assignments and the estimate record shared by
//! every estimator.

use crate::error::{ApeError, Result};
use crate::numkit::Matrix;
use crate::rng::rng_from;
use rand::Rng as _;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Outcome, treatment, controls and the optional instrument / known error.
/// Immutable once built; every column has the same length `n >= 2` and only
/// finite values.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    z: Matrix,
    w: Option<Vec<f64>>,
    nu_known: Option<Vec<f64>>,
    names: ColumnNames,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnNames {
    pub outcome: String,
    pub treatment: String,
    pub controls: Vec<String>,
    pub instrument: Option<String>,
    pub nu_known: Option<String>,
}

impl ColumnNames {
    pub fn default_for(k: usize, has_w: bool, has_nu: bool) -> Self {
        ColumnNames {
            outcome: "Y".into(),
            treatment: "X".into(),
            controls: (1..=k).map(|j| format!("Z{j}")).collect(),
            instrument: has_w.then(|| "W".into()),
            nu_known: has_nu.then(|| "NU".into()),
        }
    }
}

fn check_finite(col: &[f64], name: &str) -> Result<()> {
    match col.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ApeError::Parse {
            row: i + 1,
            column: name.to_string(),
            msg: format!("non-finite value {}", col[i]),
        }),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        x: Vec<f64>,
        z: Matrix,
        w: Option<Vec<f64>>,
        nu_known: Option<Vec<f64>>,
    ) -> Result<Self> {
        let names = ColumnNames::default_for(z.ncols(), w.is_some(), nu_known.is_some());
        Self::with_names(y, x, z, w, nu_known, names)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: Vec<f64>,
        z: Matrix,
        w: Option<Vec<f64>>,
        nu_known: Option<Vec<f64>>,
        names: ColumnNames,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(ApeError::Size(format!("need at least 2 rows, got {n}")));
        }
        let lens = [
            (names.treatment.as_str(), x.len()),
            ("controls", z.nrows()),
            ("instrument", w.as_ref().map_or(n, |c| c.len())),
            ("known error", nu_known.as_ref().map_or(n, |c| c.len())),
        ];
        for (what, len) in lens {
            if len != n {
                return Err(ApeError::Shape(format!(
                    "{what} has {len} rows, outcome has {n}"
                )));
            }
        }
        if names.controls.len() != z.ncols() {
            return Err(ApeError::Shape(
                "control names do not match control columns".into(),
            ));
        }
        check_finite(&y, &names.outcome)?;
        check_finite(&x, &names.treatment)?;
        for (k, c) in z.columns().enumerate() {
            check_finite(c, &names.controls[k])?;
        }
        if let Some(w) = &w {
            check_finite(w, names.instrument.as_deref().unwrap_or("W"))?;
        }
        if let Some(nu) = &nu_known {
            check_finite(nu, names.nu_known.as_deref().unwrap_or("NU"))?;
        }
        Ok(Dataset {
            y,
            x,
            z,
            w,
            nu_known,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of controls.
    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn w(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    pub fn nu_known(&self) -> Option<&[f64]> {
        self.nu_known.as_deref()
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    /// Rows gathered by index; repeats allowed (bootstrap resamples).
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let pick = |c: &[f64]| idx.iter().map(|&i| c[i]).collect::<Vec<_>>();
        Dataset {
            y: pick(&self.y),
            x: pick(&self.x),
            z: self.z.select_rows(idx),
            w: self.w.as_deref().map(pick),
            nu_known: self.nu_known.as_deref().map(pick),
            names: self.names.clone(),
        }
    }

    /// Same rows with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::with_names(
            y,
            self.x.clone(),
            self.z.clone(),
            self.w.clone(),
            self.nu_known.clone(),
            self.names.clone(),
        )
    }
}

/// Which header column plays which role.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnRoles {
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    pub controls: Vec<String>,
    pub instrument: Option<String>,
    pub nu_known: Option<String>,
}

pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
    let outcome = roles
        .outcome
        .clone()
        .ok_or_else(|| ApeError::Role("no column mapped to the outcome".into()))?;
    let treatment = roles
        .treatment
        .clone()
        .ok_or_else(|| ApeError::Role("no column mapped to the treatment".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| csv_err(e, path.as_ref()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e, path.as_ref()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ApeError::Role(format!("column `{name}` not found in header")))
    };
    let mut wanted: Vec<String> = vec![outcome.clone(), treatment.clone()];
    wanted.extend(roles.controls.iter().cloned());
    wanted.extend(roles.instrument.iter().cloned());
    wanted.extend(roles.nu_known.iter().cloned());
    for (i, a) in wanted.iter().enumerate() {
        if wanted[..i].contains(a) {
            return Err(ApeError::Role(format!(
                "column `{a}` mapped to more than one role"
            )));
        }
    }
    let idx: Vec<usize> = wanted.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e, path.as_ref()))?;
        for (slot, (&ci, name)) in idx.iter().zip(&wanted).enumerate() {
            let cell = rec.get(ci).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| ApeError::Parse {
                row: r + 1,
                column: name.clone(),
                msg: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(ApeError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    msg: format!("non-finite value `{cell}`"),
                });
            }
            cols[slot].push(v);
        }
    }
    let n = cols[0].len();
    if n < 2 {
        return Err(ApeError::Size(format!(
            "need at least 2 data rows, found {n}"
        )));
    }
    let mut it = cols.into_iter();
    let y = it.next().unwrap();
    let x = it.next().unwrap();
    let zc: Vec<Vec<f64>> = it.by_ref().take(roles.controls.len()).collect();
    let w = roles.instrument.as_ref().map(|_| it.next().unwrap());
    let nu = roles.nu_known.as_ref().map(|_| it.next().unwrap());
    let names = ColumnNames {
        outcome,
        treatment,
        controls: roles.controls.clone(),
        instrument: roles.instrument.clone(),
        nu_known: roles.nu_known.clone(),
    };
    Dataset::with_names(y, x, Matrix::from_columns(n, &zc)?, w, nu, names)
}

fn csv_err(e: csv::Error, path: &Path) -> ApeError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => ApeError::Io(std::io::Error::new(
                io.kind(),
                format!("{}: {io}", path.display()),
            )),
            _ => unreachable!(),
        }
    } else {
        let row = e.position().map_or(0, |p| p.line() as usize);
        ApeError::Parse {
            row,
            column: String::new(),
            msg: e.to_string(),
        }
    }
}

/// Write every column under its role name. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let names = data.names();
    let mut header = vec![names.outcome.clone(), names.treatment.clone()];
    header.extend(names.controls.iter().cloned());
    let mut cols: Vec<&[f64]> = vec![data.y(), data.x()];
    cols.extend(data.z().columns());
    if let Some(w) = data.w() {
        header.push(names.instrument.clone().unwrap_or_else(|| "W".into()));
        cols.push(w);
    }
    if let Some(nu) = data.nu_known() {
        header.push(names.nu_known.clone().unwrap_or_else(|| "NU".into()));
        cols.push(nu);
    }
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(|e| csv_err(e, path.as_ref()))?;
    wtr.write_record(&header)
        .map_err(|e| csv_err(e, path.as_ref()))?;
    for i in 0..data.n() {
        let rec: Vec<String> = cols.iter().map(|c| format!("{}", c[i])).collect();
        wtr.write_record(&rec)
            .map_err(|e| csv_err(e, path.as_ref()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pseudo-random partition of `0..n` into `folds` groups of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn eval_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == f)
            .collect()
    }

    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != f)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Fisher-Yates shuffle of the indices, then round-robin fold labels along the
/// shuffled order, so sizes differ by at most one.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 || folds > n {
        return Err(ApeError::Parameter(format!(
            "folds must lie in [2, n={n}], got {folds}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    Ok(FoldAssignment {
        fold_of,
        folds,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    RolsKnownNu,
    RolsMl,
    OlsFwl,
    DmlPlr,
    SimpleOls,
    InteractedOls,
    PlSpline,
    IvApe,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::RolsKnownNu => "ROLS_KNOWN_NU",
            Method::RolsMl => "ROLS_ML",
            Method::OlsFwl => "OLS_FWL",
            Method::DmlPlr => "DML_PLR",
            Method::SimpleOls => "SIMPLE_OLS",
            Method::InteractedOls => "INTERACTED_OLS",
            Method::PlSpline => "PL_SPLINE",
            Method::IvApe => "IV_APE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeEstimate {
    pub point: f64,
    pub std_error: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub method: Method,
    pub n_used: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Standard normal quantile for a two-sided `1 - alpha` interval.
pub fn normal_critical(alpha: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

impl ApeEstimate {
    /// Point estimate with an optional SE; a 95% normal interval is attached
    /// whenever the SE exists.
    pub fn new(point: f64, std_error: Option<f64>, method: Method, n_used: usize) -> Result<Self> {
        if !point.is_finite() {
            return Err(ApeError::Degenerate(format!(
                "{method} produced a non-finite estimate"
            )));
        }
        if let Some(se) = std_error {
            if !se.is_finite() || se < 0.0 {
                return Err(ApeError::Degenerate(format!(
                    "{method} produced an invalid standard error {se}"
                )));
            }
        }
        let mut e = ApeEstimate {
            point,
            std_error,
            ci: None,
            method,
            n_used,
            diagnostics: BTreeMap::new(),
        };
        e.set_normal_ci(0.05);
        Ok(e)
    }

    pub fn set_normal_ci(&mut self, alpha: f64) {
        self.ci = self.std_error.map(|se| {
            let h = normal_critical(alpha) * se;
            (self.point - h, self.point + h)
        });
    }

    pub fn with_diag(mut self, key: impl Into<String>, v: f64) -> Self {
        self.diagnostics.insert(key.into(), v);
        self
    }
}
