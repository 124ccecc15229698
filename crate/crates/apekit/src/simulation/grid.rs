use crate::distributions::ErrorDistribution;
use crate::error::{ApeError, Result};
use crate::estimators::EstimatorSpec;
use crate::numkit::mean;
use rayon::prelude::*;
use std::fmt;
use std::fmt::Write as _;

use super::dgp::{draw, true_ape, DgpSpec, Family};

/// One declarative grid: the cross product of X families, powers `M` and
/// sample sizes for a fixed outcome family and error law.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub name: String,
    pub y_family: Family,
    pub x_families: Vec<Family>,
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub error_dist: ErrorDistribution,
    pub estimators: Vec<EstimatorSpec>,
    pub reps: usize,
    pub seed: u64,
    pub oracle_n: usize,
}

impl GridConfig {
    pub fn specs(&self) -> Result<Vec<DgpSpec>> {
        let mut out = Vec::new();
        for &xf in &self.x_families {
            for &m in &self.m_values {
                for &n in &self.n_values {
                    out.push(DgpSpec::new(self.y_family, xf, m, self.error_dist, n)?);
                }
            }
        }
        Ok(out)
    }

    pub fn options(&self) -> GridOptions {
        GridOptions {
            reps: self.reps,
            base_seed: self.seed,
            oracle_n: self.oracle_n,
        }
    }

    pub fn run(&self) -> Result<SimReport> {
        let mut r = run_grid_with(&self.specs()?, &self.estimators, &self.options())?;
        r.config = self.to_string();
        Ok(r)
    }
}

fn join<T: fmt::Display>(v: &[T], sep: &str) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.name.is_empty() {
            writeln!(f, "[grid]")?;
        } else {
            writeln!(f, "[grid {}]", self.name)?;
        }
        writeln!(f, "y_family = {}", self.y_family)?;
        writeln!(f, "x_family = {}", join(&self.x_families, ","))?;
        writeln!(f, "m = {}", join(&self.m_values, ","))?;
        writeln!(f, "n = {}", join(&self.n_values, ","))?;
        writeln!(f, "error = {}", self.error_dist)?;
        writeln!(f, "estimators = {}", join(&self.estimators, "; "))?;
        writeln!(f, "reps = {}", self.reps)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "oracle_n = {}", self.oracle_n)
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, sep: char, key: &str) -> Result<Vec<T>> {
    let out: Vec<T> = v
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| ApeError::Parameter(format!("bad value `{s}` for `{key}`")))
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(ApeError::Parameter(format!("`{key}` is empty")));
    }
    Ok(out)
}

fn parse_estimators(v: &str) -> Result<Vec<EstimatorSpec>> {
    let out: Vec<EstimatorSpec> = v
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(ApeError::Parameter("`estimators` is empty".into()));
    }
    Ok(out)
}

/// `(key, value, line)` entries of one section.
type Section = Vec<(String, String, usize)>;

/// Parse `[grid name]` sections of `key = value` lines. `#` starts a
/// comment; estimators are separated by `;`. Missing keys take the desk-scale
/// defaults (M = 1, n = 1000, normal errors, 500 reps, seed 1, 10^6 oracle
/// draws) except `y_family`, `x_family` and `estimators`, which are required.
pub fn parse_grid_config(text: &str) -> Result<Vec<GridConfig>> {
    let mut out = Vec::new();
    let mut cur: Option<(String, Section)> = None;
    let finish = |name: String, kv: Section| -> Result<GridConfig> {
        let mut g = GridConfig {
            name,
            y_family: Family::Additive,
            x_families: Vec::new(),
            m_values: vec![1],
            n_values: vec![1000],
            error_dist: ErrorDistribution::standard_normal(),
            estimators: Vec::new(),
            reps: 500,
            seed: 1,
            oracle_n: 1_000_000,
        };
        let mut have_y = false;
        for (k, v, line) in kv {
            let at = |e: ApeError| ApeError::Parameter(format!("line {line}: {e}"));
            match k.as_str() {
                "y_family" => {
                    g.y_family = v.parse().map_err(at)?;
                    have_y = true;
                }
                "x_family" => g.x_families = parse_list(&v, ',', &k).map_err(at)?,
                "m" => g.m_values = parse_list(&v, ',', &k).map_err(at)?,
                "n" => g.n_values = parse_list(&v, ',', &k).map_err(at)?,
                "error" => g.error_dist = v.parse().map_err(at)?,
                "estimators" => g.estimators = parse_estimators(&v).map_err(at)?,
                "reps" => {
                    g.reps = v
                        .parse()
                        .map_err(|_| at(ApeError::Parameter(format!("bad reps `{v}`"))))?
                }
                "seed" => {
                    g.seed = v
                        .parse()
                        .map_err(|_| at(ApeError::Parameter(format!("bad seed `{v}`"))))?
                }
                "oracle_n" => {
                    g.oracle_n = v
                        .parse()
                        .map_err(|_| at(ApeError::Parameter(format!("bad oracle_n `{v}`"))))?
                }
                other => {
                    return Err(ApeError::Parameter(format!(
                        "line {line}: unknown key `{other}`"
                    )))
                }
            }
        }
        if !have_y || g.x_families.is_empty() || g.estimators.is_empty() {
            return Err(ApeError::Parameter(format!(
                "grid `{}` needs y_family, x_family and estimators",
                g.name
            )));
        }
        g.specs()?;
        Ok(g)
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            let h = h
                .strip_suffix(']')
                .ok_or_else(|| ApeError::Parameter(format!("line {}: unclosed section", i + 1)))?;
            let mut parts = h.split_whitespace();
            if parts.next() != Some("grid") {
                return Err(ApeError::Parameter(format!(
                    "line {}: unknown section `[{h}]`",
                    i + 1
                )));
            }
            if let Some((name, kv)) = cur.take() {
                out.push(finish(name, kv)?);
            }
            cur = Some((parts.collect::<Vec<_>>().join(" "), Vec::new()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ApeError::Parameter(format!("line {}: expected key = value", i + 1)))?;
        match cur.as_mut() {
            Some((_, kv)) => kv.push((k.trim().to_ascii_lowercase(), v.trim().to_string(), i + 1)),
            None => {
                return Err(ApeError::Parameter(format!(
                    "line {}: key outside a [grid] section",
                    i + 1
                )))
            }
        }
    }
    if let Some((name, kv)) = cur.take() {
        out.push(finish(name, kv)?);
    }
    if out.is_empty() {
        return Err(ApeError::Parameter("config has no [grid] section".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridOptions {
    pub reps: usize,
    pub base_seed: u64,
    pub oracle_n: usize,
}

/// One (design, estimator) cell. `sd` divides by `reps - 1`; `mse` is the
/// mean squared error, so `mse = sd^2 (reps-1)/reps + bias^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCell {
    pub y_family: Family,
    pub x_family: Family,
    pub error_dist: ErrorDistribution,
    pub m: usize,
    pub n: usize,
    pub estimator: String,
    pub true_ape: f64,
    pub true_ape_se: f64,
    pub mean: f64,
    pub sd: f64,
    pub mse: f64,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
    pub estimates: Vec<f64>,
}

impl SimCell {
    pub fn bias(&self) -> f64 {
        self.mean - self.true_ape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub cells: Vec<SimCell>,
    pub reps: usize,
    pub base_seed: u64,
    pub oracle_n: usize,
    /// Resolved configuration text, echoed into every output.
    pub config: String,
}

fn same_design(a: &DgpSpec, b: &DgpSpec) -> bool {
    a.y_family == b.y_family
        && a.x_family == b.x_family
        && a.m == b.m
        && a.error_dist == b.error_dist
}

/// Replication `rep` draws one dataset from seed `base_seed + rep`, and every
/// estimator runs on that same draw with the same seed. Truths come from the
/// oracle, seeded with `base_seed`, once per distinct design.
pub fn run_grid(
    specs: &[DgpSpec],
    estimators: &[EstimatorSpec],
    reps: usize,
    base_seed: u64,
) -> Result<SimReport> {
    run_grid_with(
        specs,
        estimators,
        &GridOptions {
            reps,
            base_seed,
            oracle_n: 1_000_000,
        },
    )
}

pub fn run_grid_with(
    specs: &[DgpSpec],
    estimators: &[EstimatorSpec],
    opts: &GridOptions,
) -> Result<SimReport> {
    if opts.reps < 2 {
        return Err(ApeError::Parameter(format!(
            "reps must be >= 2, got {}",
            opts.reps
        )));
    }
    if specs.is_empty() || estimators.is_empty() {
        return Err(ApeError::Parameter(
            "grid needs at least one design and one estimator".into(),
        ));
    }
    for s in specs {
        s.validate()?;
    }
    let mut truths: Vec<(DgpSpec, f64, f64)> = Vec::new();
    for s in specs {
        if !truths.iter().any(|t| same_design(&t.0, s)) {
            let t = true_ape(s, opts.oracle_n, opts.base_seed)?;
            truths.push((s.clone(), t.value, t.se));
        }
    }
    let work: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..opts.reps).map(move |r| (s, r)))
        .collect();
    let results: Vec<Vec<Option<f64>>> = work
        .par_iter()
        .map(|&(s, r)| {
            let seed = opts.base_seed.wrapping_add(r as u64);
            match draw(&specs[s], seed) {
                Ok(d) => estimators
                    .iter()
                    .map(|e| {
                        e.run(&d.dataset, seed)
                            .ok()
                            .map(|a| a.point)
                            .filter(|v| v.is_finite())
                    })
                    .collect(),
                Err(_) => vec![None; estimators.len()],
            }
        })
        .collect();
    let mut cells = Vec::new();
    for (si, s) in specs.iter().enumerate() {
        let t = truths.iter().find(|t| same_design(&t.0, s)).unwrap();
        for (ei, e) in estimators.iter().enumerate() {
            let est: Vec<f64> = (0..opts.reps)
                .filter_map(|r| results[si * opts.reps + r][ei])
                .collect();
            let k = est.len();
            let (mu, sd, mse) = if k == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mu = mean(&est);
                let ss = est.iter().map(|v| (v - mu).powi(2)).sum::<f64>();
                let sd = if k > 1 {
                    (ss / (k - 1) as f64).sqrt()
                } else {
                    f64::NAN
                };
                (
                    mu,
                    sd,
                    est.iter().map(|v| (v - t.1).powi(2)).sum::<f64>() / k as f64,
                )
            };
            cells.push(SimCell {
                y_family: s.y_family,
                x_family: s.x_family,
                error_dist: s.error_dist,
                m: s.m,
                n: s.n,
                estimator: e.to_string(),
                true_ape: t.1,
                true_ape_se: t.2,
                mean: mu,
                sd,
                mse,
                reps: k,
                failures: opts.reps - k,
                estimates: est,
            });
        }
    }
    Ok(SimReport {
        cells,
        reps: opts.reps,
        base_seed: opts.base_seed,
        oracle_n: opts.oracle_n,
        config: String::new(),
    })
}

/// Run several grids and concatenate their cells; the config echo lists
/// every grid.
pub fn grid_sweep(grids: &[GridConfig]) -> Result<Vec<SimReport>> {
    grids.iter().map(GridConfig::run).collect()
}

fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

impl SimReport {
    pub fn cell(&self, estimator: &str, m: usize, n: usize) -> Option<&SimCell> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.m == m && c.n == n)
    }

    /// CSV with the configuration as leading `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "y_family",
            "x_family",
            "error",
            "M",
            "n",
            "estimator",
            "true_ape",
            "true_ape_se",
            "mean",
            "sd",
            "mse",
            "reps",
            "failures",
        ])
        .expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.y_family.to_string(),
                c.x_family.to_string(),
                c.error_dist.to_string(),
                c.m.to_string(),
                c.n.to_string(),
                c.estimator.clone(),
                c.true_ape.to_string(),
                c.true_ape_se.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.mse.to_string(),
                c.reps.to_string(),
                c.failures.to_string(),
            ])
            .expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        format!("{}{body}", comment_block(&self.echo()))
    }

    fn echo(&self) -> String {
        let mut s = self.config.clone();
        if !s.is_empty() && !s.ends_with('\n') {
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "resolved: reps={} base_seed={} oracle_n={}",
            self.reps, self.base_seed, self.oracle_n
        );
        s
    }

    /// Blocks per design, estimators down the side and sample sizes across,
    /// each entry `mean (sd) [mse]`.
    pub fn to_text(&self) -> String {
        let mut out = comment_block(&self.echo());
        let mut designs: Vec<(Family, Family, String, usize)> = Vec::new();
        for c in &self.cells {
            let key = (c.y_family, c.x_family, c.error_dist.to_string(), c.m);
            if !designs.contains(&key) {
                designs.push(key);
            }
        }
        for (yf, xf, ed, m) in designs {
            let cells: Vec<&SimCell> = self
                .cells
                .iter()
                .filter(|c| {
                    c.y_family == yf
                        && c.x_family == xf
                        && c.error_dist.to_string() == ed
                        && c.m == m
                })
                .collect();
            let mut ns: Vec<usize> = Vec::new();
            let mut ests: Vec<&str> = Vec::new();
            for c in &cells {
                if !ns.contains(&c.n) {
                    ns.push(c.n);
                }
                if !ests.contains(&c.estimator.as_str()) {
                    ests.push(&c.estimator);
                }
            }
            let _ = writeln!(
                out,
                "\n{yf} Y / {xf} X, nu ~ {ed}, M={m} with APE={:.4}",
                cells[0].true_ape
            );
            let wlabel = ests.iter().map(|e| e.len()).max().unwrap_or(9).max(9);
            let _ = write!(out, "{:wlabel$}", "estimator");
            for n in &ns {
                let _ = write!(out, "  {:>28}", format!("N={n}"));
            }
            out.push('\n');
            for e in &ests {
                let _ = write!(out, "{e:wlabel$}");
                for n in &ns {
                    let entry = match cells.iter().find(|c| c.estimator == *e && c.n == *n) {
                        Some(c) if c.reps > 0 => {
                            let fail = if c.failures > 0 {
                                format!(" !{}", c.failures)
                            } else {
                                String::new()
                            };
                            format!("{:.3} ({:.3}) [{:.3}]{fail}", c.mean, c.sd, c.mse)
                        }
                        Some(c) => format!("failed x{}", c.failures),
                        None => "-".into(),
                    };
                    let _ = write!(out, "  {entry:>28}");
                }
                out.push('\n');
            }
        }
        out
    }
}
